import numpy as np
import pytest

from helpers import random_noise_model

from ddk.covariance import sigma_z
from ddk.sigdata import Trajectory
from ddk.tasks import (
    ControlObjective,
    TaskKind,
    build_control,
    build_prediction,
    build_smoothing,
    control_cost,
)
from ddk.uncertainty import GAUSSIAN, NoiseModel


def make_traj(rng, length, n_u=1, n_y=1):
    return Trajectory(u=rng.standard_normal((length, n_u)),
                      y=rng.standard_normal((length, n_y)))


class TestBuildSmoothing:
    def test_iid_noise_block_diag_scale(self):
        rng = np.random.default_rng(0)
        model = NoiseModel.iid(GAUSSIAN, 1.0, 2.0)
        task = build_smoothing(make_traj(rng, 5), model)
        np.testing.assert_allclose(task.sigma_eps,
                                   np.kron(np.eye(5), np.diag([1.0, 2.0])))

    def test_zeta_is_stacked_measurements(self):
        rng = np.random.default_rng(1)
        traj = make_traj(rng, 4)
        task = build_smoothing(traj, NoiseModel.iid(GAUSSIAN, 1.0, 1.0))
        np.testing.assert_array_equal(task.zeta, traj.window(0, 4))
        np.testing.assert_array_equal(task.phi, np.eye(8))

    def test_benchmark_dimensions(self):
        rng = np.random.default_rng(2)
        task = build_smoothing(make_traj(rng, 40), NoiseModel.iid(GAUSSIAN, 1e-2, 1e-2))
        assert task.p == 80
        assert task.kind is TaskKind.SMOOTHING


class TestBuildPrediction:
    def test_dimensions_benchmark(self):
        rng = np.random.default_rng(3)
        model = NoiseModel.iid(GAUSSIAN, 1e-2, 1e-2)
        task = build_prediction(make_traj(rng, 10), rng.standard_normal((30, 1)),
                                model, lag_check=10)
        assert task.p == 20 + 30
        assert task.horizon == 40

    def test_selection_semantics(self):
        rng = np.random.default_rng(4)
        model = NoiseModel.iid(GAUSSIAN, 1.0, 1.0)
        initial = make_traj(rng, 3)
        future_u = rng.standard_normal((2, 1))
        task = build_prediction(initial, future_u, model, lag_check=1)
        z0 = rng.standard_normal(task.nl)
        picked = task.phi @ z0
        z_steps = z0.reshape(5, 2)
        expect = np.concatenate([z0[:6], z_steps[3:, 0]])
        np.testing.assert_array_equal(picked, expect)

    def test_scale_consistent_with_selection(self):
        rng = np.random.default_rng(5)
        model = random_noise_model(rng)
        initial = make_traj(rng, 4)
        task = build_prediction(initial, rng.standard_normal((3, 1)), model, 2)
        full = sigma_z(model, 7)
        np.testing.assert_allclose(task.sigma_eps, task.phi @ full @ task.phi.T)

    def test_no_actuation_noise_gives_singular_rows(self):
        rng = np.random.default_rng(6)
        model = NoiseModel.iid(GAUSSIAN, 0.0, 1.0)
        task = build_prediction(make_traj(rng, 3), rng.standard_normal((2, 1)),
                                model, lag_check=1)
        future_rows = task.layout.future_input_rows
        assert np.all(task.sigma_eps[future_rows] == 0.0)
        assert np.all(task.sigma_eps[:, future_rows] == 0.0)

    def test_short_past_rejected(self):
        rng = np.random.default_rng(7)
        model = NoiseModel.iid(GAUSSIAN, 1.0, 1.0)
        with pytest.raises(ValueError):
            build_prediction(make_traj(rng, 2), rng.standard_normal((2, 1)),
                             model, lag_check=3)

    def test_zero_future_matches_smoothing(self):
        rng = np.random.default_rng(8)
        model = random_noise_model(rng)
        traj = make_traj(rng, 5)
        pred = build_prediction(traj, np.zeros((0, 1)), model, lag_check=2)
        smooth = build_smoothing(traj, model)
        np.testing.assert_array_equal(pred.zeta, smooth.zeta)
        np.testing.assert_allclose(pred.phi, smooth.phi)
        np.testing.assert_allclose(pred.sigma_eps, smooth.sigma_eps)


def benchmark_objective(steps=(10, 10, 10), q=5.0, r=0.5, gain=2.0):
    y_ref = np.concatenate([
        np.full(s, v) for s, v in zip(steps, [1.0, -1.0, 1.0])
    ])[:, None]
    return ControlObjective(q=[[q]], r=[[r]], u_ref=y_ref / gain, y_ref=y_ref)


class TestBuildControl:
    def test_design_tail_blocks(self):
        rng = np.random.default_rng(9)
        model = NoiseModel.iid(GAUSSIAN, 1e-2, 1e-2)
        obj = benchmark_objective()
        task = build_control(make_traj(rng, 10), obj, model, lag_check=2)
        n = 2
        tail = task.sigma_eps[n * 10 :, n * 10 :]
        np.testing.assert_allclose(tail, np.kron(np.eye(30), np.diag([2.0, 0.2])))
        # design tail is uncorrelated with the measured past
        np.testing.assert_array_equal(task.sigma_eps[: n * 10, n * 10 :], 0.0)

    def test_zeta_tail_alternates_in_blocks(self):
        rng = np.random.default_rng(10)
        model = NoiseModel.iid(GAUSSIAN, 1e-2, 1e-2)
        task = build_control(make_traj(rng, 10), benchmark_objective(), model, 2)
        y_tail = task.zeta[task.layout.future_output_rows]
        np.testing.assert_array_equal(y_tail[:10], np.ones(10))
        np.testing.assert_array_equal(y_tail[10:20], -np.ones(10))
        np.testing.assert_array_equal(y_tail[20:], np.ones(10))

    def test_uniform_scaling_inverts_tail(self):
        rng = np.random.default_rng(11)
        model = NoiseModel.iid(GAUSSIAN, 1e-2, 1e-2)
        traj = make_traj(rng, 10)
        base = build_control(traj, benchmark_objective(q=5.0, r=0.5), model, 2)
        scaled = build_control(traj, benchmark_objective(q=15.0, r=1.5), model, 2)
        n, L0 = 2, 10
        np.testing.assert_allclose(scaled.sigma_eps[n * L0 :, n * L0 :],
                                   base.sigma_eps[n * L0 :, n * L0 :] / 3.0)

    def test_reference_length_mismatch(self):
        with pytest.raises(ValueError):
            ControlObjective(q=[[1.0]], r=[[1.0]], u_ref=np.zeros((3, 1)),
                             y_ref=np.zeros((4, 1)))


class TestControlCost:
    def test_zero_on_exact_tracking(self):
        obj = benchmark_objective()
        z = np.zeros(2 * 40)
        tail = np.hstack([obj.u_ref, obj.y_ref]).ravel()
        z[20:] = tail
        assert control_cost(z, obj, 10) == 0.0

    def test_single_step_output_error(self):
        obj = ControlObjective(q=[[5.0]], r=[[0.5]], u_ref=np.zeros((1, 1)),
                               y_ref=np.zeros((1, 1)))
        z = np.array([0.0, 2.0])
        assert abs(control_cost(z, obj, 0) - 2.0) < 1e-14

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(12)
        obj = benchmark_objective()
        z = rng.standard_normal(2 * 40)
        got = control_cost(z, obj, 10)
        total = 0.0
        for t in range(30):
            u = z[20 + 2 * t]
            y = z[20 + 2 * t + 1]
            total += (0.5 / 5.0) * (u - obj.u_ref[t, 0]) ** 2 \
                + (y - obj.y_ref[t, 0]) ** 2
        assert abs(got - np.sqrt(total / 30.0)) < 1e-12

    def test_non_isotropic_weights_rejected(self):
        obj = ControlObjective(q=np.diag([1.0, 2.0]), r=[[1.0]],
                               u_ref=np.zeros((2, 1)), y_ref=np.zeros((2, 2)))
        with pytest.raises(ValueError):
            control_cost(np.zeros(3 * 4), obj, 2)


class TestRowSelection:
    def test_phi_recovers_observed_entries(self):
        rng = np.random.default_rng(13)
        model = random_noise_model(rng)
        initial = make_traj(rng, 4)
        task = build_prediction(initial, rng.standard_normal((3, 1)), model, 1)
        for _ in range(100):
            z0 = rng.standard_normal(task.nl)
            picked = task.phi @ z0
            np.testing.assert_array_equal(
                picked[task.layout.past_input_rows], z0[task.layout.past_input_z])
            np.testing.assert_array_equal(
                picked[task.layout.past_output_rows], z0[task.layout.past_output_z])
            np.testing.assert_array_equal(
                picked[task.layout.future_input_rows], z0[task.layout.future_input_z])
