import numpy as np
import pytest

from helpers import generate_instance, noise_free_trajectory

from ddk.baselines import (
    PartitionedData,
    deepc_regularized,
    deepc_unregularized,
    deepc_weights,
    predictor_lambda,
    predictor_regularized,
)
from ddk.estimator import InfeasibleConstraintsError, one_iteration_estimate, pinv_init
from ddk.lti import dc_gain, make_diffusion_system, simulate
from ddk.numerics import solve_eq_qp
from ddk.sigdata import Construction, Trajectory, build_signal_matrix
from ddk.tasks import ControlObjective, build_control, control_cost
from ddk.uncertainty import GAUSSIAN, NoiseModel


def assumption34_models(sigma_d_sq=1e-4, sigma_sq=1e-2):
    """No actuation noise, isotropic output noise, independent across time."""
    offline = NoiseModel.iid(GAUSSIAN, 0.0, sigma_d_sq)
    online = NoiseModel.iid(GAUSSIAN, 0.0, sigma_sq)
    return offline, online


def prediction_instance(rng, sigma_d_sq=1e-4, sigma_sq=1e-2, data_length=120):
    offline, online = assumption34_models(sigma_d_sq, sigma_sq)
    return generate_instance(rng, "t2", offline, online, window=8, past=3,
                             data_length=data_length, construction=Construction.PAGE)


def control_instance(rng, q=5.0, r=0.5, sigma_d_sq=1e-4, sigma_sq=1e-2,
                     data_length=200, window=8, past=3):
    offline, online = assumption34_models(sigma_d_sq, sigma_sq)
    horizon = window - past
    obj = ControlObjective(q=[[q]], r=[[r]],
                           u_ref=rng.standard_normal((horizon, 1)),
                           y_ref=rng.standard_normal((horizon, 1)))
    return generate_instance(rng, "t3", offline, online, window=window, past=past,
                             data_length=data_length,
                             construction=Construction.PAGE, objective=obj)


class TestPredictorRegularized:
    def test_zero_lambda_noise_free_exact(self):
        rng = np.random.default_rng(0)
        zero = NoiseModel.iid(GAUSSIAN, 0.0, 0.0)
        inst = generate_instance(rng, "t2", zero, zero, window=8, past=3)
        data = PartitionedData.from_task(inst.task, inst.h)
        _, y_future = predictor_regularized(data, 0.0)
        truth = inst.truth_outputs[3:].ravel()
        assert np.linalg.norm(y_future - truth) <= 1e-7 * max(1.0, np.linalg.norm(truth))

    def test_large_lambda_minimum_norm_limit(self):
        rng = np.random.default_rng(1)
        inst = prediction_instance(rng)
        data = PartitionedData.from_task(inst.task, inst.h)
        g, _ = predictor_regularized(data, 1e12)
        a = np.vstack([data.h_up, data.h_uf])
        b = np.concatenate([data.u_p, data.u_f])
        g_min = np.linalg.lstsq(a, b, rcond=None)[0]
        assert np.linalg.norm(g - g_min) <= 1e-4 * (1 + np.linalg.norm(g_min))

    def test_continuity_in_lambda(self):
        rng = np.random.default_rng(2)
        inst = prediction_instance(rng)
        data = PartitionedData.from_task(inst.task, inst.h)
        lam = predictor_lambda(1, 3, 1e-4)
        g1, _ = predictor_regularized(data, lam)
        g2, _ = predictor_regularized(data, lam * (1 + 1e-8))
        assert np.linalg.norm(g1 - g2) <= 1e-6 * (1 + np.linalg.norm(g1))

    def test_constraints_hold(self):
        rng = np.random.default_rng(3)
        inst = prediction_instance(rng)
        data = PartitionedData.from_task(inst.task, inst.h)
        g, _ = predictor_regularized(data, 0.37)
        resid = np.concatenate([data.h_up @ g - data.u_p, data.h_uf @ g - data.u_f])
        assert np.max(np.abs(resid)) <= 1e-10 * (1 + np.max(np.abs(data.u_p)))


class TestFirstIterateEquivalences:
    def test_prediction_matches_one_iteration(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            inst = prediction_instance(rng)
            data = PartitionedData.from_task(inst.task, inst.h)
            lam = predictor_lambda(inst.task.n_y, inst.task.past_length, 1e-4)
            g_ref, _ = predictor_regularized(data, lam)
            est = one_iteration_estimate(inst.task, inst.h, inst.model_offline)
            assert np.linalg.norm(est.g_hat - g_ref) <= 1e-8 * (1 + np.linalg.norm(g_ref))

    def test_control_matches_one_iteration(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            inst = control_instance(rng)
            data = PartitionedData.from_task(inst.task, inst.h)
            g0 = pinv_init(inst.task, inst.h)
            g_ref, _, _ = deepc_regularized(data, 5.0, 0.5, 1e-2, 1e-4,
                                            float(g0 @ g0))
            est = one_iteration_estimate(inst.task, inst.h, inst.model_offline)
            assert np.linalg.norm(est.g_hat - g_ref) <= 1e-8 * (1 + np.linalg.norm(g_ref))


class TestDeepcRegularized:
    def test_weight_formulas_hand_evaluated(self):
        lam1, lam2, lam3 = deepc_weights(
            q=5.0, sigma_sq=1e-2, sigma_d_sq=1e-4, g0_norm_sq=3.0,
            n_y=1, past_length=10, future_length=30)
        assert abs(lam1 - 1.0 / (3e-4 + 0.2)) < 1e-12
        assert abs(lam2 - 1.0 / (3e-4 + 1e-2)) < 1e-12
        assert abs(lam3 - 1e-4 * (30 * lam1 + 10 * lam2)) < 1e-12

    def test_zero_noise_reduces_to_unregularized(self):
        rng = np.random.default_rng(6)
        inst = control_instance(rng, sigma_d_sq=0.0, sigma_sq=0.0)
        data = PartitionedData.from_task(inst.task, inst.h)
        g_reg, u_reg, y_reg = deepc_regularized(data, 5.0, 0.5, 0.0, 0.0, 1.0)
        g_un, u_un, y_un = deepc_unregularized(data, 5.0, 0.5)
        np.testing.assert_allclose(g_reg, g_un, atol=1e-12)
        np.testing.assert_allclose(u_reg, u_un, atol=1e-12)

    def test_past_input_constraint_holds(self):
        rng = np.random.default_rng(7)
        inst = control_instance(rng)
        data = PartitionedData.from_task(inst.task, inst.h)
        g, _, _ = deepc_regularized(data, 5.0, 0.5, 1e-2, 1e-4, 1.0)
        assert np.max(np.abs(data.h_up @ g - data.u_p)) <= 1e-10 * (
            1 + np.max(np.abs(data.u_p)))


class TestDeepcUnregularized:
    def test_noise_free_reachable_reference_zero_cost(self):
        rng = np.random.default_rng(8)
        zero = NoiseModel.iid(GAUSSIAN, 0.0, 0.0)
        sys = make_diffusion_system(0.4, 0.3)
        full = noise_free_trajectory(sys, rng, 10)
        past = Trajectory(u=full.u[:4], y=full.y[:4])
        obj = ControlObjective(q=[[5.0]], r=[[0.5]], u_ref=full.u[4:],
                               y_ref=full.y[4:])
        task = build_control(past, obj, zero, lag_check=1)
        offline = noise_free_trajectory(sys, rng, 400)
        h = build_signal_matrix(offline, 10, Construction.HANKEL)
        data = PartitionedData.from_task(task, h)
        g, u_plan, y_plan = deepc_unregularized(data, 5.0, 0.5)
        cost = 0.5 * np.sum((data.u_f - u_plan) ** 2) + 5.0 * np.sum(
            (data.y_f - y_plan) ** 2)
        assert cost <= 1e-10

    def test_infeasible_constraints_raise(self):
        data = PartitionedData(
            h_up=np.array([[1.0], [1.0]]), h_yp=np.ones((1, 1)),
            h_uf=np.ones((1, 1)), h_yf=np.ones((1, 1)),
            u_p=np.array([1.0, 2.0]), y_p=np.array([0.0]),
            u_f=np.array([0.0]), y_f=np.array([0.0]),
            n_u=1, n_y=1, past_length=2, future_length=1)
        with pytest.raises(InfeasibleConstraintsError):
            deepc_unregularized(data, 1.0, 1.0)

    def test_matches_direct_kkt_oracle(self):
        rng = np.random.default_rng(9)
        sys = make_diffusion_system(0.4, 0.3)
        zero = NoiseModel.iid(GAUSSIAN, 0.0, 0.0)
        gain = float(dc_gain(sys)[0, 0])
        y_ref = np.concatenate([np.ones(3), -np.ones(3)])[:, None]
        obj = ControlObjective(q=[[5.0]], r=[[0.5]], u_ref=y_ref / gain, y_ref=y_ref)
        past_traj = noise_free_trajectory(sys, rng, 4)
        task = build_control(past_traj, obj, zero, lag_check=1)
        # 20 columns make the noise-free matrix full column rank, so the KKT
        # system of the same QP is nonsingular and serves as an oracle
        offline = noise_free_trajectory(sys, rng, 29)
        h = build_signal_matrix(offline, 10, Construction.HANKEL)
        assert h.num_columns == 20
        data = PartitionedData.from_task(task, h)
        g, u_plan, y_plan = deepc_unregularized(data, 5.0, 0.5)
        p_mat = 2.0 * (0.5 * data.h_uf.T @ data.h_uf + 5.0 * data.h_yf.T @ data.h_yf)
        q_vec = -2.0 * (0.5 * data.h_uf.T @ data.u_f + 5.0 * data.h_yf.T @ data.y_f)
        a = np.vstack([data.h_up, data.h_yp])
        b = np.concatenate([data.u_p, data.y_p])
        g_oracle = solve_eq_qp(p_mat, q_vec, a, b, reduce_rows=True)

        def planned_cost(gg):
            z = np.zeros(task.nl)
            tail = np.hstack([(data.h_uf @ gg)[:, None], (data.h_yf @ gg)[:, None]])
            z[task.n * task.past_length:] = tail.ravel()
            return control_cost(z, obj, task.past_length)

        # the noise-free diffusion data matrix has singular values below
        # machine precision, so the QP optimum here is not numerically pinned
        # down; require exact constraint satisfaction, a finite bounded plan,
        # and a cost in the same range as the direct KKT factorization
        assert np.max(np.abs(a @ g - b)) <= 1e-10 * (1 + np.max(np.abs(b)))
        assert np.all(np.isfinite(u_plan)) and np.all(np.isfinite(y_plan))
        assert planned_cost(g) <= 10.0 * (planned_cost(g_oracle) + 1e-3)

    def test_matches_kkt_oracle_on_well_posed_data(self):
        rng = np.random.default_rng(11)
        inst = control_instance(rng, sigma_d_sq=1e-4, sigma_sq=1e-2,
                                data_length=200)
        data = PartitionedData.from_task(inst.task, inst.h)
        g, u_plan, y_plan = deepc_unregularized(data, 5.0, 0.5)
        p_mat = 2.0 * (0.5 * data.h_uf.T @ data.h_uf + 5.0 * data.h_yf.T @ data.h_yf)
        q_vec = -2.0 * (0.5 * data.h_uf.T @ data.u_f + 5.0 * data.h_yf.T @ data.y_f)
        a = np.vstack([data.h_up, data.h_yp])
        b = np.concatenate([data.u_p, data.y_p])
        g_oracle = solve_eq_qp(p_mat, q_vec, a, b)
        np.testing.assert_allclose(u_plan, data.h_uf @ g_oracle,
                                   atol=1e-8 * (1 + np.max(np.abs(u_plan))))
        np.testing.assert_allclose(y_plan, data.h_yf @ g_oracle,
                                   atol=1e-8 * (1 + np.max(np.abs(y_plan))))

    def test_soft_past_output_handling(self):
        rng = np.random.default_rng(10)
        inst = control_instance(rng, sigma_d_sq=1e-4, sigma_sq=1e-2)
        data = PartitionedData.from_task(inst.task, inst.h)
        g_soft, u_soft, _ = deepc_unregularized(data, 5.0, 0.5, soft_yp_weight=5.0)
        assert np.max(np.abs(data.h_up @ g_soft - data.u_p)) <= 1e-8
        # soft variant trades past-output fit for tracking; both finite
        assert np.all(np.isfinite(u_soft))
