"""Shared construction helpers for the test suite."""

from dataclasses import dataclass

import numpy as np

from ddk.lti import LtiSystem, lag, random_system, simulate
from ddk.sigdata import Construction, SignalMatrix, Trajectory, build_signal_matrix
from ddk.tasks import ControlObjective, TaskSpec, build_control, build_prediction, \
    build_smoothing
from ddk.uncertainty import GAUSSIAN, NoiseModel, sample_stationary_process


def random_spd(rng, m, jitter=0.2):
    a = rng.standard_normal((m, m))
    return a @ a.T + jitter * np.eye(m)


def random_noise_model(rng, n_u=1, n_y=1, allow_correlated=True, family=GAUSSIAN):
    """Random stationary noise model with a PSD stacked window scale.

    Correlated draws use geometric decay, which keeps every window scale a
    principal submatrix of a positive definite kernel; slow decays are left
    untruncated within the horizon so truncation cannot break that.
    """
    w0 = random_spd(rng, n_u, jitter=0.1) * 10.0 ** rng.uniform(-2, 0)
    v0 = random_spd(rng, n_y, jitter=0.1) * 10.0 ** rng.uniform(-2, 0)
    if rng.random() < 0.5 and n_u == 1:
        w0 = np.zeros((1, 1))
    if not allow_correlated or rng.random() < 0.4:
        return NoiseModel.iid(family, w0, v0)
    if rng.random() < 0.5:
        rho = float(rng.uniform(0.05, 0.3))
        horizon = int(rng.integers(1, 4))
    else:
        rho = float(rng.uniform(0.3, 0.9))
        horizon = 64
    return NoiseModel.exp_decay(family, w0, v0, rho=rho, decay_horizon=horizon)


def noise_free_trajectory(sys, rng, length, burn=None):
    burn = 5 * sys.n_x if burn is None else burn
    u = rng.standard_normal((burn + length, sys.n_u))
    y = simulate(sys, u)
    return Trajectory(u=u[burn:], y=y[burn:])


def identifiable_system_and_data(rng, n_x=2, n_u=1, n_y=1, length=80):
    sys = random_system(n_x, n_u, n_y, rng)
    return sys, noise_free_trajectory(sys, rng, length)


@dataclass
class Instance:
    """One complete simulated task instance for estimator-level tests."""

    system: LtiSystem
    task: TaskSpec
    h: SignalMatrix
    model_offline: NoiseModel
    model_online: NoiseModel
    truth_window: np.ndarray          # stacked true (u, y) over the window
    truth_outputs: np.ndarray         # true outputs, one row per step
    control_state: np.ndarray | None  # true plant state entering the design tail


def generate_instance(
    rng,
    kind: str,
    model_offline: NoiseModel,
    model_online: NoiseModel,
    system: LtiSystem | None = None,
    n_x: int = 2,
    window: int = 8,
    past: int = 3,
    data_length: int = 60,
    construction: Construction = Construction.HANKEL,
    objective: ControlObjective | None = None,
) -> Instance:
    """Simulate offline data and one online window, then build the task."""
    n_u, n_y = model_offline.n_u, model_offline.n_y
    if system is None:
        system = random_system(n_x, n_u, n_y, rng)
    plant_lag = lag(system)
    u0, y0 = (t := noise_free_trajectory(system, rng, data_length)).u, t.y
    noise = sample_stationary_process(model_offline, data_length, rng)
    offline = Trajectory(u=u0 + noise[:, :n_u], y=y0 + noise[:, n_u:])
    h = build_signal_matrix(offline, window, construction)

    needed = past if kind == "t3" else window
    burn = 5 * system.n_x
    u_true = rng.standard_normal((burn + needed, n_u))
    y_all, x_end = simulate(system, u_true, return_state=True)
    u_true, y_true = u_true[burn:], y_all[burn:]
    control_state = x_end if kind == "t3" else None
    noise_on = sample_stationary_process(model_online, window, rng)[:needed]
    measured = Trajectory(u=u_true + noise_on[:, :n_u], y=y_true + noise_on[:, n_u:])
    truth = Trajectory(u=u_true, y=y_true)

    if kind == "t1":
        task = build_smoothing(measured, model_online)
    elif kind == "t2":
        initial = Trajectory(u=measured.u[:past], y=measured.y[:past])
        task = build_prediction(initial, measured.u[past:], model_online, plant_lag)
    elif kind == "t3":
        assert objective is not None
        task = build_control(measured, objective, model_online, plant_lag)
    else:
        raise ValueError(kind)
    return Instance(
        system=system, task=task, h=h, model_offline=model_offline,
        model_online=model_online,
        truth_window=truth.window(0, needed) if kind != "t3" else truth.window(0, past),
        truth_outputs=y_true, control_state=control_state,
    )


def sigma_g_double_sum_oracle(g, model, offsets, window):
    """Direct evaluation of the prior-scale double sum over column pairs."""
    g = np.asarray(g, dtype=float)
    n = model.n
    out = np.zeros((n * window, n * window))
    for i in range(window):
        for j in range(window):
            acc = np.zeros((n, n))
            for k, t_k in enumerate(offsets):
                for m, t_m in enumerate(offsets):
                    lag = abs((t_k + i) - (t_m + j))
                    acc += g[k] * g[m] * model.sigma_nu(lag)
            out[i * n : (i + 1) * n, j * n : (j + 1) * n] = acc
    return out
