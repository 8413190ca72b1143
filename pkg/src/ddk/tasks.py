"""Encodings of smoothing, prediction, and optimal control as linear
observations zeta = Phi z + eps of one stacked signal window, with the scale
of eps carrying measurement noise and design requirements."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .covariance import sigma_z
from .sigdata import Trajectory
from .uncertainty import EllipticalFamily, NoiseModel


class TaskKind(Enum):
    SMOOTHING = "smoothing"
    PREDICTION = "prediction"
    CONTROL = "control"


@dataclass(frozen=True)
class ControlObjective:
    """Quadratic tracking cost with input/output references over the design tail."""

    q: np.ndarray
    r: np.ndarray
    u_ref: np.ndarray
    y_ref: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        r = np.atleast_2d(np.asarray(self.r, dtype=float))
        u_ref = np.atleast_2d(np.asarray(self.u_ref, dtype=float))
        y_ref = np.atleast_2d(np.asarray(self.y_ref, dtype=float))
        for name, m in (("q", q), ("r", r)):
            if m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.linalg.eigvalsh(0.5 * (m + m.T))[0] <= 0:
                raise ValueError(f"{name} must be positive definite")
        if u_ref.shape[0] != y_ref.shape[0]:
            raise ValueError("u_ref and y_ref must cover the same number of steps")
        if u_ref.shape[1] != r.shape[0] or y_ref.shape[1] != q.shape[0]:
            raise ValueError("reference channel counts inconsistent with q/r")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "u_ref", u_ref)
        object.__setattr__(self, "y_ref", y_ref)

    @property
    def horizon(self) -> int:
        return self.u_ref.shape[0]


@dataclass(frozen=True)
class TaskLayout:
    """Index maps between (time, channel) groups and rows of zeta / entries of z.

    ``*_rows`` index into zeta (and rows of Phi); ``*_z`` index into the
    stacked window. Groups absent from zeta (future outputs in prediction)
    have empty row arrays.
    """

    past_input_rows: np.ndarray
    past_output_rows: np.ndarray
    future_input_rows: np.ndarray
    future_output_rows: np.ndarray
    past_input_z: np.ndarray
    past_output_z: np.ndarray
    future_input_z: np.ndarray
    future_output_z: np.ndarray


def _z_groups(n_u: int, n_y: int, horizon: int, split: int):
    n = n_u + n_y
    u_idx = np.concatenate(
        [t * n + np.arange(n_u) for t in range(horizon)]
    ) if horizon else np.zeros(0, dtype=int)
    y_idx = np.concatenate(
        [t * n + n_u + np.arange(n_y) for t in range(horizon)]
    ) if horizon else np.zeros(0, dtype=int)
    past_u = u_idx[: split * n_u]
    future_u = u_idx[split * n_u :]
    past_y = y_idx[: split * n_y]
    future_y = y_idx[split * n_y :]
    return past_u, past_y, future_u, future_y


@dataclass(frozen=True)
class TaskSpec:
    """One task instance: observation map, observed vector, and its scale."""

    kind: TaskKind
    phi: np.ndarray
    zeta: np.ndarray
    sigma_eps: np.ndarray
    family: EllipticalFamily
    n_u: int
    n_y: int
    horizon: int
    past_length: int
    layout: TaskLayout
    objective: Optional[ControlObjective] = None

    @property
    def n(self) -> int:
        return self.n_u + self.n_y

    @property
    def p(self) -> int:
        return self.zeta.shape[0]

    @property
    def nl(self) -> int:
        return self.n * self.horizon

    @property
    def future_length(self) -> int:
        return self.horizon - self.past_length

    def future_inputs_from(self, z: np.ndarray) -> np.ndarray:
        """Planned inputs over the design tail, one row per step."""
        return z[self.layout.future_input_z].reshape(self.future_length, self.n_u)

    def future_outputs_from(self, z: np.ndarray) -> np.ndarray:
        return z[self.layout.future_output_z].reshape(self.future_length, self.n_y)


def build_smoothing(measured: Trajectory, model: NoiseModel) -> TaskSpec:
    """Denoising task: the whole window is observed through its noise scale."""
    L = measured.length
    n_u, n_y = measured.n_u, measured.n_y
    if (n_u, n_y) != (model.n_u, model.n_y):
        raise ValueError("trajectory channels inconsistent with the noise model")
    n = n_u + n_y
    zeta = measured.window(0, L)
    past_u, past_y, fut_u, fut_y = _z_groups(n_u, n_y, L, L)
    layout = TaskLayout(
        past_input_rows=past_u, past_output_rows=past_y,
        future_input_rows=fut_u, future_output_rows=fut_y,
        past_input_z=past_u, past_output_z=past_y,
        future_input_z=fut_u, future_output_z=fut_y,
    )
    return TaskSpec(
        kind=TaskKind.SMOOTHING,
        phi=np.eye(n * L),
        zeta=zeta,
        sigma_eps=sigma_z(model, L),
        family=model.family,
        n_u=n_u, n_y=n_y, horizon=L, past_length=L,
        layout=layout,
    )


def build_prediction(
    initial: Trajectory,
    future_inputs: np.ndarray,
    model: NoiseModel,
    lag_check: int,
) -> TaskSpec:
    """Prediction task: initial window plus future inputs are observed.

    ``lag_check`` is the (known or bounded) lag of the plant; the initial
    window must be at least that long for the past to pin down the state.
    """
    L0 = initial.length
    if L0 < lag_check:
        raise ValueError(f"initial window of length {L0} is shorter than the lag {lag_check}")
    n_u, n_y = initial.n_u, initial.n_y
    if (n_u, n_y) != (model.n_u, model.n_y):
        raise ValueError("trajectory channels inconsistent with the noise model")
    future_inputs = np.atleast_2d(np.asarray(future_inputs, dtype=float))
    if future_inputs.size == 0:
        future_inputs = future_inputs.reshape(0, n_u)
    if future_inputs.shape[1] != n_u:
        raise ValueError("future inputs have the wrong channel count")
    l_fut = future_inputs.shape[0]
    L = L0 + l_fut
    n = n_u + n_y
    past_u_z, past_y_z, fut_u_z, fut_y_z = _z_groups(n_u, n_y, L, L0)
    observed_z = np.concatenate([np.arange(n * L0), fut_u_z])
    p = observed_z.size
    phi = np.zeros((p, n * L))
    phi[np.arange(p), observed_z] = 1.0
    zeta = np.concatenate([initial.window(0, L0), future_inputs.ravel()])
    sig_eps = phi @ sigma_z(model, L) @ phi.T
    layout = TaskLayout(
        past_input_rows=past_u_z, past_output_rows=past_y_z,
        future_input_rows=np.arange(n * L0, p),
        future_output_rows=np.zeros(0, dtype=int),
        past_input_z=past_u_z, past_output_z=past_y_z,
        future_input_z=fut_u_z, future_output_z=fut_y_z,
    )
    return TaskSpec(
        kind=TaskKind.PREDICTION,
        phi=phi,
        zeta=zeta,
        sigma_eps=sig_eps,
        family=model.family,
        n_u=n_u, n_y=n_y, horizon=L, past_length=L0,
        layout=layout,
    )


def build_control(
    initial: Trajectory,
    objective: ControlObjective,
    model: NoiseModel,
    lag_check: int,
) -> TaskSpec:
    """Control task: measured past plus reference tail with design scale.

    The design tail treats each future step as a soft requirement centered on
    the references with scale blkdiag(r^{-1}, q^{-1}); the tail shares the
    radial generator of the noise family.
    """
    L0 = initial.length
    if L0 < lag_check:
        raise ValueError(f"initial window of length {L0} is shorter than the lag {lag_check}")
    n_u, n_y = initial.n_u, initial.n_y
    if (n_u, n_y) != (model.n_u, model.n_y):
        raise ValueError("trajectory channels inconsistent with the noise model")
    if objective.u_ref.shape[1] != n_u or objective.y_ref.shape[1] != n_y:
        raise ValueError("objective references inconsistent with trajectory channels")
    l_fut = objective.horizon
    L = L0 + l_fut
    n = n_u + n_y
    tail = np.hstack([objective.u_ref, objective.y_ref]).ravel()
    zeta = np.concatenate([initial.window(0, L0), tail])
    design_block = np.zeros((n, n))
    design_block[:n_u, :n_u] = np.linalg.inv(objective.r)
    design_block[n_u:, n_u:] = np.linalg.inv(objective.q)
    sig_eps = np.zeros((n * L, n * L))
    sig_eps[: n * L0, : n * L0] = sigma_z(model, L0)
    for t in range(l_fut):
        lo = n * L0 + t * n
        sig_eps[lo : lo + n, lo : lo + n] = design_block
    past_u_z, past_y_z, fut_u_z, fut_y_z = _z_groups(n_u, n_y, L, L0)
    layout = TaskLayout(
        past_input_rows=past_u_z, past_output_rows=past_y_z,
        future_input_rows=fut_u_z, future_output_rows=fut_y_z,
        past_input_z=past_u_z, past_output_z=past_y_z,
        future_input_z=fut_u_z, future_output_z=fut_y_z,
    )
    return TaskSpec(
        kind=TaskKind.CONTROL,
        phi=np.eye(n * L),
        zeta=zeta,
        sigma_eps=sig_eps,
        family=model.family,
        n_u=n_u, n_y=n_y, horizon=L, past_length=L0,
        layout=layout,
        objective=objective,
    )


def _isotropic_scalar(m: np.ndarray, name: str) -> float:
    val = float(m[0, 0])
    if not np.allclose(m, val * np.eye(m.shape[0]), rtol=0, atol=1e-12 * max(1.0, abs(val))):
        raise ValueError(f"{name} must be a scalar multiple of the identity for this cost")
    return val


def control_cost(z: np.ndarray, objective: ControlObjective, past_length: int) -> float:
    """Normalized root tracking cost of a stacked trajectory against the references.

    Per design step the input error enters with weight r/q and the output
    error with weight one; the result is the root of the per-step average.
    """
    z = np.asarray(z, dtype=float).ravel()
    n_u = objective.r.shape[0]
    n_y = objective.q.shape[0]
    n = n_u + n_y
    l_fut = objective.horizon
    if z.size != n * (past_length + l_fut):
        raise ValueError("stacked trajectory length inconsistent with the objective")
    q = _isotropic_scalar(objective.q, "q")
    r = _isotropic_scalar(objective.r, "r")
    total = 0.0
    for t in range(l_fut):
        lo = n * (past_length + t)
        u_t = z[lo : lo + n_u]
        y_t = z[lo + n_u : lo + n]
        du = u_t - objective.u_ref[t]
        dy = y_t - objective.y_ref[t]
        total += (r / q) * float(du @ du) + float(dy @ dy)
    return float(np.sqrt(total / l_fut))
