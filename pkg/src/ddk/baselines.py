"""Reference data-driven predictors and predictive controllers used for
comparison: the regularized predictor, regularized data-enabled predictive
control, and its unregularized limit."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .estimator import InfeasibleConstraintsError
from .numerics import SingularKktError, reduce_constraint_rows, solve_eq_qp
from .sigdata import SignalMatrix
from .tasks import TaskKind, TaskSpec


@dataclass(frozen=True)
class PartitionedData:
    """Row blocks of the signal matrix and the matching observed vectors.

    Matrices are carved from the full signal matrix by (time, channel)
    groups; ``u_f``/``y_f`` hold known future inputs or references when the
    task provides them.
    """

    h_up: np.ndarray
    h_yp: np.ndarray
    h_uf: np.ndarray
    h_yf: np.ndarray
    u_p: np.ndarray
    y_p: np.ndarray
    u_f: Optional[np.ndarray]
    y_f: Optional[np.ndarray]
    n_u: int
    n_y: int
    past_length: int
    future_length: int

    @classmethod
    def from_task(cls, task: TaskSpec, h: SignalMatrix) -> "PartitionedData":
        if task.kind is TaskKind.SMOOTHING:
            raise ValueError("past/future partition is undefined for smoothing tasks")
        lay = task.layout
        u_f = task.zeta[lay.future_input_rows] if lay.future_input_rows.size else None
        y_f = task.zeta[lay.future_output_rows] if lay.future_output_rows.size else None
        return cls(
            h_up=h.h[lay.past_input_z],
            h_yp=h.h[lay.past_output_z],
            h_uf=h.h[lay.future_input_z],
            h_yf=h.h[lay.future_output_z],
            u_p=task.zeta[lay.past_input_rows],
            y_p=task.zeta[lay.past_output_rows],
            u_f=u_f,
            y_f=y_f,
            n_u=task.n_u,
            n_y=task.n_y,
            past_length=task.past_length,
            future_length=task.future_length,
        )


def predictor_lambda(n_y: int, past_length: int, sigma_d_sq: float) -> float:
    """Regularization weight matched to the offline output-noise level."""
    return n_y * past_length * sigma_d_sq


def deepc_weights(
    q: float,
    sigma_sq: float,
    sigma_d_sq: float,
    g0_norm_sq: float,
    n_y: int,
    past_length: int,
    future_length: int,
) -> tuple[float, float, float]:
    """Tracking and ridge weights (lam1, lam2, lam3) for regularized control.

    lam1 weighs reference tracking against the design scale plus offline
    noise, lam2 weighs past-output matching against online plus offline
    noise, and lam3 is the matched ridge on the combination vector.
    """
    lam1 = 1.0 / (sigma_d_sq * g0_norm_sq + 1.0 / q)
    lam2 = 1.0 / (sigma_d_sq * g0_norm_sq + sigma_sq)
    lam3 = n_y * sigma_d_sq * (future_length * lam1 + past_length * lam2)
    return lam1, lam2, lam3


def _tracking_qp(
    terms: list[tuple[float, np.ndarray, np.ndarray]],
    ridge: float,
    a: np.ndarray,
    b: np.ndarray,
    m: int,
) -> np.ndarray:
    """Minimize sum_i w_i |v_i - M_i g|^2 + ridge |g|^2 subject to a g = b.

    Falls back to a null-space least-squares solve (minimum-norm in the
    reduced variable) when the KKT system is singular, e.g. at ridge zero.
    """
    p_mat = 2.0 * ridge * np.eye(m)
    q_vec = np.zeros(m)
    for weight, mat, vec in terms:
        if weight == 0.0:
            continue
        p_mat = p_mat + 2.0 * weight * (mat.T @ mat)
        q_vec = q_vec - 2.0 * weight * (mat.T @ vec)
    try:
        a_red, b_red = reduce_constraint_rows(a, b, tol=1e-8)
    except SingularKktError as exc:
        raise InfeasibleConstraintsError(
            f"equality constraints are inconsistent: {exc}"
        ) from exc
    try:
        g = solve_eq_qp(p_mat, q_vec, a_red, b_red)
        resid = np.max(np.abs(a_red @ g - b_red)) if a_red.shape[0] else 0.0
        if resid <= 1e-10 * (1.0 + float(np.max(np.abs(b_red), initial=0.0))):
            return g
    except SingularKktError:
        pass
    if a_red.shape[0]:
        g_part, *_ = np.linalg.lstsq(a_red, b_red, rcond=None)
        basis = scipy.linalg.null_space(a_red)
    else:
        g_part = np.zeros(m)
        basis = np.eye(m)
    if basis.shape[1] == 0:
        return g_part
    h_red = basis.T @ p_mat @ basis
    rhs = -(basis.T @ (p_mat @ g_part + q_vec))
    # directions with relative curvature below 1e-10 carry no usable
    # information; truncating them keeps the combination vector bounded
    w, *_ = np.linalg.lstsq(h_red, rhs, rcond=1e-10)
    return g_part + basis @ w


def predictor_regularized(
    data: PartitionedData, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Ridge-regularized past-output fit subject to matching all known inputs.

    Returns the combination vector and the predicted future outputs.
    """
    if data.u_f is None:
        raise ValueError("predictor needs known future inputs")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    m = data.h_yp.shape[1]
    a = np.vstack([data.h_up, data.h_uf])
    b = np.concatenate([data.u_p, data.u_f])
    g = _tracking_qp([(1.0, data.h_yp, data.y_p)], lam, a, b, m)
    return g, data.h_yf @ g


def deepc_regularized(
    data: PartitionedData,
    q: float,
    r: float,
    sigma_sq: float,
    sigma_d_sq: float,
    g0_norm_sq: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Regularized predictive control with noise-matched regularization weights.

    The tracking weights follow from the output cost, the online noise level,
    and the offline noise level scaled by the squared norm of the reference
    combination vector; at zero noise this reduces to the unregularized
    problem with hard past matching.
    """
    if data.u_f is None or data.y_f is None:
        raise ValueError("predictive control needs input and output references")
    if min(q, r) <= 0:
        raise ValueError("q and r must be positive")
    if sigma_sq == 0.0 and sigma_d_sq == 0.0:
        return deepc_unregularized(data, q, r)
    m = data.h_yp.shape[1]
    lam1, lam2, lam3 = deepc_weights(
        q, sigma_sq, sigma_d_sq, g0_norm_sq, data.n_y,
        data.past_length, data.future_length,
    )
    terms = [
        (r, data.h_uf, data.u_f),
        (lam1, data.h_yf, data.y_f),
        (lam2, data.h_yp, data.y_p),
    ]
    g = _tracking_qp(terms, lam3, data.h_up, data.u_p, m)
    return g, data.h_uf @ g, data.h_yf @ g


def deepc_unregularized(
    data: PartitionedData,
    q: float,
    r: float,
    soft_yp_weight: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reference tracking subject to exact matching of the measured past.

    With ``soft_yp_weight`` the past-output match moves into the objective
    with that weight instead of being enforced exactly (useful on noisy data
    where the hard version fits noise or turns infeasible).
    """
    if data.u_f is None or data.y_f is None:
        raise ValueError("predictive control needs input and output references")
    if min(q, r) <= 0:
        raise ValueError("q and r must be positive")
    m = data.h_yp.shape[1]
    terms = [(r, data.h_uf, data.u_f), (q, data.h_yf, data.y_f)]
    if soft_yp_weight is None:
        a = np.vstack([data.h_up, data.h_yp])
        b = np.concatenate([data.u_p, data.y_p])
    else:
        if soft_yp_weight <= 0:
            raise ValueError("soft_yp_weight must be positive")
        terms.append((soft_yp_weight, data.h_yp, data.y_p))
        a = data.h_up
        b = data.u_p
    g = _tracking_qp(terms, 0.0, a, b, m)
    return g, data.h_uf @ g, data.h_yf @ g
