"""Trajectory estimation by combining window observations with an offline-data
prior: closed-form Gaussian solutions, the general elliptical solver on the
constrained support, marginal-likelihood hyperparameter estimation, and a
safeguarded sequential quadratic iteration."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg

from .covariance import PriorScale, sigma_g_for_matrix, sigma_d, sigma_g_general
from .numerics import (
    PsdDecomposition,
    SingularKktError,
    SolverOptions,
    decompose_psd,
    minimize_smooth,
    reduce_constraint_rows,
    solve_eq_qp,
    symmetrize,
)
from .sigdata import Construction, SignalMatrix
from .tasks import TaskSpec
from .uncertainty import NoiseModel

log = logging.getLogger(__name__)


class Method(Enum):
    NONLINEAR = "nonlinear"
    SQP = "sqp"
    ONE_ITERATION = "one_iteration"


class InfeasibleConstraintsError(ValueError):
    """Hard zero-uncertainty constraints cannot be satisfied jointly."""

    def __init__(self, message: str, direction: Optional[int] = None,
                 violation: float = np.nan):
        super().__init__(message)
        self.direction = direction
        self.violation = violation


class SingularScaleError(ValueError):
    """A positive-definite routine received a singular scale matrix."""


@dataclass
class HyperEstimate:
    """Estimated combination vector with its objective history."""

    g_hat: np.ndarray
    objective_trace: list[float]
    method: Method
    psi_at_g: np.ndarray
    converged: bool
    iterations: int


@dataclass
class EstimateReport:
    """Full output of one estimation run."""

    z_hat: np.ndarray
    g: HyperEstimate
    prior_mean: np.ndarray
    sigma_g: PriorScale
    residual_obs: np.ndarray
    residual_prior: np.ndarray
    timing_ms: dict[str, float]
    constraint_violation: float

    def to_json_dict(self) -> dict:
        return {
            "z_hat": self.z_hat.tolist(),
            "g_hat": self.g.g_hat.tolist(),
            "method": self.g.method.value,
            "converged": self.g.converged,
            "iterations": self.g.iterations,
            "objective_trace": [float(v) for v in self.g.objective_trace],
            "prior_mean": self.prior_mean.tolist(),
            "residual_obs": self.residual_obs.tolist(),
            "residual_prior": self.residual_prior.tolist(),
            "timing_ms": {k: float(v) for k, v in self.timing_ms.items()},
            "constraint_violation": float(self.constraint_violation),
        }


def pinv_init(task: TaskSpec, h: SignalMatrix) -> np.ndarray:
    """Minimum-norm least-squares solution of (Phi H) g = zeta."""
    a = task.phi @ h.h
    g0, _, rank, _ = np.linalg.lstsq(a, task.zeta, rcond=None)
    if rank < min(a.shape):
        log.debug("pinv start: Phi H rank %d below min dimension %d", rank, min(a.shape))
    return g0


def _band_block(model: NoiseModel, lag: int) -> Optional[np.ndarray]:
    if lag > model.decay_horizon:
        return None
    return model.sigma_nu(lag)


def _shifted_band_matrix(model: NoiseModel, shift: int, window: int) -> Optional[np.ndarray]:
    """Window-sized matrix with sample-diagonal d holding the noise block at |shift + d|.

    Returns None when every diagonal vanishes.
    """
    n = model.n
    bands: dict[int, np.ndarray] = {}
    for d in range(1 - window, window):
        blk = _band_block(model, abs(shift + d))
        if blk is not None and np.any(blk):
            bands[d] = blk
    if not bands:
        return None
    out = np.zeros((n * window, n * window))
    for d, blk in bands.items():
        for i in range(max(0, d), min(window, window + d)):
            j = i - d
            out[i * n : (i + 1) * n, j * n : (j + 1) * n] = blk
    return out


class MarginalModel:
    """Precomputed pieces of the marginal likelihood of zeta for one task.

    The observation scale decomposes as a constant part plus a sum of
    autocorrelation-weighted lag matrices; the structural null space (zero
    uncertainty in every direction regardless of g) is fixed once and turned
    into hard linear constraints on g.
    """

    def __init__(self, task: TaskSpec, h: SignalMatrix, model: NoiseModel):
        if (model.n_u, model.n_y) != (task.n_u, task.n_y):
            raise ValueError("offline noise channels inconsistent with the task")
        self.task = task
        self.h = h
        self.model = model
        self.a_full = task.phi @ h.h  # p x M
        self.m_cols = h.num_columns
        self.window = h.window_length
        self.is_fast = h.construction in (Construction.PAGE, Construction.HANKEL)
        self.step = self.window if h.construction is Construction.PAGE else 1
        nl = task.nl
        phi = task.phi
        lam_inner = np.kron(np.eye(self.window), model.sigma_nu(0))
        self.lam = phi @ lam_inner @ phi.T
        struct = decompose_psd(symmetrize(self.lam + task.sigma_eps))
        self.u1 = struct.u1
        self.u2 = struct.u2
        self.rank = struct.rank
        self.p = task.p
        self.a1 = self.u1.T @ self.a_full
        self.c1 = self.u1.T @ task.zeta
        self.sig_eps1 = symmetrize(self.u1.T @ task.sigma_eps @ self.u1)
        self.lam_bar = symmetrize(self.u1.T @ self.lam @ self.u1)
        self.a2 = self.u2.T @ self.a_full
        self.b2 = self.u2.T @ task.zeta
        self.feas_tol = 1e-8 * (1.0 + float(np.linalg.norm(task.zeta)))

    @cached_property
    def lag_matrices(self) -> dict[int, np.ndarray]:
        """Reduced-space lag matrices; the scale at g is their K(tau)-weighted sum."""
        if not self.is_fast:
            raise RuntimeError("lag matrices are only defined for Page/Hankel data")
        phi = self.task.phi
        out: dict[int, np.ndarray] = {}
        for tau in range(self.m_cols):
            shift = tau * self.step
            b = _shifted_band_matrix(self.model, shift, self.window)
            if tau > 0:
                b_neg = _shifted_band_matrix(self.model, -shift, self.window)
                if b is None:
                    b = b_neg
                elif b_neg is not None:
                    b = b + b_neg
            if b is None:
                continue
            proj = self.u1.T @ (phi @ b @ phi.T) @ self.u1
            out[tau] = symmetrize(proj)
        return out

    @cached_property
    def _sigma_d_cache(self) -> np.ndarray:
        return sigma_d(self.model, self.h.offsets, self.window)

    def psi_reduced(self, g: np.ndarray) -> np.ndarray:
        if self.is_fast:
            k_full = np.correlate(g, g, mode="full")
            psi = self.sig_eps1.copy()
            for tau, mat in self.lag_matrices.items():
                k_val = k_full[tau + self.m_cols - 1]
                if k_val != 0.0:
                    psi = psi + k_val * mat
            return psi
        prior = sigma_g_general(g, self._sigma_d_cache).sigma_g
        phi = self.task.phi
        return symmetrize(self.u1.T @ (phi @ prior @ phi.T + self.task.sigma_eps) @ self.u1)

    def psi_full(self, g: np.ndarray) -> np.ndarray:
        """Unreduced observation scale at g."""
        prior = sigma_g_for_matrix(g, self.model, self.h).sigma_g
        phi = self.task.phi
        return symmetrize(phi @ prior @ phi.T + self.task.sigma_eps)

    def infeasibility(self, g: np.ndarray) -> float:
        if self.a2.shape[0] == 0:
            return 0.0
        return float(np.max(np.abs(self.a2 @ g - self.b2)))

    def value_and_gradient(self, g: np.ndarray, want_gradient: bool = True):
        """Negative log marginal likelihood on the structural range, with gradient.

        Returns +inf (with NaN gradient) off the hard-constraint set or when
        the reduced scale is not positive definite at g.
        """
        g = np.asarray(g, dtype=float).ravel()
        bad = (np.inf, np.full(self.m_cols, np.nan))
        if self.infeasibility(g) > self.feas_tol:
            return bad
        if self.rank == 0:
            return 0.0, np.zeros(self.m_cols)
        psi = self.psi_reduced(g)
        try:
            chol = scipy.linalg.cho_factor(psi, lower=True)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            return bad
        diag = np.diag(chol[0])
        if np.any(diag <= 0):
            return bad
        delta = self.c1 - self.a1 @ g
        w = scipy.linalg.cho_solve(chol, delta)
        s = float(delta @ w)
        value = float(np.sum(np.log(diag))) - self.task.family.log_radial(s, self.rank)
        if not want_gradient:
            return value, None
        if not self.is_fast:
            grad = self._fd_gradient(g)
            return value, grad
        alpha = self.task.family.neg_log_radial_slope(s, self.rank)
        w_inv = scipy.linalg.cho_solve(chol, np.eye(self.rank))
        grad = -2.0 * alpha * (self.a1.T @ w)
        m = self.m_cols
        for tau, mat in self.lag_matrices.items():
            a_tau = float(np.sum(w_inv * mat))
            b_tau = float(w @ (mat @ w))
            coeff = 0.5 * a_tau - alpha * b_tau
            if coeff == 0.0:
                continue
            if tau == 0:
                grad = grad + coeff * 2.0 * g
            else:
                kprime = np.zeros(m)
                kprime[: m - tau] += g[tau:]
                kprime[tau:] += g[: m - tau]
                grad = grad + coeff * kprime
        return value, grad

    def _fd_gradient(self, g: np.ndarray) -> np.ndarray:
        grad = np.zeros(self.m_cols)
        for i in range(self.m_cols):
            step = 1e-6 * (1.0 + abs(g[i]))
            gp = g.copy()
            gm = g.copy()
            gp[i] += step
            gm[i] -= step
            fp = self.value_and_gradient(gp, want_gradient=False)[0]
            fm = self.value_and_gradient(gm, want_gradient=False)[0]
            grad[i] = (fp - fm) / (2.0 * step)
        return grad


def marginal_nll(
    task: TaskSpec,
    h: SignalMatrix,
    model_offline: NoiseModel,
    g: np.ndarray,
    cache: Optional[MarginalModel] = None,
) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood of the observation at g, with gradient.

    Uses the reduced form on the structural range when the scale is singular
    for every g; off the induced hard-constraint set the value is +inf.
    """
    cache = cache or MarginalModel(task, h, model_offline)
    return cache.value_and_gradient(np.asarray(g, dtype=float).ravel())


def _feasible_projection(cache: MarginalModel, g: np.ndarray) -> np.ndarray:
    if cache.a2.shape[0] == 0:
        return g
    correction, *_ = np.linalg.lstsq(cache.a2, cache.b2 - cache.a2 @ g, rcond=None)
    return g + correction


def _min_norm_interpolant(cache: MarginalModel) -> np.ndarray:
    """All directions hard: g solves (Phi H) g = zeta, minimum norm."""
    g0, *_ = np.linalg.lstsq(cache.a_full, cache.task.zeta, rcond=None)
    resid = cache.a_full @ g0 - cache.task.zeta
    worst = int(np.argmax(np.abs(resid))) if resid.size else None
    if resid.size and float(np.max(np.abs(resid))) > cache.feas_tol:
        raise InfeasibleConstraintsError(
            "observation is inconsistent with the offline data range "
            f"(worst row {worst}, residual {np.max(np.abs(resid)):.3e})",
            direction=worst,
            violation=float(np.max(np.abs(resid))),
        )
    return g0


def estimate_g_nonlinear(
    task: TaskSpec,
    h: SignalMatrix,
    model_offline: NoiseModel,
    opts: Optional[SolverOptions] = None,
    cache: Optional[MarginalModel] = None,
) -> HyperEstimate:
    """Minimize the marginal negative log likelihood with a quasi-Newton method.

    Hard constraints from structurally zero-uncertainty directions are
    eliminated by an affine parameterization; starts are the pseudoinverse
    point, zero, and a perturbed pseudoinverse point, each projected onto
    the constraint set.
    """
    opts = opts or SolverOptions(max_iters=300, grad_tol=1e-6, step_tol=1e-10)
    cache = cache or MarginalModel(task, h, model_offline)
    m = cache.m_cols
    if cache.rank == 0:
        g0 = _min_norm_interpolant(cache)
        return HyperEstimate(
            g_hat=g0, objective_trace=[0.0], method=Method.NONLINEAR,
            psi_at_g=cache.psi_full(g0), converged=True, iterations=0,
        )
    g_pinv = pinv_init(task, h)
    rng = np.random.default_rng(12345)
    g_pert = g_pinv + 0.1 * (1.0 + float(np.linalg.norm(g_pinv))) / np.sqrt(m) \
        * rng.standard_normal(m)
    starts = [g_pinv, np.zeros(m), g_pert]
    if cache.a2.shape[0] > 0:
        try:
            a2_red, _ = reduce_constraint_rows(cache.a2, cache.b2, tol=1e-8)
        except SingularKktError as exc:
            raise _named_infeasibility(cache.a2, cache.b2, exc) from exc
        basis = scipy.linalg.null_space(a2_red)
        g_part = _feasible_projection(cache, np.zeros(m))
        if cache.infeasibility(g_part) > cache.feas_tol:
            raise InfeasibleConstraintsError(
                "hard marginal constraints have no solution "
                f"(violation {cache.infeasibility(g_part):.3e})",
                violation=cache.infeasibility(g_part),
            )
        w_starts = [basis.T @ (_feasible_projection(cache, s) - g_part) for s in starts]

        def objective(w):
            value, grad = cache.value_and_gradient(g_part + basis @ w)
            return value, None if grad is None else basis.T @ grad

        finite = [w for w in w_starts
                  if np.isfinite(objective(w)[0])]
        if not finite:
            raise InfeasibleConstraintsError("no start with a finite marginal objective")
        w_best, trace = minimize_smooth(objective, finite, opts)
        g_best = g_part + basis @ w_best
    else:
        def objective(g):
            return cache.value_and_gradient(g)

        finite = [s for s in starts if np.isfinite(objective(s)[0])]
        if not finite:
            raise InfeasibleConstraintsError("no start with a finite marginal objective")
        g_best, trace = minimize_smooth(objective, finite, opts)
    iters = len(trace) - 1
    return HyperEstimate(
        g_hat=g_best, objective_trace=trace, method=Method.NONLINEAR,
        psi_at_g=cache.psi_full(g_best), converged=iters < opts.max_iters,
        iterations=iters,
    )


def _gaussian_marginal_objective(cache: MarginalModel, g: np.ndarray) -> float:
    """Gaussian marginal objective logdet Psi1(g) + |delta|^2 with exact scale assembly."""
    psi = cache.psi_reduced(g)
    try:
        chol = scipy.linalg.cho_factor(psi, lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return np.inf
    diag = np.diag(chol[0])
    if np.any(diag <= 0):
        return np.inf
    delta = cache.c1 - cache.a1 @ g
    return 2.0 * float(np.sum(np.log(diag))) + float(delta @ scipy.linalg.cho_solve(chol, delta))


def sqp_estimate_g(
    task: TaskSpec,
    h: SignalMatrix,
    model_offline: NoiseModel,
    opts: Optional[SolverOptions] = None,
    cache: Optional[MarginalModel] = None,
    method: Method = Method.SQP,
) -> HyperEstimate:
    """Sequential quadratic iteration on the Gaussian marginal objective.

    Each subproblem weighs the data fit by the exact observation scale at the
    current iterate and regularizes |g|^2 with a curvature coefficient from
    the independent-noise structure; the quadratic model is exact for
    Gaussian independent offline noise with a Page matrix and an
    approximation otherwise. A negative curvature coefficient is clamped and
    a shrinking trust region enforces decrease of the marginal objective; the
    recorded trace is therefore non-increasing.
    """
    opts = opts or SolverOptions(max_iters=30, grad_tol=1e-8, step_tol=1e-9)
    cache = cache or MarginalModel(task, h, model_offline)
    m = cache.m_cols
    if cache.rank == 0:
        g0 = _min_norm_interpolant(cache)
        return HyperEstimate(
            g_hat=g0, objective_trace=[0.0], method=method,
            psi_at_g=cache.psi_full(g0), converged=True, iterations=0,
        )
    g_cur = _feasible_projection(cache, pinv_init(task, h))
    if cache.infeasibility(g_cur) > cache.feas_tol:
        raise InfeasibleConstraintsError(
            "hard marginal constraints have no solution",
            violation=cache.infeasibility(g_cur),
        )
    a2, b2 = (cache.a2, cache.b2)
    if a2.shape[0] > 0:
        a2, b2 = reduce_constraint_rows(a2, b2, tol=1e-8)
    j_cur = _gaussian_marginal_objective(cache, g_cur)
    if not np.isfinite(j_cur):
        raise ValueError("marginal objective not finite at the start point")
    trace = [j_cur]
    radius = float(np.linalg.norm(g_cur)) or 1.0
    converged = False
    iterations = 0
    for _ in range(opts.max_iters):
        psi = cache.psi_reduced(g_cur)
        chol = scipy.linalg.cho_factor(psi, lower=True)
        delta = cache.c1 - cache.a1 @ g_cur
        w = scipy.linalg.cho_solve(chol, delta)
        trace_term = float(np.sum(scipy.linalg.cho_solve(chol, cache.lam_bar)
                                  .diagonal()))
        c_coeff = trace_term - float(w @ (cache.lam_bar @ w))
        c_min = 1e-10 * trace_term
        c_eff = max(c_coeff, c_min)
        wa = scipy.linalg.cho_solve(chol, cache.a1)
        hess_data = cache.a1.T @ wa
        rhs_data = cache.a1.T @ scipy.linalg.cho_solve(chol, cache.c1)
        accepted = False
        g_new = g_cur
        base_mu = 1e-8 * (c_eff + float(np.trace(hess_data)) / max(m, 1) + 1.0)
        for _attempt in range(40):
            mu = 0.0
            candidate = None
            for _damp in range(60):
                p_mat = 2.0 * (hess_data + (c_eff + mu) * np.eye(m))
                q_vec = -2.0 * (rhs_data + mu * g_cur)
                try:
                    candidate = solve_eq_qp(p_mat, q_vec, a2, b2)
                except SingularKktError:
                    candidate = None
                    mu = base_mu if mu == 0.0 else 4.0 * mu
                    continue
                if float(np.linalg.norm(candidate - g_cur)) <= radius:
                    break
                mu = base_mu if mu == 0.0 else 4.0 * mu
            if candidate is None:
                break
            j_new = _gaussian_marginal_objective(cache, candidate)
            if np.isfinite(j_new) and j_new <= j_cur + 1e-12 * (1.0 + abs(j_cur)):
                g_new = candidate
                j_cur = j_new
                accepted = True
                step_len = float(np.linalg.norm(candidate - g_cur))
                radius = max(2.0 * radius, 2.0 * step_len)
                break
            radius = 0.5 * min(radius, float(np.linalg.norm(candidate - g_cur)) or radius)
            if radius < 1e-13 * (1.0 + float(np.linalg.norm(g_cur))):
                break
        if not accepted:
            converged = True
            break
        step = float(np.linalg.norm(g_new - g_cur))
        g_cur = g_new
        trace.append(j_cur)
        iterations += 1
        if step <= opts.step_tol:
            converged = True
            break
    return HyperEstimate(
        g_hat=g_cur, objective_trace=trace, method=method,
        psi_at_g=cache.psi_full(g_cur), converged=converged, iterations=iterations,
    )


def one_iteration_estimate(
    task: TaskSpec,
    h: SignalMatrix,
    model_offline: NoiseModel,
    opts: Optional[SolverOptions] = None,
    cache: Optional[MarginalModel] = None,
) -> HyperEstimate:
    """Single sequential-quadratic step from the pseudoinverse start.

    With a full-row-rank observation map the first subproblem is convex and
    this is the closed-form approximate estimator.
    """
    base = opts or SolverOptions(max_iters=30, grad_tol=1e-8, step_tol=1e-9)
    one = replace(base, max_iters=1)
    est = sqp_estimate_g(task, h, model_offline, one, cache=cache,
                         method=Method.ONE_ITERATION)
    # a single closed-form step is the whole method, not a truncated iteration
    est.converged = True
    return est


def gaussian_map_pd(
    task: TaskSpec, h: SignalMatrix, g: np.ndarray, sigma_g: PriorScale
) -> np.ndarray:
    """Closed-form Gaussian estimate for positive definite scales.

    Solves (Phi' Se^{-1} Phi + Sg^{-1}) z = Phi' Se^{-1} zeta + Sg^{-1} H g
    through symmetric factorizations; singular scales are rejected.
    """
    g = np.asarray(g, dtype=float).ravel()
    phi = task.phi
    try:
        chol_eps = scipy.linalg.cho_factor(symmetrize(task.sigma_eps), lower=True)
        chol_g = scipy.linalg.cho_factor(symmetrize(sigma_g.sigma_g), lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularScaleError(
            f"scale matrix not positive definite ({exc}); use the singular variant"
        ) from exc
    sei_phi = scipy.linalg.cho_solve(chol_eps, phi)
    p_mat = phi.T @ sei_phi + scipy.linalg.cho_solve(chol_g, np.eye(task.nl))
    rhs = sei_phi.T @ task.zeta + scipy.linalg.cho_solve(chol_g, h.h @ g)
    chol_p = scipy.linalg.cho_factor(symmetrize(p_mat), lower=True)
    return scipy.linalg.cho_solve(chol_p, rhs)


def _weighted_projector(dec: PsdDecomposition) -> np.ndarray:
    """U1 Sigma1^{-1} U1' of a decomposition (zero for rank 0)."""
    if dec.rank == 0:
        return np.zeros((dec.dim, dec.dim))
    return (dec.u1 / dec.eigenvalues) @ dec.u1.T


def _named_infeasibility(v: np.ndarray, c: np.ndarray, exc: Exception) -> InfeasibleConstraintsError:
    sol, *_ = np.linalg.lstsq(v, c, rcond=None)
    resid = v @ sol - c
    worst = int(np.argmax(np.abs(resid))) if resid.size else None
    return InfeasibleConstraintsError(
        "hard zero-uncertainty constraints are inconsistent "
        f"(worst direction {worst}, residual {np.max(np.abs(resid)):.3e}): {exc}",
        direction=worst,
        violation=float(np.max(np.abs(resid))) if resid.size else np.nan,
    )


def gaussian_map_singular(
    task: TaskSpec,
    h: SignalMatrix,
    g: np.ndarray,
    sigma_g: PriorScale,
    eps_dec: Optional[PsdDecomposition] = None,
    g_dec: Optional[PsdDecomposition] = None,
) -> np.ndarray:
    """Closed-form Gaussian estimate with possibly singular scales.

    Zero-uncertainty directions become hard equality constraints; the
    weighted normal matrix F is used directly when invertible and the
    equivalent KKT system otherwise.
    """
    g = np.asarray(g, dtype=float).ravel()
    phi = task.phi
    eps_dec = eps_dec or decompose_psd(task.sigma_eps)
    g_dec = g_dec or decompose_psd(sigma_g.sigma_g)
    prior_mean = h.h @ g
    w_eps = _weighted_projector(eps_dec)
    w_g = _weighted_projector(g_dec)
    f_mat = symmetrize(phi.T @ w_eps @ phi + w_g)
    m_vec = phi.T @ (w_eps @ task.zeta) + w_g @ prior_mean
    v_rows = []
    c_parts = []
    if eps_dec.rank < eps_dec.dim:
        v_rows.append(eps_dec.u2.T @ phi)
        c_parts.append(eps_dec.u2.T @ task.zeta)
    if g_dec.rank < g_dec.dim:
        v_rows.append(g_dec.u2.T)
        c_parts.append(g_dec.u2.T @ prior_mean)
    if v_rows:
        v_full = np.vstack(v_rows)
        c_full = np.concatenate(c_parts)
        try:
            v_red, c_red = reduce_constraint_rows(v_full, c_full, tol=1e-8)
        except SingularKktError as exc:
            raise _named_infeasibility(v_full, c_full, exc) from exc
    else:
        v_full = np.zeros((0, task.nl))
        c_full = np.zeros(0)
        v_red, c_red = v_full, c_full
    z_hat = None
    if v_red.shape[0] < task.nl:
        try:
            chol_f = scipy.linalg.cho_factor(f_mat, lower=True)
            fi_m = scipy.linalg.cho_solve(chol_f, m_vec)
            if v_red.shape[0]:
                fi_vt = scipy.linalg.cho_solve(chol_f, v_red.T)
                s_mat = v_red @ fi_vt
                mult = scipy.linalg.solve(symmetrize(s_mat), v_red @ fi_m - c_red,
                                          assume_a="pos")
                z_hat = fi_m - fi_vt @ mult
            else:
                z_hat = fi_m
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            z_hat = None
    if z_hat is None:
        z_hat = solve_eq_qp(2.0 * f_mat, -2.0 * m_vec, v_red, c_red)
    if v_full.shape[0]:
        resid = float(np.max(np.abs(v_full @ z_hat - c_full)))
        if resid > 1e-8 * (1.0 + float(np.linalg.norm(c_full))):
            raise SingularKktError(
                f"hard-constraint residual {resid:.3e} exceeds tolerance"
            )
    return z_hat


def map_estimate(
    task: TaskSpec,
    h: SignalMatrix,
    g: np.ndarray,
    sigma_g: PriorScale,
    opts: Optional[SolverOptions] = None,
) -> np.ndarray:
    """Most probable stacked trajectory given the observation and the data prior.

    Gaussian families dispatch to the closed forms; other elliptical families
    maximize the product of radial densities over the affine feasible set by
    eliminating the hard constraints and running the smooth minimizer, warm
    started from the Gaussian solution of the same problem.
    """
    g = np.asarray(g, dtype=float).ravel()
    eps_dec = decompose_psd(task.sigma_eps)
    g_dec = decompose_psd(sigma_g.sigma_g)
    if task.family.is_gaussian:
        if eps_dec.is_positive_definite and g_dec.is_positive_definite:
            return gaussian_map_pd(task, h, g, sigma_g)
        return gaussian_map_singular(task, h, g, sigma_g, eps_dec, g_dec)
    z_warm = gaussian_map_singular(task, h, g, sigma_g, eps_dec, g_dec)
    prior_mean = h.h @ g
    phi = task.phi
    rows = []
    rhs_parts = []
    if eps_dec.rank < eps_dec.dim:
        rows.append(eps_dec.u2.T @ phi)
        rhs_parts.append(eps_dec.u2.T @ task.zeta)
    if g_dec.rank < g_dec.dim:
        rows.append(g_dec.u2.T)
        rhs_parts.append(g_dec.u2.T @ prior_mean)
    if rows:
        a_c = np.vstack(rows)
        b_c = np.concatenate(rhs_parts)
        # near-duplicate rows (both scales can vanish on the same directions)
        # must be dropped before elimination, or the null space loses
        # genuinely feasible directions to rounding-level singular values
        try:
            a_red, b_red = reduce_constraint_rows(a_c, b_c, tol=1e-8)
        except SingularKktError as exc:
            raise _named_infeasibility(a_c, b_c, exc) from exc
        basis = scipy.linalg.null_space(a_red)
        z_part, *_ = np.linalg.lstsq(a_red, b_red, rcond=None)
    else:
        basis = np.eye(task.nl)
        z_part = np.zeros(task.nl)
    if basis.shape[1] == 0:
        return z_warm
    u_eps = eps_dec.u1
    u_g = g_dec.u1
    eig_eps = eps_dec.eigenvalues
    eig_g = g_dec.eigenvalues
    fam = task.family

    def objective(w):
        z = z_part + basis @ w
        d_eps = u_eps.T @ (task.zeta - phi @ z)
        d_g = u_g.T @ (z - prior_mean)
        s_eps = float(np.sum(d_eps * d_eps / eig_eps)) if eps_dec.rank else 0.0
        s_g = float(np.sum(d_g * d_g / eig_g)) if g_dec.rank else 0.0
        value = -fam.log_radial(s_eps, eps_dec.rank) - fam.log_radial(s_g, g_dec.rank)
        grad_z = (
            2.0 * fam.neg_log_radial_slope(s_eps, eps_dec.rank)
            * -(phi.T @ (u_eps @ (d_eps / eig_eps)))
            if eps_dec.rank else np.zeros(task.nl)
        )
        if g_dec.rank:
            grad_z = grad_z + 2.0 * fam.neg_log_radial_slope(s_g, g_dec.rank) \
                * (u_g @ (d_g / eig_g))
        return value, basis.T @ grad_z

    opts = opts or SolverOptions(max_iters=400, grad_tol=1e-9, step_tol=1e-12)
    w0 = basis.T @ (z_warm - z_part)
    w_best, _ = minimize_smooth(objective, [w0], opts)
    return z_part + basis @ w_best


def run_algorithm1(
    task: TaskSpec,
    h: SignalMatrix,
    model_offline: NoiseModel,
    method: Method | str = Method.NONLINEAR,
    opts: Optional[SolverOptions] = None,
) -> EstimateReport:
    """Estimate the combination vector, then the trajectory, and report both."""
    if isinstance(method, str):
        method = Method(method)
    cache = MarginalModel(task, h, model_offline)
    t0 = time.perf_counter()
    if method is Method.NONLINEAR:
        hyper = estimate_g_nonlinear(task, h, model_offline, opts, cache=cache)
    elif method is Method.SQP:
        hyper = sqp_estimate_g(task, h, model_offline, opts, cache=cache)
    else:
        hyper = one_iteration_estimate(task, h, model_offline, opts, cache=cache)
    t1 = time.perf_counter()
    prior = sigma_g_for_matrix(hyper.g_hat, model_offline, h).clipped()
    z_hat = map_estimate(task, h, hyper.g_hat, prior)
    t2 = time.perf_counter()
    prior_mean = h.h @ hyper.g_hat
    eps_dec = decompose_psd(task.sigma_eps)
    g_dec = decompose_psd(prior.sigma_g)
    violation = 0.0
    if eps_dec.rank < eps_dec.dim:
        violation = max(violation, float(np.max(np.abs(
            eps_dec.u2.T @ (task.zeta - task.phi @ z_hat)))))
    if g_dec.rank < g_dec.dim:
        violation = max(violation, float(np.max(np.abs(
            g_dec.u2.T @ (z_hat - prior_mean)))))
    return EstimateReport(
        z_hat=z_hat,
        g=hyper,
        prior_mean=prior_mean,
        sigma_g=prior,
        residual_obs=task.zeta - task.phi @ z_hat,
        residual_prior=z_hat - prior_mean,
        timing_ms={
            "hyperparameter": 1e3 * (t1 - t0),
            "map": 1e3 * (t2 - t1),
            "total": 1e3 * (t2 - t0),
        },
        constraint_violation=violation,
    )
