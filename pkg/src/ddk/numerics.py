"""Shared numeric kernels: rank-revealing PSD decomposition, equality-constrained
quadratic solves, a quasi-Newton minimizer, discrete Lyapunov solve, and
finite-difference gradient checking."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg


class SingularKktError(np.linalg.LinAlgError):
    """KKT system of an equality-constrained QP is numerically singular."""


class NotSymmetricError(ValueError):
    """Input matrix is not symmetric within tolerance."""


class NotPsdError(ValueError):
    """Input matrix has an eigenvalue below the negative tolerance."""


@dataclass(frozen=True)
class PsdDecomposition:
    """Rank-revealing eigendecomposition of a symmetric PSD matrix.

    Splits sigma = u1 @ sigma1 @ u1.T with u1 spanning the numerical range
    and u2 the numerical null space. Eigenvalues at or below ``tol`` are
    treated as exact zeros.
    """

    u1: np.ndarray
    u2: np.ndarray
    sigma1: np.ndarray
    rank: int
    tol: float

    @property
    def eigenvalues(self) -> np.ndarray:
        """Positive eigenvalues kept in the decomposition."""
        return np.diag(self.sigma1)

    @property
    def dim(self) -> int:
        return self.u1.shape[0]

    @property
    def is_positive_definite(self) -> bool:
        return self.rank == self.dim

    def inv_quad(self, x: np.ndarray) -> float:
        """Quadratic form x.T @ sigma1^{-1} @ x for an x in range coordinates."""
        return float(np.sum(x * x / self.eigenvalues)) if self.rank else 0.0

    def sqrt_factor(self) -> np.ndarray:
        """Factor S with S @ S.T equal to the decomposed matrix (dim x rank)."""
        return self.u1 * np.sqrt(self.eigenvalues)

    def pinv_apply(self, x: np.ndarray) -> np.ndarray:
        """Apply the pseudoinverse of the decomposed matrix to x."""
        if self.rank == 0:
            return np.zeros_like(x)
        return self.u1 @ ((self.u1.T @ x).T / self.eigenvalues).T

    def log_det_range(self) -> float:
        """Log-determinant of sigma1 (zero for an empty range)."""
        return float(np.sum(np.log(self.eigenvalues))) if self.rank else 0.0


@dataclass(frozen=True)
class SolverOptions:
    """Options for :func:`minimize_smooth`."""

    max_iters: int = 500
    grad_tol: float = 1e-8
    step_tol: float = 1e-12
    multistart_count: int = 1
    trust_radius_init: float = 1.0

    def __post_init__(self):
        if self.max_iters <= 0 or self.grad_tol <= 0 or self.step_tol <= 0:
            raise ValueError("iteration and tolerance options must be positive")
        if self.multistart_count < 1:
            raise ValueError("multistart_count must be at least 1")
        if self.trust_radius_init <= 0:
            raise ValueError("trust_radius_init must be positive")


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def decompose_psd(sigma: np.ndarray, tol: Optional[float] = None) -> PsdDecomposition:
    """Split a symmetric PSD matrix into its numerical range and null space.

    Parameters
    ----------
    sigma : (m, m) symmetric array
    tol : absolute eigenvalue cutoff; defaults to m * eps * max|eigenvalue|.

    Raises
    ------
    NotSymmetricError : if ``sigma`` deviates from symmetry by more than 1e-10.
    NotPsdError : if an eigenvalue falls below ``-10 * tol``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {sigma.shape}")
    m = sigma.shape[0]
    asym = np.max(np.abs(sigma - sigma.T)) if m else 0.0
    if asym > 1e-10:
        raise NotSymmetricError(f"matrix asymmetry {asym:.3e} exceeds 1e-10")
    if m == 0:
        return PsdDecomposition(
            u1=np.zeros((0, 0)), u2=np.zeros((0, 0)),
            sigma1=np.zeros((0, 0)), rank=0, tol=tol if tol is not None else 0.0,
        )
    eigvals, eigvecs = np.linalg.eigh(symmetrize(sigma))
    lam_max = float(np.max(np.abs(eigvals))) if m else 0.0
    if tol is None:
        tol = m * np.finfo(float).eps * lam_max
    if tol < 0:
        raise ValueError("tol must be positive")
    lam_min = float(eigvals[0])
    if lam_min < -10.0 * tol:
        raise NotPsdError(
            f"eigenvalue {lam_min:.3e} below -10*tol = {-10.0 * tol:.3e}; not PSD"
        )
    keep = eigvals > tol
    # eigh returns ascending order; keep natural ordering within each group
    u1 = eigvecs[:, keep]
    u2 = eigvecs[:, ~keep]
    sigma1 = np.diag(eigvals[keep])
    return PsdDecomposition(u1=u1, u2=u2, sigma1=sigma1, rank=int(keep.sum()), tol=tol)


def reduce_constraint_rows(
    a: np.ndarray, b: np.ndarray, tol: float = 1e-10
) -> tuple[np.ndarray, np.ndarray]:
    """Replace a possibly redundant system a x = b by an equivalent full-row-rank one.

    Raises ``SingularKktError`` if the redundant rows are inconsistent with b.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if a.shape[0] == 0:
        return a, b
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    cutoff = tol * (s[0] if s.size else 0.0)
    r = int(np.sum(s > cutoff))
    resid = u[:, r:].T @ b
    if resid.size and np.max(np.abs(resid)) > tol * (1.0 + float(np.linalg.norm(b))):
        raise SingularKktError(
            "constraint rows are rank deficient and inconsistent "
            f"(residual {np.max(np.abs(resid)):.3e})"
        )
    return s[:r, None] * vt[:r], u[:, :r].T @ b


def solve_eq_qp(
    p: np.ndarray,
    q: np.ndarray,
    a: Optional[np.ndarray] = None,
    b: Optional[np.ndarray] = None,
    *,
    reduce_rows: bool = False,
) -> np.ndarray:
    """Minimize 0.5 x'Px + q'x subject to Ax = b via the KKT linear system.

    ``a`` may be None or have zero rows for an unconstrained solve. With
    ``reduce_rows`` redundant-but-consistent constraint rows are dropped
    first instead of raising.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float).ravel()
    n = q.shape[0]
    if p.shape != (n, n):
        raise ValueError(f"p has shape {p.shape}, expected {(n, n)}")
    if a is None or (hasattr(a, "shape") and np.asarray(a).shape[0] == 0):
        a = np.zeros((0, n))
        b = np.zeros(0)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if a.shape[1] != n:
        raise ValueError(f"a has {a.shape[1]} columns, expected {n}")
    if a.shape[0] != b.shape[0]:
        raise ValueError("a and b have inconsistent row counts")
    if reduce_rows:
        a, b = reduce_constraint_rows(a, b)
    m = a.shape[0]
    if m == 0:
        try:
            c, low = scipy.linalg.cho_factor(symmetrize(p))
            return scipy.linalg.cho_solve((c, low), -q)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - rethrown below
            raise SingularKktError(f"unconstrained Hessian not PD: {exc}") from exc
        except scipy.linalg.LinAlgError as exc:
            raise SingularKktError(f"unconstrained Hessian not PD: {exc}") from exc
    kkt = np.block([[p, a.T], [a, np.zeros((m, m))]])
    rhs = np.concatenate([-q, b])
    try:
        with warnings.catch_warnings():
            # near-singular systems are caught by the residual check below
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            sol = scipy.linalg.solve(kkt, rhs)
    except scipy.linalg.LinAlgError as exc:
        raise SingularKktError(f"singular KKT system: {exc}") from exc
    x = sol[:n]
    resid = np.linalg.norm(kkt @ sol - rhs)
    scale = 1.0 + float(np.linalg.norm(q)) + float(np.linalg.norm(b))
    if not np.isfinite(resid) or resid > 1e-8 * scale:
        cond = np.linalg.cond(kkt)
        raise SingularKktError(
            f"KKT residual {resid:.3e} exceeds tolerance (cond ~ {cond:.3e})"
        )
    return x


def _fd_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(x)
    for i in range(x.size):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return grad


def _eval(objective, x: np.ndarray) -> tuple[float, np.ndarray]:
    out = objective(x)
    if isinstance(out, tuple):
        value, grad = out
    else:
        value, grad = out, None
    value = float(value)
    if grad is None:
        if np.isfinite(value):
            grad = _fd_gradient(lambda xx: float(_first(objective(xx))), x)
        else:
            grad = np.full_like(x, np.nan)
    else:
        grad = np.asarray(grad, dtype=float)
    return value, grad


def _first(out):
    return out[0] if isinstance(out, tuple) else out


@dataclass
class _MinimizeResult:
    x: np.ndarray
    value: float
    trace: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def _bfgs_run(objective, x0: np.ndarray, opts: SolverOptions) -> _MinimizeResult:
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    f, g = _eval(objective, x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient is not finite at the starting point")
    trace = [f]
    hinv = np.eye(n)
    result = _MinimizeResult(x=x.copy(), value=f, trace=trace)
    for it in range(opts.max_iters):
        gnorm = float(np.linalg.norm(g, np.inf))
        if gnorm <= opts.grad_tol:
            result.converged = True
            break
        d = -hinv @ g
        slope = float(d @ g)
        if slope >= 0:  # Hessian estimate lost descent property; reset
            hinv = np.eye(n)
            d = -g
            slope = -float(g @ g)
        # backtracking Armijo line search; non-finite trial values shrink the step
        t = 1.0
        accepted = False
        for _ in range(60):
            x_new = x + t * d
            f_new = float(_first(objective(x_new)))
            if np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        step = x_new - x
        f_new, g_new = _eval(objective, x_new)
        if not np.all(np.isfinite(g_new)):
            raise ValueError(f"gradient not finite at iterate {it + 1}")
        yk = g_new - g
        sy = float(step @ yk)
        if sy > 1e-12 * float(np.linalg.norm(step)) * float(np.linalg.norm(yk)):
            rho = 1.0 / sy
            v = np.eye(n) - rho * np.outer(step, yk)
            hinv = v @ hinv @ v.T + rho * np.outer(step, step)
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        result.iterations = it + 1
        if float(np.linalg.norm(step)) <= opts.step_tol:
            result.converged = True
            break
    result.x = x
    result.value = f
    return result


def minimize_smooth(
    objective: Callable,
    x0,
    opts: Optional[SolverOptions] = None,
) -> tuple[np.ndarray, list[float]]:
    """Quasi-Newton descent with backtracking line search.

    ``objective(x)`` returns either a value or a ``(value, gradient)`` pair;
    without an analytic gradient a central finite difference with step
    ``1e-6 * (1 + |x_i|)`` is used. ``x0`` may be a single start or a
    sequence of starts; with ``opts.multistart_count`` larger than the
    number of given starts, extra starts are deterministic perturbations of
    the first one. Returns the best minimizer and its (non-increasing)
    objective trace.
    """
    opts = opts or SolverOptions()
    if isinstance(x0, np.ndarray) and x0.ndim == 1:
        starts = [x0]
    elif isinstance(x0, (list, tuple)):
        starts = [np.asarray(s, dtype=float) for s in x0]
    else:
        starts = [np.asarray(x0, dtype=float).ravel()]
    if opts.multistart_count > len(starts):
        rng = np.random.default_rng(0)
        base = starts[0]
        scale = 0.1 * (1.0 + float(np.linalg.norm(base)))
        for _ in range(opts.multistart_count - len(starts)):
            starts.append(base + scale * rng.standard_normal(base.size))
    best: Optional[_MinimizeResult] = None
    for s in starts:
        res = _bfgs_run(objective, s, opts)
        if best is None or res.value < best.value:
            best = res
    assert best is not None
    return best.x, best.trace


def solve_discrete_lyapunov(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve a P a' - P + q = 0 for symmetric PSD q and stable a."""
    a = np.asarray(a, dtype=float)
    q = np.asarray(q, dtype=float)
    if a.shape[0] != a.shape[1] or a.shape != q.shape:
        raise ValueError("a and q must be square with matching shapes")
    if a.size:
        rho = float(np.max(np.abs(np.linalg.eigvals(a))))
        if rho >= 1.0 - 1e-9:
            raise ValueError(f"spectral radius {rho:.6f} is not below 1")
    p = scipy.linalg.solve_discrete_lyapunov(a, q)
    return symmetrize(p)


def check_gradient(objective: Callable, x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences."""
    x = np.asarray(x, dtype=float)
    _, grad = objective(x)
    grad = np.asarray(grad, dtype=float)
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (float(_first(objective(xp))) - float(_first(objective(xm)))) / (2.0 * h)
        err = abs(fd - grad[i]) / max(1.0, abs(grad[i]), abs(fd))
        worst = max(worst, err)
    return worst
