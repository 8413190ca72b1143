"""Discrete-time LTI state-space systems: simulation, random generation,
impulse-energy normalization, lag, DC gain, and the 1-D diffusion benchmark plant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import solve_discrete_lyapunov


@dataclass(frozen=True)
class LtiSystem:
    """State-space realization (a, b, c, d) of a stable discrete-time system."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        a, b, c, d = (np.asarray(m, dtype=float) for m in (self.a, self.b, self.c, self.d))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)
        n_x = a.shape[0]
        if a.shape != (n_x, n_x):
            raise ValueError("a must be square")
        if b.shape[0] != n_x or c.shape[1] != n_x:
            raise ValueError("b/c dimensions inconsistent with a")
        if d.shape != (c.shape[0], b.shape[1]):
            raise ValueError("d dimensions inconsistent with b and c")

    @property
    def n_x(self) -> int:
        return self.a.shape[0]

    @property
    def n_u(self) -> int:
        return self.b.shape[1]

    @property
    def n_y(self) -> int:
        return self.c.shape[0]

    def spectral_radius(self) -> float:
        if self.n_x == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(self.a))))

    def to_json_dict(self) -> dict:
        return {
            "A": self.a.tolist(),
            "B": self.b.tolist(),
            "C": self.c.tolist(),
            "D": self.d.tolist(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "LtiSystem":
        return cls(
            a=np.asarray(doc["A"], dtype=float),
            b=np.asarray(doc["B"], dtype=float),
            c=np.asarray(doc["C"], dtype=float),
            d=np.asarray(doc["D"], dtype=float),
        )


def simulate(
    sys: LtiSystem,
    inputs: np.ndarray,
    x0: np.ndarray | None = None,
    return_state: bool = False,
):
    """Simulate y_t = c x_t + d u_t, x_{t+1} = a x_t + b u_t over the input sequence.

    ``inputs`` has one row per time step. Returns the noise-free outputs,
    and additionally the state after the last step when ``return_state``.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] == 0:
        raise ValueError("need at least one input sample")
    if inputs.shape[1] != sys.n_u:
        raise ValueError(f"inputs have {inputs.shape[1]} channels, expected {sys.n_u}")
    x = np.zeros(sys.n_x) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x.shape != (sys.n_x,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({sys.n_x},)")
    outputs = np.zeros((inputs.shape[0], sys.n_y))
    for t, u in enumerate(inputs):
        outputs[t] = sys.c @ x + sys.d @ u
        x = sys.a @ x + sys.b @ u
    if return_state:
        return outputs, x
    return outputs


def h2_norm(sys: LtiSystem) -> float:
    """Impulse-response energy norm, via the controllability Gramian."""
    p = solve_discrete_lyapunov(sys.a, sys.b @ sys.b.T)
    val = float(np.trace(sys.c @ p @ sys.c.T) + np.trace(sys.d @ sys.d.T))
    return float(np.sqrt(max(val, 0.0)))


def normalize_h2(sys: LtiSystem) -> LtiSystem:
    """Scale (c, d) so the impulse-energy norm becomes one."""
    norm = h2_norm(sys)
    if norm <= 0.0:
        raise ValueError("cannot normalize a system with zero impulse energy")
    return LtiSystem(a=sys.a, b=sys.b, c=sys.c / norm, d=sys.d / norm)


def observability_matrix(sys: LtiSystem, blocks: int) -> np.ndarray:
    rows = [sys.c]
    for _ in range(blocks - 1):
        rows.append(rows[-1] @ sys.a)
    return np.vstack(rows)


def controllability_matrix(sys: LtiSystem) -> np.ndarray:
    cols = [sys.b]
    for _ in range(sys.n_x - 1):
        cols.append(sys.a @ cols[-1])
    return np.hstack(cols)


def _numerical_rank(m: np.ndarray, rtol: float = 1e-8) -> int:
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > rtol * s[0]))


def lag(sys: LtiSystem) -> int:
    """Smallest block count l with the l-block observability matrix at full state rank."""
    for l in range(1, sys.n_x + 1):
        if _numerical_rank(observability_matrix(sys, l)) == sys.n_x:
            return l
    raise ValueError("system is not observable: observability rank never reaches n_x")


def dc_gain(sys: LtiSystem) -> np.ndarray:
    """Steady-state gain c (I - a)^{-1} b + d."""
    eye = np.eye(sys.n_x)
    eigs = np.linalg.eigvals(sys.a) if sys.n_x else np.zeros(0)
    if np.any(np.abs(eigs - 1.0) < 1e-12):
        raise ValueError("system has an eigenvalue at 1; DC gain undefined")
    return sys.c @ np.linalg.solve(eye - sys.a, sys.b) + sys.d


def random_system(
    n_x: int,
    n_u: int,
    n_y: int,
    rng: np.random.Generator,
    nonzero_d: bool = False,
    max_retries: int = 100,
) -> LtiSystem:
    """Draw a stable, controllable, observable system with unit impulse energy.

    The state matrix is a dense Gaussian draw rescaled to a spectral radius
    uniform in [0.3, 0.95]; b and c have standard Gaussian entries and d is
    zero unless ``nonzero_d``. Deterministic given the generator state.
    """
    if min(n_x, n_u, n_y) < 1:
        raise ValueError("dimensions must be at least 1")
    for _ in range(max_retries):
        a = rng.standard_normal((n_x, n_x))
        rho = float(np.max(np.abs(np.linalg.eigvals(a))))
        if rho <= 0:
            continue
        a *= rng.uniform(0.3, 0.95) / rho
        b = rng.standard_normal((n_x, n_u))
        c = rng.standard_normal((n_y, n_x))
        d = rng.standard_normal((n_y, n_u)) if nonzero_d else np.zeros((n_y, n_u))
        sys = LtiSystem(a=a, b=b, c=c, d=d)
        ctrb_ok = _numerical_rank(controllability_matrix(sys)) == n_x
        obsv_ok = _numerical_rank(observability_matrix(sys, n_x)) == n_x
        if ctrb_ok and obsv_ok:
            return normalize_h2(sys)
    raise RuntimeError(f"no controllable/observable draw in {max_retries} attempts")


def make_diffusion_system(alpha: float, beta: float) -> LtiSystem:
    """Ten-compartment 1-D diffusion chain driven at the first compartment.

    The first compartment receives the input and is the measured output;
    interior compartments exchange with both neighbours, the ends with one.
    """
    if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0):
        raise ValueError("alpha and beta must lie in (0, 1)")
    n = 10
    a = np.zeros((n, n))
    for i in range(n):
        neighbours = [j for j in (i - 1, i + 1) if 0 <= j < n]
        a[i, i] = 1.0 - beta - alpha * len(neighbours)
        for j in neighbours:
            a[i, j] = alpha
    b = np.zeros((n, 1))
    b[0, 0] = 1.0
    c = np.zeros((1, n))
    c[0, 0] = 1.0
    return LtiSystem(a=a, b=b, c=c, d=np.zeros((1, 1)))
