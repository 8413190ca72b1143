"""Elliptical distribution families (Gaussian, Student's t), densities with
possibly singular scale matrices, and stationary noise processes with
lag-dependent block covariances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .numerics import PsdDecomposition, decompose_psd


class OffSupportError(ValueError):
    """Sample lies outside the support of a degenerate distribution."""


@dataclass(frozen=True)
class EllipticalFamily:
    """Radial density generator of an elliptical location-scale family.

    ``log_radial(x, m)`` evaluates log f(x) for the m-dimensional member of
    the family, normalized so the density integrates to one. The scale
    matrix is a scale parameter, not a covariance: for Student's t with
    ``xi`` degrees of freedom the covariance is xi / (xi - 2) times the scale.
    """

    kind: str
    xi: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "student_t"):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.kind == "student_t":
            if self.xi is None or self.xi <= 2:
                raise ValueError("student_t requires xi > 2 for a finite covariance")
        elif self.xi is not None:
            raise ValueError("xi is only meaningful for student_t")

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    def log_radial(self, x: float, m: int) -> float:
        """log f(x) in dimension m, for the squared Mahalanobis radius x >= 0."""
        if m == 0:
            return 0.0
        if self.is_gaussian:
            return -0.5 * m * math.log(2.0 * math.pi) - 0.5 * x
        xi = float(self.xi)
        const = (
            math.lgamma(0.5 * (xi + m))
            - math.lgamma(0.5 * xi)
            - 0.5 * m * math.log(xi * math.pi)
        )
        return const - 0.5 * (xi + m) * math.log1p(x / xi)

    def neg_log_radial_slope(self, x: float, m: int) -> float:
        """Derivative of -log f at radius x (used by analytic gradients)."""
        if m == 0:
            return 0.0
        if self.is_gaussian:
            return 0.5
        xi = float(self.xi)
        return 0.5 * (xi + m) / (xi + x)

    def variance_factor(self) -> float:
        """Covariance = variance_factor * scale matrix."""
        if self.is_gaussian:
            return 1.0
        return float(self.xi) / (float(self.xi) - 2.0)


GAUSSIAN = EllipticalFamily(kind="gaussian")


def student_t(xi: float) -> EllipticalFamily:
    return EllipticalFamily(kind="student_t", xi=float(xi))


def log_density(
    family: EllipticalFamily,
    mu: np.ndarray,
    sigma: np.ndarray,
    x: np.ndarray,
    tol: Optional[float] = None,
) -> float:
    """Log-density of an elliptical distribution with PSD (possibly singular) scale.

    Off the affine support of a singular scale the value is -inf. The radial
    generator is evaluated in the rank of the scale matrix.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if mu.shape != x.shape:
        raise ValueError("mu and x dimensions differ")
    dec = decompose_psd(sigma, tol)
    delta = x - mu
    tol_support = 1e-8 * (1.0 + float(np.linalg.norm(x)))
    if dec.rank < dec.dim:
        if np.max(np.abs(dec.u2.T @ delta), initial=0.0) > tol_support:
            return -np.inf
    if dec.rank == 0:
        return 0.0
    radius = dec.inv_quad(dec.u1.T @ delta)
    return -0.5 * dec.log_det_range() + family.log_radial(radius, dec.rank)


def sample(
    family: EllipticalFamily,
    mu: np.ndarray,
    sigma: np.ndarray,
    rng: np.random.Generator,
    dec: Optional[PsdDecomposition] = None,
) -> np.ndarray:
    """Draw one sample from the elliptical distribution with the given scale."""
    mu = np.asarray(mu, dtype=float).ravel()
    if dec is None:
        dec = decompose_psd(sigma)
    if dec.rank == 0:
        return mu.copy()
    z = rng.standard_normal(dec.rank)
    if not family.is_gaussian:
        z = z / math.sqrt(rng.chisquare(family.xi) / family.xi)
    return mu + dec.sqrt_factor() @ z


class NoiseModel:
    """Zero-mean stationary elliptical noise on stacked (input, output) channels.

    ``sigma_w`` and ``sigma_v`` map a nonnegative lag to the actuation and
    measurement scale blocks; both vanish for lags beyond ``decay_horizon``.
    Correlated (nonzero lag) models are restricted to the Gaussian family,
    where the window law is fully determined by the pairwise blocks.
    """

    def __init__(
        self,
        family: EllipticalFamily,
        sigma_w: Callable[[int], np.ndarray],
        sigma_v: Callable[[int], np.ndarray],
        decay_horizon: int,
        max_window: int = 0,
    ):
        if decay_horizon < 0:
            raise ValueError("decay_horizon must be nonnegative")
        self.family = family
        self._sigma_w = sigma_w
        self._sigma_v = sigma_v
        self.decay_horizon = int(decay_horizon)
        w0 = np.atleast_2d(np.asarray(sigma_w(0), dtype=float))
        v0 = np.atleast_2d(np.asarray(sigma_v(0), dtype=float))
        self.n_u = w0.shape[0]
        self.n_y = v0.shape[0]
        if w0.shape != (self.n_u, self.n_u) or v0.shape != (self.n_y, self.n_y):
            raise ValueError("sigma_w(0)/sigma_v(0) must be square")
        if not self.is_iid and not family.is_gaussian:
            raise ValueError(
                "correlated noise is only supported for the Gaussian family; "
                "a joint law for correlated heavy-tailed windows is not defined here"
            )
        for tau in range(0, min(self.decay_horizon, max_window) + 1):
            blk = self.sigma_nu(tau)
            if np.max(np.abs(blk - blk.T)) > 1e-10:
                raise ValueError(f"noise block at lag {tau} is not symmetric")
        if max_window > 0:
            cov = self.window_scale(max_window)
            lam_min = float(np.linalg.eigvalsh(cov)[0])
            lam_max = float(np.max(np.abs(np.linalg.eigvalsh(cov)))) if cov.size else 0.0
            if lam_min < -1e-8 * max(1.0, lam_max):
                raise ValueError(
                    f"stacked window covariance of length {max_window} is not PSD "
                    f"(min eigenvalue {lam_min:.3e})"
                )

    @property
    def n(self) -> int:
        return self.n_u + self.n_y

    @property
    def is_iid(self) -> bool:
        return self.decay_horizon == 0

    def sigma_w(self, tau: int) -> np.ndarray:
        tau = abs(int(tau))
        if tau > self.decay_horizon:
            return np.zeros((self.n_u, self.n_u))
        return np.atleast_2d(np.asarray(self._sigma_w(tau), dtype=float))

    def sigma_v(self, tau: int) -> np.ndarray:
        tau = abs(int(tau))
        if tau > self.decay_horizon:
            return np.zeros((self.n_y, self.n_y))
        return np.atleast_2d(np.asarray(self._sigma_v(tau), dtype=float))

    def sigma_nu(self, tau: int) -> np.ndarray:
        """Stacked scale block blkdiag(sigma_w(tau), sigma_v(tau))."""
        out = np.zeros((self.n, self.n))
        out[: self.n_u, : self.n_u] = self.sigma_w(tau)
        out[self.n_u :, self.n_u :] = self.sigma_v(tau)
        return out

    def window_scale(self, length: int) -> np.ndarray:
        """Block-Toeplitz scale of a stacked window, block (i, j) at lag |i - j|."""
        n = self.n
        out = np.zeros((n * length, n * length))
        blocks = {tau: self.sigma_nu(tau) for tau in range(min(length, self.decay_horizon + 1))}
        for i in range(length):
            for j in range(length):
                tau = abs(i - j)
                if tau <= self.decay_horizon:
                    out[i * n : (i + 1) * n, j * n : (j + 1) * n] = blocks[tau]
        return out

    @classmethod
    def iid(
        cls,
        family: EllipticalFamily,
        sigma_w0: np.ndarray | float,
        sigma_v0: np.ndarray | float,
    ) -> "NoiseModel":
        w0 = np.atleast_2d(np.asarray(sigma_w0, dtype=float))
        v0 = np.atleast_2d(np.asarray(sigma_v0, dtype=float))
        return cls(family, lambda tau: w0 if tau == 0 else np.zeros_like(w0),
                   lambda tau: v0 if tau == 0 else np.zeros_like(v0), decay_horizon=0)

    @classmethod
    def exp_decay(
        cls,
        family: EllipticalFamily,
        sigma_w0: np.ndarray | float,
        sigma_v0: np.ndarray | float,
        rho: float,
        decay_horizon: int,
        max_window: int = 0,
    ) -> "NoiseModel":
        """Geometric lag decay sigma(tau) = rho^tau * sigma(0), cut off at the horizon."""
        if not (0.0 <= rho < 1.0):
            raise ValueError("rho must lie in [0, 1)")
        w0 = np.atleast_2d(np.asarray(sigma_w0, dtype=float))
        v0 = np.atleast_2d(np.asarray(sigma_v0, dtype=float))
        if rho == 0.0:
            return cls.iid(family, w0, v0)
        return cls(
            family,
            lambda tau: (rho ** tau) * w0,
            lambda tau: (rho ** tau) * v0,
            decay_horizon=decay_horizon,
            max_window=max_window,
        )


def sample_stationary_process(
    model: NoiseModel, length: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw one length-L realization of the noise process, one row per time step.

    Independent models draw each step separately (for Student's t every step
    gets its own mixing variable); correlated Gaussian models draw one joint
    sample from the stacked window scale.
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    n = model.n
    if model.is_iid:
        dec = decompose_psd(model.sigma_nu(0))
        out = np.zeros((length, n))
        for t in range(length):
            out[t] = sample(model.family, np.zeros(n), None, rng, dec=dec)
        return out
    cov = model.window_scale(length)
    joint = sample(model.family, np.zeros(n * length), cov, rng)
    return joint.reshape(length, n)
