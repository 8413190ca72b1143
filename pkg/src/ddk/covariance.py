"""Structured uncertainty scale matrices: the stacked window scale, the
vectorized offline-data scale, and the prior scale of a data combination
vector in both the general quadratic form and the fast autocorrelation form."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .sigdata import Construction, SignalMatrix
from .uncertainty import NoiseModel

# The vectorized offline scale is quadratic in memory and exists to validate
# the fast path; refuse to materialize it beyond this edge size.
SIGMA_D_SIZE_CAP = 2000


@dataclass(frozen=True)
class PriorScale:
    """Prior scale matrix of the offline-data residual for a combination vector g."""

    sigma_g: np.ndarray
    g_norm_sq: float
    method: str

    def clipped(self, floor: float = -1e-10) -> "PriorScale":
        """Clip eigenvalues below ``floor`` to zero (warning on actual clips)."""
        eigvals, eigvecs = np.linalg.eigh(self.sigma_g)
        if eigvals.size and eigvals[0] < floor:
            warnings.warn(
                f"prior scale has eigenvalue {eigvals[0]:.3e}; clipping to PSD",
                stacklevel=2,
            )
            eigvals = np.clip(eigvals, 0.0, None)
            mat = (eigvecs * eigvals) @ eigvecs.T
            return PriorScale(sigma_g=0.5 * (mat + mat.T), g_norm_sq=self.g_norm_sq,
                              method=self.method)
        return self


def sigma_z(model: NoiseModel, window_length: int) -> np.ndarray:
    """Stacked window scale with (i, j) block at lag |i - j|."""
    if window_length < 1:
        raise ValueError("window length must be at least 1")
    return model.window_scale(window_length)


def sigma_d(
    model: NoiseModel, offsets: Sequence[int], window_length: int
) -> np.ndarray:
    """Scale matrix of the vectorized offline-data uncertainty.

    Block (i, j), with i = (i1 - 1) L + i2 indexing (column i1, step i2),
    is the noise scale at lag |t_{i1} + i2 - (t_{j1} + j2)|. Test-scale only.
    """
    offsets = np.asarray(list(offsets), dtype=int)
    L = int(window_length)
    m_cols = offsets.size
    n = model.n
    size = n * L * m_cols
    if size > SIGMA_D_SIZE_CAP:
        raise ValueError(
            f"vectorized offline scale of size {size} exceeds the cap "
            f"{SIGMA_D_SIZE_CAP}; use the fast prior-scale path instead"
        )
    # absolute sample time of block row p: offsets[p // L] + (p % L)
    times = (offsets[:, None] + np.arange(L)[None, :]).ravel()
    out = np.zeros((size, size))
    cache: dict[int, np.ndarray] = {}
    for p, tp in enumerate(times):
        for q, tq in enumerate(times):
            tau = abs(int(tp - tq))
            if tau > model.decay_horizon:
                continue
            blk = cache.get(tau)
            if blk is None:
                blk = model.sigma_nu(tau)
                cache[tau] = blk
            out[p * n : (p + 1) * n, q * n : (q + 1) * n] = blk
    return out


def autocorrelation(g: np.ndarray) -> Mapping[int, float]:
    """Unnormalized empirical autocorrelation K(tau) = sum_k g_k g_{k+|tau|}."""
    g = np.asarray(g, dtype=float).ravel()
    m = g.size
    if m < 1:
        raise ValueError("g must be nonempty")
    full = np.correlate(g, g, mode="full")  # index tau + m - 1
    return {tau: float(full[tau + m - 1]) for tau in range(1 - m, m)}


def sigma_g_general(g: np.ndarray, sigma_d_matrix: np.ndarray) -> PriorScale:
    """Prior scale as the quadratic form of the vectorized offline scale.

    Equals sum_{k,m} g_k g_m D_{k,m} over the column-pair blocks of the
    vectorized scale; intended for oracle testing at small sizes.
    """
    g = np.asarray(g, dtype=float).ravel()
    m_cols = g.size
    size = sigma_d_matrix.shape[0]
    if size % m_cols != 0:
        raise ValueError("sigma_d size is not a multiple of the number of columns")
    nl = size // m_cols
    blocks = sigma_d_matrix.reshape(m_cols, nl, m_cols, nl)
    out = np.einsum("k,m,kamb->ab", g, g, blocks)
    return PriorScale(
        sigma_g=0.5 * (out + out.T),
        g_norm_sq=float(g @ g),
        method="general",
    )


def sigma_g_fast(
    g: np.ndarray,
    model: NoiseModel,
    construction: Construction | str,
    window_length: int,
) -> PriorScale:
    """Prior scale via the autocorrelation identity for Page and Hankel matrices.

    Block (i, j) equals sum_tau K(tau) * Sigma_nu(|tau * l + i - j|) with
    l = L for Page and l = 1 for Hankel; the sum skips lags beyond the noise
    decay horizon and never materializes the vectorized offline scale.
    """
    if isinstance(construction, str):
        construction = Construction(construction.lower())
    if construction is Construction.PAGE:
        step = int(window_length)
    elif construction is Construction.HANKEL:
        step = 1
    else:
        raise ValueError(
            "fast prior scale needs a Page or Hankel construction; "
            "use sigma_g_general with explicit offsets otherwise"
        )
    g = np.asarray(g, dtype=float).ravel()
    m_cols = g.size
    L = int(window_length)
    n = model.n
    k_full = np.correlate(g, g, mode="full")  # index tau + m_cols - 1
    horizon = model.decay_horizon
    # the block is constant along sample-index diagonals d = i - j
    band: dict[int, np.ndarray] = {}
    cache: dict[int, np.ndarray] = {}
    for d in range(1 - L, L):
        acc = np.zeros((n, n))
        nonzero = False
        for tau in range(1 - m_cols, m_cols):
            lag = abs(tau * step + d)
            if lag > horizon:
                continue
            k_val = k_full[tau + m_cols - 1]
            if k_val == 0.0:
                continue
            blk = cache.get(lag)
            if blk is None:
                blk = model.sigma_nu(lag)
                cache[lag] = blk
            acc = acc + k_val * blk
            nonzero = True
        if nonzero:
            band[d] = acc
    out = np.zeros((n * L, n * L))
    for d, blk in band.items():
        for i in range(max(0, d), min(L, L + d)):
            j = i - d
            out[i * n : (i + 1) * n, j * n : (j + 1) * n] = blk
    return PriorScale(
        sigma_g=0.5 * (out + out.T),
        g_norm_sq=float(g @ g),
        method="fast_page_hankel",
    )


def sigma_g_for_matrix(g: np.ndarray, model: NoiseModel, h: SignalMatrix) -> PriorScale:
    """Prior scale for a signal matrix, choosing the fast path when possible."""
    if h.construction in (Construction.PAGE, Construction.HANKEL):
        return sigma_g_fast(g, model, h.construction, h.window_length)
    d = sigma_d(model, h.offsets, h.window_length)
    return sigma_g_general(g, d)
