"""Input-output trajectories, signal-matrix construction (Page, Hankel, custom
offsets), and data-richness checks."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class Construction(Enum):
    PAGE = "page"
    HANKEL = "hankel"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Trajectory:
    """Equal-length input and output sample sequences, one row per time step."""

    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if u.shape[0] != y.shape[0]:
            raise ValueError("u and y must have the same number of samples")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def length(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    @property
    def n(self) -> int:
        return self.n_u + self.n_y

    def z(self) -> np.ndarray:
        """Stacked signal samples z_t = (u_t, y_t), one row per time step."""
        return np.hstack([self.u, self.y])

    def window(self, start: int, length: int) -> np.ndarray:
        """Column vector of ``length`` stacked samples beginning at ``start`` (0-based)."""
        if start < 0 or start + length > self.length:
            raise ValueError("window exceeds trajectory bounds")
        return self.z()[start : start + length].ravel()

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        header = ["t"] + [f"u_{i + 1}" for i in range(self.n_u)] + [
            f"y_{i + 1}" for i in range(self.n_y)
        ]
        writer.writerow(header)
        for t in range(self.length):
            writer.writerow(
                [t + 1]
                + [repr(float(v)) for v in self.u[t]]
                + [repr(float(v)) for v in self.y[t]]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        n_u = sum(1 for h in header if h.startswith("u_"))
        n_y = sum(1 for h in header if h.startswith("y_"))
        data = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
        return cls(u=data[:, :n_u], y=data[:, n_u : n_u + n_y])


@dataclass(frozen=True)
class SignalMatrix:
    """Column-stacked length-L trajectory windows with construction metadata.

    Column i holds the window starting at sample ``offsets[i]`` (0-based) of
    the source trajectory.
    """

    h: np.ndarray
    construction: Construction
    offsets: np.ndarray
    window_length: int
    n_u: int
    n_y: int

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=int))
        n = self.n_u + self.n_y
        if self.h.shape[0] != n * self.window_length:
            raise ValueError("row count inconsistent with window length and channels")
        if self.h.shape[1] != self.offsets.shape[0]:
            raise ValueError("one offset per column required")

    @property
    def n(self) -> int:
        return self.n_u + self.n_y

    @property
    def num_columns(self) -> int:
        return self.h.shape[1]


def build_signal_matrix(
    traj: Trajectory,
    window_length: int,
    construction: Construction | str = Construction.HANKEL,
    offsets: Sequence[int] | None = None,
) -> SignalMatrix:
    """Stack trajectory windows column-wise.

    Hankel uses unit-shifted windows (M = N - L + 1 columns), Page disjoint
    windows (M = floor(N / L)); explicit ``offsets`` select custom windows.
    """
    if isinstance(construction, str):
        construction = Construction(construction.lower())
    L = int(window_length)
    if L < 1:
        raise ValueError("window length must be at least 1")
    N = traj.length
    if construction is Construction.HANKEL:
        if N < L:
            raise ValueError(f"trajectory length {N} is shorter than the window {L}")
        offs = np.arange(N - L + 1)
    elif construction is Construction.PAGE:
        m = N // L
        if m < 1:
            raise ValueError(f"trajectory length {N} is shorter than the window {L}")
        offs = np.arange(m) * L
    else:
        if offsets is None:
            raise ValueError("custom construction requires explicit offsets")
        offs = np.asarray(list(offsets), dtype=int)
        if offs.size == 0:
            raise ValueError("need at least one offset")
        if offs.min() < 0 or offs.max() + L > N:
            raise ValueError("offsets exceed trajectory bounds")
    cols = [traj.window(int(t0), L) for t0 in offs]
    return SignalMatrix(
        h=np.column_stack(cols),
        construction=construction,
        offsets=offs,
        window_length=L,
        n_u=traj.n_u,
        n_y=traj.n_y,
    )


def _numerical_rank(m: np.ndarray, rtol: float) -> int:
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class IdentifiabilityReport:
    rank_h0: int
    rank_phi_h0: int
    required: int
    satisfied: bool


def check_identifiability(
    h0: SignalMatrix, phi: np.ndarray, n_x: int, tol: float = 1e-8
) -> IdentifiabilityReport:
    """Check rank(H0) = rank(Phi H0) = n_u L + n_x on a noise-free signal matrix."""
    required = h0.n_u * h0.window_length + n_x
    rank_h0 = _numerical_rank(h0.h, tol)
    rank_phi = _numerical_rank(np.asarray(phi, dtype=float) @ h0.h, tol)
    return IdentifiabilityReport(
        rank_h0=rank_h0,
        rank_phi_h0=rank_phi,
        required=required,
        satisfied=(rank_h0 == required and rank_phi == required),
    )


def check_persistent_excitation(
    u: np.ndarray | Sequence[np.ndarray], order: int, tol: float = 1e-8
) -> bool:
    """True iff the depth-``order`` mosaic Hankel matrix of the input(s) has full row rank.

    Multiple input records contribute their Hankel blocks side by side
    (collective excitation).
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    seqs = [u] if isinstance(u, np.ndarray) and np.asarray(u).ndim <= 2 else list(u)
    blocks = []
    n_u = None
    for seq in seqs:
        arr = np.atleast_2d(np.asarray(seq, dtype=float))
        if arr.shape[0] < order:
            raise ValueError(f"input record of length {arr.shape[0]} shorter than order {order}")
        if n_u is None:
            n_u = arr.shape[1]
        elif arr.shape[1] != n_u:
            raise ValueError("input records have differing channel counts")
        cols = arr.shape[0] - order + 1
        blk = np.column_stack([arr[i : i + order].ravel() for i in range(cols)])
        blocks.append(blk)
    mosaic = np.hstack(blocks)
    return _numerical_rank(mosaic, tol) == n_u * order
