"""Input/output records, Hankel matrices and SVD reduction of the data matrix."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

PE_RTOL = 1e-10


class DimensionError(ValueError):
    """Raised when sequence lengths and window sizes are incompatible."""


class ShortDataWarning(UserWarning):
    """The Hankel matrix has fewer columns than rows, so it cannot have full row rank."""


def _as_2d(signal) -> np.ndarray:
    arr = np.asarray(signal, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError(f"signal must be 1-D or 2-D (time first), got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Trajectory:
    """Synchronised torque and output samples.

    ``y[k]`` is the output measured after ``u[k]`` has been applied for one
    sample period.
    """

    u: np.ndarray
    y: np.ndarray
    dt: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if u.shape[0] != y.shape[0] or u.shape[0] < 1:
            raise DimensionError(f"u and y need equal nonzero length, got {u.shape[0]} and {y.shape[0]}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.u.shape[0]

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def to_csv(self, path) -> None:
        if self.u.ndim != 1 or self.y.ndim != 1:
            raise DimensionError("CSV export supports scalar input and output only")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "u", "y"])
            for t, u, y in zip(self.t, self.u, self.y):
                writer.writerow([repr(float(t)), repr(float(u)), repr(float(y))])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["t", "u", "y"]:
                raise ValueError(f"{path}: expected header t,u,y, got {reader.fieldnames}")
            rows = [(float(r["t"]), float(r["u"]), float(r["y"])) for r in reader]
        if not rows:
            raise DimensionError(f"{path}: no samples")
        t, u, y = (np.array(c) for c in zip(*rows))
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(u, y, dt)


def build_hankel(signal, depth: int) -> np.ndarray:
    """Block Hankel matrix of the given depth.

    Column ``j`` is the window ``signal[j:j + depth]`` stacked sample by
    sample, so the matrix has ``depth * dim`` rows and ``T - depth + 1``
    columns.
    """
    w = _as_2d(signal)
    T, dim = w.shape
    if depth < 1 or depth > T:
        raise DimensionError(f"depth must lie in [1, T={T}], got {depth}")
    windows = np.lib.stride_tricks.sliding_window_view(w, depth, axis=0)  # (T-L+1, dim, L)
    return np.ascontiguousarray(windows.transpose(2, 1, 0).reshape(depth * dim, T - depth + 1))


def is_persistently_exciting(signal, order: int, rtol: float = PE_RTOL) -> bool:
    """Whether the depth-``order`` Hankel matrix of ``signal`` has full row rank."""
    if order < 1:
        raise DimensionError(f"order must be >= 1, got {order}")
    w = _as_2d(signal)
    T, dim = w.shape
    rows = order * dim
    if order > T or T - order + 1 < rows:
        warnings.warn(f"signal of length {T} is too short for excitation order {order} "
                      f"(needs at least {(dim + 1) * order - 1} samples)", ShortDataWarning, stacklevel=2)
        return False
    sv = np.linalg.svd(build_hankel(w, order), compute_uv=False)
    return bool(sv[0] > 0 and sv[-1] > rtol * sv[0])


def min_data_length(m: int, n: int, depth: int) -> int:
    """Shortest record for which an input can be persistently exciting of order ``n + depth``."""
    return (m + 1) * (n + depth) - 1


@dataclass(frozen=True)
class HankelSystem:
    """Past/future split of the input and output Hankel matrices."""

    up: np.ndarray
    uf: np.ndarray
    yp: np.ndarray
    yf: np.ndarray
    t_ini: int
    horizon: int
    m: int = 1
    p: int = 1

    @property
    def depth(self) -> int:
        return self.t_ini + self.horizon

    @property
    def n_cols(self) -> int:
        return self.up.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        """``[Up; Uf; Yp; Yf]``, the row order used by the DeePC equality."""
        return np.vstack([self.up, self.uf, self.yp, self.yf])


def split_past_future(traj: Trajectory, t_ini: int, horizon: int) -> HankelSystem:
    """Build the depth ``t_ini + horizon`` Hankel matrices and split off the first ``t_ini`` block rows."""
    if t_ini < 0 or horizon < 1:
        raise DimensionError(f"need t_ini >= 0 and horizon >= 1, got {t_ini}, {horizon}")
    depth = t_ini + horizon
    if depth > len(traj):
        raise DimensionError(f"t_ini + horizon = {depth} exceeds data length {len(traj)}")
    u = _as_2d(traj.u)
    y = _as_2d(traj.y)
    m, p = u.shape[1], y.shape[1]
    hu = build_hankel(u, depth)
    hy = build_hankel(y, depth)
    return HankelSystem(up=hu[: t_ini * m], uf=hu[t_ini * m:], yp=hy[: t_ini * p], yf=hy[t_ini * p:],
                        t_ini=t_ini, horizon=horizon, m=m, p=p)


def choose_rank(singular_values, min_ratio: float = 10.0) -> int:
    """Locate the turning point of a descending singular value list.

    Returns the index ``r`` (1-based) maximising ``sigma_r / sigma_{r+1}``.
    When no ratio reaches ``min_ratio`` the spectrum has no turning point and
    every value is kept.
    """
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0:
        raise DimensionError("empty singular value list")
    if s.size == 1:
        return 1
    tiny = np.finfo(float).tiny
    with np.errstate(divide="ignore"):
        gaps = np.log(np.maximum(s[:-1], tiny)) - np.log(np.maximum(s[1:], tiny))
    i = int(np.argmax(gaps))
    if gaps[i] < np.log(min_ratio):
        return int(s.size)
    return i + 1


RankRule = Union[int, str, Callable[[np.ndarray], int]]


@dataclass(frozen=True)
class ReducedHankel:
    """``h_bar = W1 Sigma1``: the leading ``rank`` left singular directions of the data matrix.

    Row blocks keep the ``[Up; Uf; Yp; Yf]`` layout, so ``up`` .. ``yf``
    are row slices of ``h_bar``.
    """

    h_bar: np.ndarray
    rank: int
    singular_values: np.ndarray
    t_ini: int
    horizon: int
    m: int = 1
    p: int = 1
    right_vectors: np.ndarray | None = field(default=None, repr=False)

    def _rows(self):
        a = self.t_ini * self.m
        b = a + self.horizon * self.m
        c = b + self.t_ini * self.p
        return a, b, c

    @property
    def up(self):
        a, _, _ = self._rows()
        return self.h_bar[:a]

    @property
    def uf(self):
        a, b, _ = self._rows()
        return self.h_bar[a:b]

    @property
    def yp(self):
        _, b, c = self._rows()
        return self.h_bar[b:c]

    @property
    def yf(self):
        _, _, c = self._rows()
        return self.h_bar[c:]

    @property
    def stacked(self) -> np.ndarray:
        return self.h_bar

    @property
    def depth(self) -> int:
        return self.t_ini + self.horizon

    @property
    def n_cols(self) -> int:
        return self.rank


def svd_reduce(hankel: HankelSystem, rank_rule: RankRule = "gap") -> ReducedHankel:
    """Compress the data matrix to its leading singular directions.

    ``rank_rule`` is ``"gap"`` (turning point via :func:`choose_rank`), an
    integer for a fixed rank, or a callable taking the singular values.
    """
    stacked = hankel.stacked
    if stacked.size == 0:
        raise DimensionError("empty data matrix")
    try:
        w, s, vt = np.linalg.svd(stacked, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"SVD of the data matrix failed: {exc}") from exc
    if rank_rule == "gap":
        r = choose_rank(s)
    elif callable(rank_rule):
        r = int(rank_rule(s))
    else:
        r = int(rank_rule)
    if not 1 <= r <= s.size:
        raise DimensionError(f"rank must lie in [1, {s.size}], got {r}")
    h_bar = w[:, :r] * s[:r]
    return ReducedHankel(h_bar=h_bar, rank=r, singular_values=s, t_ini=hankel.t_ini,
                         horizon=hankel.horizon, m=hankel.m, p=hankel.p, right_vectors=vt[:r].T)


def numerical_rank(matrix, rtol: float = 1e-9) -> int:
    s = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def load_trajectory(path: str | Path) -> Trajectory:
    return Trajectory.from_csv(path)
