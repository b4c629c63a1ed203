"""Time grids, sampled paths, two-parameter fields and grid seminorms.

All suprema are taken over grid points only, so every norm computed here is a
lower bound for its continuum counterpart.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels


@dataclass(frozen=True)
class ExponentConfig:
    """Hölder exponents used throughout an experiment."""

    H: float = 0.4
    H_minus: float = 0.35
    H_plus: float = 0.45
    alpha: float = 0.1
    gamma_neg: float = -0.9

    def violations(self):
        H, hm, hp, a, g = self.H, self.H_minus, self.H_plus, self.alpha, self.gamma_neg
        checks = [
            (3 * hm > 1, "3H_- > 1"),
            (hm < H, "H_- < H"),
            (H < hp, "H < H_+"),
            (hp < 0.5, "H_+ < 1/2"),
            (a > 1 - 1 / (2 * H), "alpha > 1 - 1/(2H)"),
            (1 + (a - 1) * hp > 0.5, "1 + (alpha - 1) H_+ > 1/2"),
            (-1 / (2 * H) < g < 0, "-1/(2H) < gamma_neg < 0"),
        ]
        return [msg for ok, msg in checks if not ok]

    def validate(self):
        bad = self.violations()
        if bad:
            raise ValueError("exponent constraints violated: " + "; ".join(bad))
        return self


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a grid needs at least two points")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")
        if t[0] < 0 or t[-1] > 1:
            raise ValueError("grid must lie inside [0, 1]")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def n(self):
        return self.times.size

    @property
    def S(self):
        return float(self.times[0])

    @property
    def T(self):
        return float(self.times[-1])

    def index_of(self, t, atol=1e-12):
        """Index of grid time ``t``; raises if ``t`` is not on the grid."""
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > atol:
            raise ValueError(f"time {t} is not a grid point")
        return k

    def restrict(self, i, j):
        """Sub-grid with indices i..j inclusive."""
        return TimeGrid(self.times[i : j + 1])

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and self.times.shape == other.times.shape and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Path:
    """Values sampled on a grid; ``values[k]`` may be a vector or a matrix."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n:
            raise ValueError(f"{v.shape[0]} values for a grid of {self.grid.n} points")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def shape(self):
        return self.values.shape[1:]

    @property
    def dim(self):
        return int(np.prod(self.shape))

    def flat(self):
        return self.values.reshape(self.grid.n, -1)

    def increments(self):
        """Two-parameter field of increments f_t - f_s."""
        v = self.values
        return TwoParamField(self.grid, v[None, :] - v[:, None])

    def restrict(self, i, j):
        return Path(self.grid.restrict(i, j), self.values[i : j + 1])


@dataclass(frozen=True, eq=False)
class TwoParamField:
    """Function of ordered grid pairs, stored densely; entry [i, j] is F_{t_i, t_j}.

    Entries with ``i > j`` carry no meaning and the diagonal is zero.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        n = self.grid.n
        if v.shape[:2] != (n, n):
            raise ValueError("field must be indexed by grid pairs")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def shape(self):
        return self.values.shape[2:]

    def upper_pairs(self):
        i, j = np.triu_indices(self.grid.n, k=1)
        return i, j, self.values[i, j]


@dataclass(frozen=True, eq=False)
class Partition:
    breakpoints: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        if b.size < 2 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be increasing with at least two entries")
        object.__setattr__(self, "breakpoints", _freeze(b))

    @property
    def interval(self):
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    def __len__(self):
        return self.breakpoints.size - 1


def dyadic_grid(level: int, S: float = 0.0, T: float = 1.0) -> TimeGrid:
    if level < 0:
        raise ValueError("level must be nonnegative")
    if not S < T:
        raise ValueError("need S < T")
    k = np.arange(2**level + 1)
    return TimeGrid(S + (T - S) * k / 2**level)


def holder_seminorm(f: Path, gamma: float) -> float:
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    return float(kernels.pair_ratio_max(f.flat(), f.grid.times, gamma, 0.0, 0.0, 0))


def holder_seminorm_2(F: TwoParamField, theta: float) -> float:
    if theta <= 0:
        raise ValueError("theta must be positive")
    i, j, v = F.upper_pairs()
    t = F.grid.times
    mag = np.abs(v.reshape(v.shape[0], -1)).max(axis=1)
    return float(np.max(mag / (t[j] - t[i]) ** theta))


def p_variation(f: Path, rho: float) -> float:
    """Exact grid p-variation (sup over partitions with grid breakpoints)."""
    if rho < 1:
        raise ValueError("rho must be at least 1")
    dp = kernels.pvar_dp(np.ascontiguousarray(f.flat()), float(rho))
    return float(dp[-1] ** (1.0 / rho))


def variation_2d(Q: Callable, rho: float, levels: int, S: float = 0.0, T: float = 1.0) -> float:
    """Two-dimensional rho-variation restricted to pairs of uniform dyadic partitions.

    A lower estimate of the supremum over all partition pairs.
    """
    if rho < 1:
        raise ValueError("rho must be at least 1")
    best = 0.0
    for k1 in range(levels + 1):
        a = S + (T - S) * np.arange(2**k1 + 1) / 2**k1
        for k2 in range(levels + 1):
            b = S + (T - S) * np.arange(2**k2 + 1) / 2**k2
            q = np.asarray(Q(a[:, None], b[None, :]), dtype=float)
            rect = q[1:, 1:] - q[:-1, 1:] - q[1:, :-1] + q[:-1, :-1]
            best = max(best, float(np.sum(np.abs(rect) ** rho)))
    return best ** (1.0 / rho)


def greedy_partition(norm, delta: float, grid: TimeGrid | None = None, rho: float | None = None):
    """Greedy stopping times: each new time is the first grid point at which the
    window norm since the previous time reaches ``delta``.

    ``norm`` is either a callable ``(u, v) -> float`` on grid times, in which
    case ``grid`` is required, or a :class:`Path`, in which case the window
    norm is its grid ``rho``-variation.

    Returns ``(times, N)`` with ``N`` the number of intervals.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if isinstance(norm, Path):
        if rho is None:
            raise ValueError("rho is required for a path norm")
        grid = norm.grid
        flat = np.ascontiguousarray(norm.flat())

        def next_stop(i):
            dp = kernels.pvar_dp(np.ascontiguousarray(flat[i:]), float(rho)) ** (1.0 / rho)
            hit = np.nonzero(dp[1:] >= delta)[0]
            return i + 1 + int(hit[0]) if hit.size else None

    else:
        if grid is None:
            raise ValueError("grid is required for a callable norm")
        t = grid.times

        def next_stop(i):
            for j in range(i + 1, grid.n):
                if norm(t[i], t[j]) >= delta:
                    return j
            return None

    stops = [0]
    while stops[-1] < grid.n - 1:
        j = next_stop(stops[-1])
        stops.append(grid.n - 1 if j is None else j)
    times = grid.times[stops]
    return times, len(stops) - 1


def weighted_holder_norm(w: Path, beta: float, s: float, H: float) -> float:
    """|w(s)| + sup over s<u<t of |w_t - w_u| / ((u-s)^(H-1) (t-u)^beta)."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if abs(w.grid.S - s) > 1e-12:
        raise ValueError("the grid must start at s")
    head = float(np.abs(w.flat()[0]).max())
    if w.grid.n < 3:
        return head
    tail = kernels.pair_ratio_max(np.ascontiguousarray(w.flat()), w.grid.times, beta, s, H - 1.0, 1)
    return head + float(tail)


def loglog_fit(x, y):
    """Least-squares fit of log y = slope * log x + c.

    Returns ``(slope, c, stderr, r2)``.
    """
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    n = lx.size
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    if n > 2:
        s2 = float(resid @ resid) / (n - 2)
        stderr = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    else:
        stderr = float("nan")
    return float(coef[0]), float(coef[1]), stderr, r2


def path_to_csv(path: Path) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    flat = path.flat()
    w.writerow(["t"] + [f"v{k + 1}" for k in range(flat.shape[1])])
    for t, row in zip(path.grid.times, flat):
        w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    return buf.getvalue()


def path_from_csv(text: str, shape=None) -> Path:
    rows = list(csv.reader(io.StringIO(text)))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    values = data[:, 1:]
    if shape is not None:
        values = values.reshape((values.shape[0],) + tuple(shape))
    return Path(TimeGrid(data[:, 0]), values)


def field_to_csv(F: TwoParamField, index_columns=False) -> str:
    """Upper-triangle rows in row-major order, headed ``s,t,v1..`` (or ``i,j,..``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    i, j, v = F.upper_pairs()
    v = v.reshape(v.shape[0], -1)
    w.writerow((["i", "j"] if index_columns else ["s", "t"]) + [f"v{k + 1}" for k in range(v.shape[1])])
    t = F.grid.times
    for a, b, row in zip(i, j, v):
        head = [int(a), int(b)] if index_columns else [repr(float(t[a])), repr(float(t[b]))]
        w.writerow(head + [repr(float(x)) for x in row])
    return buf.getvalue()


def field_from_csv(text: str, grid: TimeGrid, shape=None) -> TwoParamField:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    ncomp = len(header) - 2
    vals = np.zeros((grid.n, grid.n, ncomp))
    for r in body:
        if header[0] == "i":
            a, b = int(r[0]), int(r[1])
        else:
            a, b = grid.index_of(float(r[0])), grid.index_of(float(r[1]))
        vals[a, b] = [float(x) for x in r[2:]]
    if shape is not None:
        vals = vals.reshape((grid.n, grid.n) + tuple(shape))
    return TwoParamField(grid, vals)
