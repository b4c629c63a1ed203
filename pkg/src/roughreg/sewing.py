"""Deterministic sewing over dyadic partitions and the Monte-Carlo harness that
estimates the two stochastic-sewing rate exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .timegrid import TimeGrid, loglog_fit


@dataclass(frozen=True, eq=False)
class Germ:
    """Two-parameter approximant A_{s,t} evaluated on grid index pairs.

    ``evaluator(si, ti)`` receives integer arrays of equal length and returns
    an array whose first axis runs over the pairs.
    """

    grid: TimeGrid
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    context: dict = field(default_factory=dict)

    def __call__(self, si, ti):
        si = np.atleast_1d(np.asarray(si, dtype=np.int64))
        ti = np.atleast_1d(np.asarray(ti, dtype=np.int64))
        return np.asarray(self.evaluator(si, ti), dtype=float)

    def delta(self, si, ui, ti):
        return self(si, ti) - self(si, ui) - self(ui, ti)


@dataclass(frozen=True)
class SewReport:
    level_sums: np.ndarray
    cauchy: np.ndarray
    order: float
    r2: float
    limit: np.ndarray
    limit_path: np.ndarray


def _interval_indices(grid: TimeGrid, interval):
    if interval is None:
        return 0, grid.n - 1
    S, T = interval
    return grid.index_of(S), grid.index_of(T)


def riemann_path(germ: Germ, points: np.ndarray) -> np.ndarray:
    """Cumulative sums of the germ over consecutive index points."""
    vals = germ(points[:-1], points[1:])
    zero = np.zeros((1,) + vals.shape[1:])
    return np.concatenate([zero, np.cumsum(vals, axis=0)])


def sew(germ: Germ, interval=None, max_level: int | None = None) -> SewReport:
    """Riemann sums of ``germ`` over dyadic partitions of the interval.

    The limit is the finest-level sum; the order is fitted from the decay of
    successive Cauchy differences (``inf`` when they vanish).
    """
    i0, i1 = _interval_indices(germ.grid, interval)
    cells = i1 - i0
    top = int(round(math.log2(cells))) if cells > 0 else -1
    if cells <= 0 or 2**top != cells:
        raise ValueError("interval must span a power-of-two number of cells")
    if max_level is None:
        max_level = top
    if max_level > top:
        raise ValueError("max_level exceeds the grid resolution")
    sums = []
    path = None
    for lev in range(max_level + 1):
        pts = i0 + np.arange(2**lev + 1) * (cells // 2**lev)
        path = riemann_path(germ, pts)
        sums.append(path[-1])
    sums = np.array(sums)
    diffs = np.array([float(np.max(np.abs(sums[k + 1] - sums[k]))) for k in range(max_level)])
    order, r2 = math.inf, 1.0
    pos = diffs > 0
    if pos.sum() >= 2:
        # difference at level k is of size (2^-k)^order
        hs = 2.0 ** -np.arange(max_level)[pos]
        order, _, _, r2 = loglog_fit(hs, diffs[pos])
    elif pos.sum() == 1:
        order, r2 = float("nan"), float("nan")
    return SewReport(sums, diffs, order, r2, sums[-1], path)


def delta_defect_fit(
    germ: Germ,
    interval=None,
    min_level: int = 1,
    max_level: int | None = None,
    triples_per_level: int | None = None,
):
    """Fit max |δA_{s,u,t}| ≈ C |t-s|^theta over dyadic triples with u the midpoint.

    With ``triples_per_level`` set, each scale uses that many evenly spaced
    triples instead of all of them, so the maximum is taken over the same
    number of samples at every scale (for random germs the maximum over all
    2^k triples carries a growing logarithmic factor that biases the slope).

    Returns ``(theta, C)``; an exactly additive germ gives ``(inf, 0)``.
    """
    i0, i1 = _interval_indices(germ.grid, interval)
    cells = i1 - i0
    top = int(round(math.log2(cells)))
    if max_level is None:
        max_level = top - 1
    t = germ.grid.times
    levels = list(range(min_level, max_level + 1))
    if len(levels) < 3:
        raise ValueError("need at least three scales")
    widths, worst = [], []
    for lev in levels:
        step = cells // 2**lev
        s = i0 + np.arange(2**lev) * step
        if triples_per_level is not None and s.size > triples_per_level:
            s = s[np.linspace(0, s.size - 1, triples_per_level).round().astype(int)]
        d = germ.delta(s, s + step // 2, s + step)
        widths.append(t[s[0] + step] - t[s[0]])
        worst.append(float(np.max(np.abs(d))))
    worst = np.array(worst)
    scale = max(1.0, float(np.max(np.abs(germ(np.array([i0]), np.array([i1]))))))
    if np.all(worst <= 1e-14 * scale):
        return math.inf, 0.0
    keep = worst > 0
    slope, c, _, _ = loglog_fit(np.array(widths)[keep], worst[keep])
    return slope, math.exp(c)


@dataclass(frozen=True)
class RateFit:
    scales: np.ndarray
    lp_norms: np.ndarray
    slope: float
    stderr: float
    p: float
    noise: np.ndarray | None = None
    reliable: bool = True


def _fit(scales, norms, p, noise=None, reliable=True) -> RateFit:
    scales = np.asarray(scales, float)
    norms = np.asarray(norms, float)
    if np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        return RateFit(scales, norms, float("nan"), float("nan"), p, noise, False)
    slope, _, stderr, _ = loglog_fit(scales, norms)
    return RateFit(scales, norms, slope, stderr, p, noise, reliable)


def fit_rate(scales, norms, p=2.0) -> RateFit:
    """Log-log slope of L^p norms against scales."""
    scales = np.asarray(scales, float)
    if scales.size < 3:
        raise ValueError("need at least three scales")
    if np.any(np.diff(scales) >= 0):
        raise ValueError("scales must be strictly decreasing")
    return _fit(scales, norms, p)


def lp_norm(samples, p):
    """(E|X|^p)^{1/p} with the Euclidean norm on each sample's components."""
    x = np.asarray(samples, float).reshape(len(samples), -1)
    return float(np.mean(np.linalg.norm(x, axis=1) ** p) ** (1.0 / p))


DEFAULT_ANCHORS = (0.0, 0.125, 0.25, 0.5)


class GermSample(Protocol):
    """One outer replica of a random germ, queried one anchor at a time."""

    def values(self, s: float, ts: np.ndarray) -> np.ndarray:
        """A_{s,t} for every t in ``ts``; first axis runs over ``ts``."""
        ...

    def conditional_defects(self, s: float, us: np.ndarray, ts: np.ndarray, inner: int):
        """Monte-Carlo estimates of E_s δA_{s,u,t} and their standard errors."""
        ...


def _check_scales(scales):
    scales = np.asarray(scales, float)
    if scales.size < 3 or np.any(np.diff(scales) >= 0):
        raise ValueError("need at least three strictly decreasing scales")
    return scales


def mc_rate_beta1(
    germ_family: Callable[[int], GermSample],
    p: float = 2.0,
    scales: Sequence[float] = (2.0**-2, 2.0**-3, 2.0**-4, 2.0**-5),
    replicas: int = 2000,
    anchors: Sequence[float] = DEFAULT_ANCHORS,
    seed: int = 0,
) -> RateFit:
    """Fit the exponent of ‖A_{s,s+Δ}‖_{L^p} ~ Δ^{β₁}, maximised over anchors."""
    if p < 2:
        raise ValueError("p must be at least 2")
    scales = _check_scales(scales)
    samples = [[] for _ in anchors]
    for r in range(replicas):
        g = germ_family(seed + r)
        for a, s in enumerate(anchors):
            samples[a].append(np.asarray(g.values(s, s + scales), float).reshape(scales.size, -1))
    stacked = [np.stack(x, axis=1) for x in samples]  # (scales, replicas, comps)
    norms = np.array([[lp_norm(x[k], p) for k in range(scales.size)] for x in stacked])
    best = norms.max(axis=0)
    if np.any(best <= 0):
        raise ValueError("degenerate (zero) norms")
    return _fit(scales, best, p)


def mc_rate_beta2(
    germ_family: Callable[[int], GermSample],
    p: float = 2.0,
    scales: Sequence[float] = (2.0**-2, 2.0**-3, 2.0**-4, 2.0**-5),
    outer: int = 2000,
    inner: int = 200,
    anchors: Sequence[float] = DEFAULT_ANCHORS,
    seed: int = 0,
    noise_limit: float = 0.2,
) -> RateFit:
    """Fit the exponent of ‖E_s δA_{s,(s+t)/2,t}‖_{L^p} ~ |t-s|^{β₂}.

    The fit is flagged unreliable when the inner-sample standard error exceeds
    ``noise_limit`` times the estimated norm at some scale.
    """
    if inner < 100:
        raise ValueError("inner must be at least 100")
    scales = _check_scales(scales)
    means = [[] for _ in anchors]
    errs = [[] for _ in anchors]
    for r in range(outer):
        g = germ_family(seed + r)
        for a, s in enumerate(anchors):
            m, e = g.conditional_defects(s, s + scales / 2, s + scales, inner)
            means[a].append(np.asarray(m, float).reshape(scales.size, -1))
            errs[a].append(np.asarray(e, float).reshape(scales.size, -1))
    means = [np.stack(x, axis=1) for x in means]
    errs = [np.stack(x, axis=1) for x in errs]
    norms = np.array([[lp_norm(x[k], p) for k in range(scales.size)] for x in means])
    noise = np.array([[lp_norm(x[k], p) for k in range(scales.size)] for x in errs])
    cols = np.arange(scales.size)
    pick = norms.argmax(axis=0)
    best, best_noise = norms[pick, cols], noise[pick, cols]
    reliable = bool(np.all(best > 0) and np.all(best_noise < noise_limit * best))
    return _fit(scales, best, p, best_noise, reliable)


class PlantedGermSample:
    """A_{s,t} = |t−s|^beta · Z with Z standard normal per (replica, anchor);
    E_s δA is planted as |t−s|^beta2 · Z' plus inner-sample noise."""

    def __init__(self, seed: int, beta: float = 1.3, beta2: float = 1.5, noise: float = 0.0):
        self.seed, self.beta, self.beta2, self.noise = seed, beta, beta2, noise

    def _rng(self, s, tag):
        return np.random.default_rng([self.seed, int(round(s * 2**20)), tag])

    def values(self, s, ts):
        z = self._rng(s, 0).standard_normal()
        return (np.asarray(ts) - s) ** self.beta * z

    def conditional_defects(self, s, us, ts, inner):
        rng = self._rng(s, 1)
        width = np.asarray(ts) - s
        z = rng.standard_normal()
        draws = width[:, None] ** self.beta2 * z + self.noise * rng.standard_normal((width.size, inner))
        return draws.mean(axis=1), draws.std(axis=1, ddof=1) / math.sqrt(inner)
