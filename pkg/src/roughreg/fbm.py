"""Fractional Brownian motion: Volterra kernel, covariance, samplers and the
past/future decomposition used to realise conditional expectations."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg, special

from .quadrature import gauss_legendre_unit, graded_rule, power_rule
from .timegrid import Path, TimeGrid, loglog_fit

ORIGINAL_TAIL = -1
"""Inner seed that makes :func:`conditional_resample` keep the original tail."""


def hash64(*parts: int) -> int:
    """Stable 64-bit hash of a tuple of integers (used to derive nested seeds)."""
    data = b"".join(struct.pack("<q", int(p)) for p in parts)
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little") >> 1


@dataclass(frozen=True)
class FbmParams:
    H: float
    d0: int = 1
    cH: float = field(init=False)

    def __post_init__(self):
        if not 1 / 3 < self.H < 0.5:
            raise ValueError("H must lie in (1/3, 1/2)")
        if self.d0 < 1:
            raise ValueError("d0 must be positive")
        H = self.H
        c = np.sqrt(2 * H / ((1 - 2 * H) * special.beta(1 - 2 * H, H + 0.5)))
        object.__setattr__(self, "cH", float(c))


def _check_pair(t, s):
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    if np.any(s <= 0) or np.any(s >= t):
        raise ValueError("need 0 < s < t")
    return t, s


def _inner_integral_quad(t, s, H, levels=12, nodes=64):
    """∫_s^t u^{H-3/2}(u-s)^{H-1/2} du via u = s + v², graded Gauss–Legendre in v."""
    L = np.sqrt(t - s)
    v, w = graded_rule(np.zeros_like(L), L, levels=levels, nodes=nodes, ends="left")
    sb = s[..., None]
    f = 2.0 * v ** (2 * H) * (sb + v * v) ** (H - 1.5)
    return np.sum(f * w, axis=-1)


def _inner_integral_beta(t, s, H):
    """Same integral in closed form through the regularised incomplete Beta function."""
    a, b = H + 0.5, 1.0 - 2.0 * H
    return s ** (2 * H - 1) * special.beta(a, b) * special.betainc(a, b, 1.0 - s / t)


def _kernel_from_inner(t, s, H, cH, inner):
    return cH * ((t / s) ** (H - 0.5) * (t - s) ** (H - 0.5) - (H - 0.5) * s ** (0.5 - H) * inner)


def kernel_K(t, s, params: FbmParams, method: str = "quad"):
    """Volterra kernel of fBm for 0 < s < t.

    ``method="quad"`` integrates numerically; ``method="beta"`` uses the
    incomplete Beta function and is much faster for bulk evaluation.
    """
    t, s = _check_pair(t, s)
    H = params.H
    if method == "quad":
        inner = _inner_integral_quad(t, s, H)
    elif method == "beta":
        inner = _inner_integral_beta(t, s, H)
    else:
        raise ValueError(f"unknown method {method!r}")
    out = _kernel_from_inner(t, s, H, params.cH, inner)
    return float(out) if out.ndim == 0 else out


def _kernel_fast(t, r, params):
    """Kernel on arbitrary arrays; zero where r >= t."""
    t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
    out = np.zeros(t.shape)
    m = (r < t) & (r > 0)
    if np.any(m):
        tt, rr = t[m], r[m]
        out[m] = _kernel_from_inner(tt, rr, params.H, params.cH, _inner_integral_beta(tt, rr, params.H))
    return out


def kernel_K_dt(t, s, params: FbmParams):
    t, s = _check_pair(t, s)
    H = params.H
    out = params.cH * (H - 0.5) * (t / s) ** (H - 0.5) * (t - s) ** (H - 1.5)
    return float(out) if out.ndim == 0 else out


def covariance_Q(s, t, params: FbmParams):
    s, t = np.asarray(s, float), np.asarray(t, float)
    h2 = 2 * params.H
    out = 0.5 * (s**h2 + t**h2 - np.abs(t - s) ** h2)
    return float(out) if out.ndim == 0 else out


def past_kernel_gram(s, times_a, times_b, params: FbmParams, levels=16, nodes=32):
    """Matrix of ∫_0^s K(a, r) K(b, r) dr for a in times_a, b in times_b (all ≥ s)."""
    times_a = np.atleast_1d(np.asarray(times_a, float))
    times_b = np.atleast_1d(np.asarray(times_b, float))
    if s <= 0:
        return np.zeros((times_a.size, times_b.size))
    r, w = graded_rule(0.0, s, levels=levels, nodes=nodes, ends="both")
    Ka = _kernel_fast(times_a[:, None], r[None, :], params)
    Kb = _kernel_fast(times_b[:, None], r[None, :], params)
    return (Ka * w) @ Kb.T


def covariance_representation_residual(grid: TimeGrid, params: FbmParams, levels: int = 16) -> float:
    """Max over grid pairs of |∫_0^{s∧t} K(t,r)K(s,r)dr − Q(s,t)|."""
    t = grid.times
    worst = 0.0
    for i, s in enumerate(t):
        if s <= 0:
            continue
        later = t[i:]
        rep = past_kernel_gram(s, [s], later, params, levels=levels)[0]
        worst = max(worst, float(np.max(np.abs(rep - covariance_Q(s, later, params)))))
    return worst


def conditional_cov_Qs(s, t, tp, params: FbmParams, levels: int = 16):
    """Q(t, t') minus the part of the covariance explained by the noise before s."""
    if t < s or tp < s:
        raise ValueError("need s <= t and s <= t'")
    return float(covariance_Q(t, tp, params) - past_kernel_gram(s, [t], [tp], params, levels=levels)[0, 0])


def conditional_cov_matrix(s, times, params: FbmParams, levels: int = 16):
    times = np.asarray(times, float)
    Q = covariance_Q(times[:, None], times[None, :], params)
    C = Q - past_kernel_gram(s, times, times, params, levels=levels)
    return 0.5 * (C + C.T)


def _cholesky_lower(C, jitter=1e-12):
    c, info = linalg.lapack.dpotrf(C, lower=1, clean=1)
    if info == 0:
        return c
    c, info2 = linalg.lapack.dpotrf(C + jitter * np.eye(C.shape[0]), lower=1, clean=1)
    if info2 == 0:
        return c
    raise np.linalg.LinAlgError(f"covariance is not positive definite: leading minor of order {info2} fails")


def sample_fbm_cholesky(grid: TimeGrid, params: FbmParams, seed: int, n_samples: int | None = None):
    """Exact Gaussian fBm sample(s) on ``grid``.

    Returns a :class:`Path` with ``d0`` components, or an array of shape
    (n_samples, n, d0) when ``n_samples`` is given.
    """
    t = grid.times
    pos = t > 0
    L = _cholesky_lower(covariance_Q(t[pos][:, None], t[pos][None, :], params))
    rng = np.random.default_rng(seed)
    count = 1 if n_samples is None else n_samples
    Z = rng.standard_normal((count, pos.sum(), params.d0))
    out = np.zeros((count, t.size, params.d0))
    out[:, pos] = np.einsum("ij,sjc->sic", L, Z)
    if n_samples is None:
        return Path(grid, out[0])
    return out


@dataclass(frozen=True, eq=False)
class GaussianDriver:
    """Wiener increments on a grid; ``dW[k]`` belongs to cell [t_k, t_{k+1}]."""

    grid: TimeGrid
    seed: int
    dW: np.ndarray

    def __post_init__(self):
        dW = np.array(self.dW, dtype=float)
        if dW.ndim == 1:
            dW = dW[:, None]
        if dW.shape[0] != self.grid.n - 1:
            raise ValueError("one increment per cell expected")
        dW.setflags(write=False)
        object.__setattr__(self, "dW", dW)

    @classmethod
    def from_seed(cls, grid: TimeGrid, seed: int, d0: int = 1):
        dt = np.diff(grid.times)
        z = np.random.default_rng(seed).standard_normal((grid.n - 1, d0))
        return cls(grid, seed, z * np.sqrt(dt)[:, None])

    @property
    def d0(self):
        return self.dW.shape[1]

    def coarsen(self, factor: int):
        """Driver on every ``factor``-th grid point, summing the fine increments."""
        if (self.grid.n - 1) % factor:
            raise ValueError("factor must divide the number of cells")
        dW = self.dW.reshape(-1, factor, self.d0).sum(axis=1)
        return GaussianDriver(TimeGrid(self.grid.times[::factor]), self.seed, dW)


def _cell_rule(grid: TimeGrid, nodes: int):
    t = grid.times
    return power_rule(t[:-1], t[1:], nodes=nodes)


@lru_cache(maxsize=16)
def _volterra_matrix_cached(grid: TimeGrid, H: float, d0: int, nodes: int):
    params = FbmParams(H, d0)
    t = grid.times
    r, w = _cell_rule(grid, nodes)
    h = np.diff(t)
    M = np.zeros((t.size, t.size - 1))
    for j in range(1, t.size):
        vals = _kernel_fast(t[j], r[:j], params)
        M[j, :j] = np.sum(vals * w[:j], axis=1) / h[:j]
    M.setflags(write=False)
    return M


def volterra_matrix(grid: TimeGrid, params: FbmParams, nodes: int = 24):
    """Cell-averaged kernel: entry [j, i] is the mean of K(t_j, ·) over cell i."""
    return _volterra_matrix_cached(grid, params.H, params.d0, nodes)


def sample_fbm_volterra(driver: GaussianDriver, params: FbmParams) -> Path:
    M = volterra_matrix(driver.grid, params)
    return Path(driver.grid, M @ driver.dW)


@dataclass(frozen=True, eq=False)
class ConditionalSplit:
    s: float
    barB: Path
    tildeB: Path


def conditional_split(driver: GaussianDriver, params: FbmParams, s: float) -> ConditionalSplit:
    k = driver.grid.index_of(s)
    M = volterra_matrix(driver.grid, params)[k:]
    past = M[:, :k] @ driver.dW[:k]
    future = M[:, k:] @ driver.dW[k:]
    sub = driver.grid.restrict(k, driver.grid.n - 1)
    return ConditionalSplit(float(driver.grid.times[k]), Path(sub, past), Path(sub, future))


def resampled_tail(driver: GaussianDriver, k: int, inner_seed: int):
    """Fresh Wiener increments for cells k.. derived from (seed, k, inner_seed)."""
    dt = np.diff(driver.grid.times[k:])
    rng = np.random.default_rng(hash64(driver.seed, k, inner_seed))
    return rng.standard_normal((dt.size, driver.d0)) * np.sqrt(dt)[:, None]


def conditional_resample(driver: GaussianDriver, s: float, inner_seed: int) -> GaussianDriver:
    """Keep the increments before ``s``, redraw those after it.

    ``inner_seed=ORIGINAL_TAIL`` returns the driver unchanged.
    """
    k = driver.grid.index_of(s)
    if inner_seed == ORIGINAL_TAIL:
        return driver
    dW = np.array(driver.dW)
    dW[k:] = resampled_tail(driver, k, inner_seed)
    return GaussianDriver(driver.grid, hash64(driver.seed, k, inner_seed), dW)


@dataclass(frozen=True)
class ConditionalStructure:
    max_offdiag: float
    min_dominance_slack: float
    max_increment_ratio: float
    min_condvar_ratio: float
    theta_fit: float


def conditional_structure_checks(params: FbmParams, grid: TimeGrid, s: float) -> ConditionalStructure:
    """Negative correlation, diagonal dominance, the increment bound and the
    conditional variance lower bound for the future part after ``s``."""
    k = grid.index_of(s)
    t = grid.times[k:]
    C = conditional_cov_matrix(s, t, params, levels=24)
    D = C[1:, 1:] - C[:-1, 1:] - C[1:, :-1] + C[:-1, :-1]
    m = D.shape[0]
    off = D[~np.eye(m, dtype=bool)]
    max_off = float(off.max()) if off.size else 0.0
    slack = np.diag(D) - (np.abs(D).sum(axis=1) - np.abs(np.diag(D)))
    # all pairs of increments over grid intervals
    a, b = np.triu_indices(t.size, k=1)
    inc = C[b][:, b] - C[b][:, a] - C[a][:, b] + C[a][:, a]
    ratio = np.max(inc / (t[b] - t[a])[None, :] ** (2 * params.H))
    # conditional variance of the increment over [u, v] given increments outside it
    widths, condvar = [], []
    for u, v in zip(a, b):
        inside = np.arange(u, v)
        outside = np.setdiff1d(np.arange(m), inside)
        one = np.ones(inside.size)
        var = one @ D[np.ix_(inside, inside)] @ one
        if outside.size:
            cross = D[np.ix_(outside, inside)] @ one
            Soo = D[np.ix_(outside, outside)]
            try:
                sol = linalg.solve(Soo, cross, assume_a="pos")
            except linalg.LinAlgError:
                sol = linalg.solve(Soo + 1e-12 * np.eye(outside.size), cross, assume_a="pos")
            var -= cross @ sol
        widths.append(t[v] - t[u])
        condvar.append(var)
    widths, condvar = np.array(widths), np.array(condvar)
    if np.any(condvar <= 0):
        theta = float("nan")
        min_ratio = float(condvar.min())
    else:
        theta = loglog_fit(widths, condvar)[0]
        min_ratio = float(np.min(condvar / widths**theta))
    return ConditionalStructure(max_off, float(slack.min()), float(ratio), min_ratio, theta)


class IncrementGermSample:
    """The additive germ A_{s,t} = B_t − B_s of one Volterra fBm sample."""

    def __init__(self, seed: int, params: FbmParams, level: int = 8):
        from .timegrid import dyadic_grid

        self.B = sample_fbm_volterra(GaussianDriver.from_seed(dyadic_grid(level), seed, params.d0), params)

    def values(self, s, ts):
        g = self.B.grid
        return np.array([self.B.values[g.index_of(t)] - self.B.values[g.index_of(s)] for t in ts])

    def conditional_defects(self, s, us, ts, inner):
        z = np.zeros((len(ts), self.B.dim))
        return z, z
