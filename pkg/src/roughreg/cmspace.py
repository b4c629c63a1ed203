"""Cameron–Martin space of fBm: inner products of step functions through the
covariance, the image under K*, projections onto the part of the space
generated after time s, and the interpolation lower-bound ratio."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fbm import FbmParams, _kernel_fast, conditional_cov_matrix, covariance_Q, kernel_K_dt
from .quadrature import graded_rule
from .timegrid import Path, TimeGrid


@dataclass(frozen=True, eq=False)
class StepFunction:
    """h = c_k on [b_k, b_{k+1}), zero outside [b_0, b_K)."""

    breakpoints: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, float)
        c = np.asarray(self.coefficients, float)
        if c.ndim == 1:
            c = c[:, None]
        if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing, at least two")
        if b[0] < 0 or b[-1] > 1:
            raise ValueError("support must lie in [0, 1]")
        if c.shape[0] != b.size - 1:
            raise ValueError("one coefficient per interval expected")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "coefficients", c)

    @property
    def d0(self):
        return self.coefficients.shape[1]

    def __call__(self, t):
        t = np.asarray(t, float)
        k = np.searchsorted(self.breakpoints, t, side="right") - 1
        inside = (k >= 0) & (k < self.coefficients.shape[0])
        out = self.coefficients[np.clip(k, 0, self.coefficients.shape[0] - 1)]
        return np.where(inside[..., None], out, 0.0)

    def scaled(self, a: float) -> "StepFunction":
        return StepFunction(self.breakpoints, a * self.coefficients)

    def indicator_form(self):
        """Times t_k and weights a_k with h = Σ a_k 1_{[0,t_k]}."""
        b, c = self.breakpoints, self.coefficients
        a = np.zeros((b.size, c.shape[1]))
        a[1:] += c
        a[:-1] -= c
        keep = (b > 0) & np.any(a != 0, axis=1)
        return b[keep], a[keep]


def indicator(t: float, start: float = 0.0, d0: int = 1) -> StepFunction:
    """1_{[start, t]}."""
    return StepFunction([start, t], np.ones((1, d0)))


def step_from_path(f: Path) -> StepFunction:
    """Left-point step approximation on the path's grid."""
    return StepFunction(f.grid.times, f.flat()[:-1])


def h_inner(f: StepFunction, g: StepFunction, params: FbmParams) -> float:
    tf, af = f.indicator_form()
    tg, ag = g.indicator_form()
    if tf.size == 0 or tg.size == 0:
        return 0.0
    return float(np.sum((af @ ag.T) * covariance_Q(tf[:, None], tg[None, :], params)))


def _dtK_panel_integrals(r, lo, hi, params, levels=8, nodes=16):
    """∫_lo^hi ∂_t K(t, r) dt for lo > r, with t = r + v²."""
    v, w = graded_rule(np.sqrt(lo - r), np.sqrt(hi - r), levels=levels, nodes=nodes, ends="left")
    t = r[..., None] + v * v
    return np.sum(kernel_K_dt(t, np.broadcast_to(r[..., None], t.shape), params) * 2 * v * w, axis=-1)


def kstar_values(h: StepFunction, r, params: FbmParams, levels: int = 8, nodes: int = 16) -> np.ndarray:
    """(K*h)(r) = K(1,r)h(r) + ∫_r^1 (h(t) − h(r)) ∂_tK(t,r) dt for 0 < r < 1.

    The integral runs panel by panel between the breakpoints of h; the panel
    holding r contributes nothing since h is constant there.
    """
    r = np.atleast_1d(np.asarray(r, float))
    edges = np.unique(np.concatenate([[0.0], h.breakpoints, [1.0]]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    hv = h(mids)
    hr = h(r)
    out = _kernel_fast(1.0, r, params)[:, None] * hr
    for j in range(edges.size - 1):
        lo, hi = edges[j], edges[j + 1]
        live = r < lo
        if not np.any(live):
            continue
        integral = _dtK_panel_integrals(r[live], lo, hi, params, levels, nodes)
        out[live] += (hv[j] - hr[live]) * integral[:, None]
    return out


@dataclass(frozen=True, eq=False)
class KStarImage:
    """K*h sampled at ``times``; ``weights`` (if set) form a quadrature rule."""

    grid: TimeGrid
    values: np.ndarray
    weights: np.ndarray | None = None

    def l2_inner(self, other: "KStarImage") -> float:
        if self.weights is None or self.grid != other.grid:
            raise ValueError("need images on one quadrature rule")
        return float(np.sum(self.weights[:, None] * self.values * other.values))


def kstar_apply(h: StepFunction, grid: TimeGrid, params: FbmParams) -> KStarImage:
    """K*h at the grid times; the value is NaN where the kernel is singular
    (r = 0, and r = 1 unless h vanishes there)."""
    r = grid.times
    vals = np.full((r.size, h.d0), np.nan)
    inner = (r > 0) & (r < 1)
    vals[inner] = kstar_values(h, r[inner], params)
    if r[-1] >= 1 and not np.any(h(np.array([1.0]))):
        vals[-1] = 0.0
    return KStarImage(grid, vals)


def _panel_rule(edges, levels=10, nodes=16):
    x, w = graded_rule(edges[:-1], edges[1:], levels=levels, nodes=nodes, ends="both")
    return x.ravel(), w.ravel()


def kstar_rule(h: StepFunction, s: float, params: FbmParams, extra=()) -> KStarImage:
    """K*h on a graded quadrature rule of [s, 1] split at the breakpoints."""
    edges = np.unique(np.concatenate([[s, 1.0], h.breakpoints, np.asarray(extra, float)]))
    edges = edges[(edges >= s) & (edges <= 1)]
    x, w = _panel_rule(edges)
    return KStarImage(TimeGrid(x), kstar_values(h, x, params), w)


def _kstar_closed(h: StepFunction, r, params):
    tk, ak = h.indicator_form()
    if tk.size == 0:
        return np.zeros((np.size(r), h.d0))
    K = _kernel_fast(tk[None, :], r[:, None], params)
    return K @ ak


def projected_inner(f: StepFunction, g: StepFunction, s: float, params: FbmParams, method: str = "kstar") -> float:
    """∫_s^1 (K*f)(r)·(K*g)(r) dr on a graded rule split at all breakpoints.

    ``method="kstar"`` evaluates K* by quadrature of ∂_tK; ``"closed"`` uses
    K*1_{[0,t]} = K(t, ·) termwise, which is much cheaper for step functions
    with many pieces.
    """
    edges = np.unique(np.concatenate([[s, 1.0], f.breakpoints, g.breakpoints]))
    edges = edges[(edges >= s) & (edges <= 1)]
    x, w = _panel_rule(edges)
    if method == "kstar":
        kf, kg = kstar_values(f, x, params), kstar_values(g, x, params)
    elif method == "closed":
        kf, kg = _kstar_closed(f, x, params), _kstar_closed(g, x, params)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.sum(w[:, None] * kf * kg))


def qs_double_sum(f: Path, g: Path, s: float, params: FbmParams) -> float:
    """Σ_{i,j} f(u_i)·g(r_j) ΔΔQ_s over grid rectangles, left-point values."""
    if f.grid != g.grid:
        raise ValueError("f and g must share a grid")
    times = f.grid.times
    C = conditional_cov_matrix(s, times, params)
    D = C[1:, 1:] - C[1:, :-1] - C[:-1, 1:] + C[:-1, :-1]
    fv, gv = f.flat()[:-1], g.flat()[:-1]
    return float(np.einsum("ic,ij,jc->", fv, D, gv))


def interpolation_ratio(f: Path, s: float, t: float, gamma: float, params: FbmParams, theta_probe: float = 1.0) -> float:
    """‖Π f‖_ℋ / [(t−s)^H ‖f‖_∞ min(1, ‖f‖_∞/‖f‖_{C^γ})^{ϑ/(2γ)}], Π the
    projection onto directions generated after s, f a step approximation."""
    if gamma <= 1 - 2 * params.H:
        raise ValueError("need gamma > 1 - 2H")
    sup = float(np.max(np.abs(f.values)))
    if sup == 0:
        raise ValueError("f vanishes identically")
    from .timegrid import holder_seminorm

    holder = sup + holder_seminorm(f, gamma)
    step = step_from_path(f)
    norm = np.sqrt(max(projected_inner(step, step, s, params, method="closed"), 0.0))
    return float(norm / ((t - s) ** params.H * sup * min(1.0, sup / holder) ** (theta_probe / (2 * gamma))))
