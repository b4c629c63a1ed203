"""Controlled paths and the integrals built from them: rough, Young, singular
Young and the two integrals against a mixed rough path.

Index convention: a derivative carries the direction of the reference path
on its last axis. An integrand of a rough integral against a path of
dimension m carries the integrator component on its last value axis, so
``f`` has shape (n, *out, m) and ``fprime`` has shape (n, *out, m, m); an area
``A[a, b]`` stands for ∫ g^a_{s,r} dg^b_r.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .quadrature import gauss_legendre_unit
from .roughpath import MixedRoughPath, RoughPath
from .sewing import Germ, riemann_path
from .timegrid import Path, TwoParamField, holder_seminorm, holder_seminorm_2, weighted_holder_norm


@dataclass(frozen=True)
class SmoothMap:
    """A map R^k -> R^p given with its first two derivatives.

    ``value`` maps (..., k) to (..., p), ``grad`` to (..., p, k) and ``hess``
    to (..., p, k, k).
    """

    value: Callable
    grad: Callable
    hess: Callable | None = None


def linear_map(A) -> SmoothMap:
    A = np.atleast_2d(np.asarray(A, float))
    p, k = A.shape
    return SmoothMap(
        lambda x: np.einsum("pk,...k->...p", A, x),
        lambda x: np.broadcast_to(A, np.shape(x)[:-1] + (p, k)),
        lambda x: np.zeros(np.shape(x)[:-1] + (p, k, k)),
    )


def scalar_map(f, df, d2f) -> SmoothMap:
    """Componentwise application of a scalar function to a vector."""

    def grad(x):
        return np.einsum("...k,kl->...kl", df(x), np.eye(np.shape(x)[-1]))

    def hess(x):
        k = np.shape(x)[-1]
        e = np.zeros((k, k, k))
        e[np.arange(k), np.arange(k), np.arange(k)] = 1.0
        return np.einsum("...k,kij->...kij", d2f(x), e)

    return SmoothMap(f, grad, hess)


SIN = scalar_map(np.sin, np.cos, lambda x: -np.sin(x))
SQUARE = scalar_map(np.square, lambda x: 2 * x, lambda x: 2 * np.ones_like(x))


@dataclass(frozen=True, eq=False)
class ControlledPath:
    base: RoughPath
    f: Path
    fprime: Path

    def __post_init__(self):
        if self.f.grid != self.base.grid or self.fprime.grid != self.base.grid:
            raise ValueError("controlled path must live on the base grid")
        if self.fprime.shape != self.f.shape + (self.base.m,):
            raise ValueError(f"derivative shape {self.fprime.shape} does not match {self.f.shape} x {self.base.m}")


def controlled(base: RoughPath, f, fprime) -> ControlledPath:
    f = np.asarray(f, float)
    if f.ndim == 1:
        f = f[:, None]
    return ControlledPath(base, Path(base.grid, f), Path(base.grid, np.asarray(fprime, float)))


def identity_controlled(base: RoughPath) -> ControlledPath:
    """The reference path itself, with derivative the identity."""
    n, m = base.grid.n, base.m
    return controlled(base, base.g.flat(), np.broadcast_to(np.eye(m), (n, m, m)))


def remainder(cp: ControlledPath) -> TwoParamField:
    f = cp.f.values
    g = cp.base.g.flat()
    inc_g = g[None, :] - g[:, None]
    R = f[None, :] - f[:, None] - np.einsum("i...a,ija->ij...", cp.fprime.values, inc_g)
    return TwoParamField(cp.base.grid, R)


def compose(F: SmoothMap, cp: ControlledPath) -> ControlledPath:
    """(F(f), ∇F(f) f')."""
    x = cp.f.values
    val = F.value(x)
    der = np.einsum("npk,nka->npa", F.grad(x), cp.fprime.values)
    return controlled(cp.base, val, der)


def product(h: ControlledPath, f: ControlledPath) -> ControlledPath:
    """Product of an operator-valued controlled path h (shape (p, k)) with f (leading axis k)."""
    if h.base is not f.base and h.base.grid != f.base.grid:
        raise ValueError("factors must share the base rough path")
    H, dH = h.f.values, h.fprime.values
    X, dX = f.f.values, f.fprime.values
    if H.ndim < 3 or H.shape[2] != X.shape[1]:
        raise ValueError(f"shape mismatch: {H.shape[1:]} times {X.shape[1:]}")
    val = np.einsum("npk,nk...->np...", H, X)
    der = np.einsum("npka,nk...->np...a", dH, X) + np.einsum("npk,nk...a->np...a", H, dX)
    return controlled(h.base, val, der)


def product_remainder_terms(h: ControlledPath, f: ControlledPath):
    """The exact decomposition of R^{hf} into
    h_s R^f + R^h f_s + (h'_s g_{s,t}) f_{s,t} + R^h_{s,t} f_{s,t}.

    Returns the four fields as arrays of shape (n, n, p, ...).
    """
    Rf, Rh = remainder(f).values, remainder(h).values
    H, X = h.f.values, f.f.values
    g = h.base.g.flat()
    inc_g = g[None, :] - g[:, None]
    inc_x = X[None, :] - X[:, None]
    t1 = np.einsum("spk,stk...->stp...", H, Rf)
    t2 = np.einsum("stpk,sk...->stp...", Rh, X)
    hg = np.einsum("spka,sta->stpk", h.fprime.values, inc_g)
    t3 = np.einsum("stpk,stk...->stp...", hg, inc_x)
    t4 = np.einsum("stpk,stk...->stp...", Rh, inc_x)
    return t1, t2, t3, t4


def composition_ratio(F: SmoothMap, cp: ControlledPath, gamma: float) -> float:
    """[R^{F(f)}]_{2γ} / ([R^f]_{2γ} + ‖f'‖_∞ [f]_γ [g]_γ)."""
    num = holder_seminorm_2(remainder(compose(F, cp)), 2 * gamma)
    den = holder_seminorm_2(remainder(cp), 2 * gamma) + float(np.max(np.abs(cp.fprime.values))) * holder_seminorm(
        cp.f, gamma
    ) * holder_seminorm(cp.base.g, gamma)
    return num / den


def rough_integral_germ(cp: ControlledPath) -> Germ:
    """A_{s,t} = f_s g_{s,t} + f'_s 𝔾_{s,t}."""
    g = cp.base.g.flat()
    area = cp.base.area.values
    f, fp = cp.f.values, cp.fprime.values

    def evaluate(si, ti):
        dg = g[ti] - g[si]
        return np.einsum("n...b,nb->n...", f[si], dg) + np.einsum("n...ba,nab->n...", fp[si], area[si, ti])

    return Germ(cp.base.grid, evaluate, {"kind": "rough-integral"})


def _integral_path(germ: Germ, grid, S, T) -> Path:
    i0 = grid.index_of(grid.S if S is None else S)
    i1 = grid.index_of(grid.T if T is None else T)
    pts = np.arange(i0, i1 + 1)
    return Path(grid.restrict(i0, i1), riemann_path(germ, pts))


def rough_integral(cp: ControlledPath, rp: RoughPath | None = None, S=None, T=None) -> Path:
    """∫_S^t f dg for grid t in [S, T], from the compensated germ on the finest partition."""
    if rp is not None and rp is not cp.base:
        cp = ControlledPath(rp, cp.f, cp.fprime)
    return _integral_path(rough_integral_germ(cp), cp.base.grid, S, T)


def uncompensated_integral(cp: ControlledPath, S=None, T=None) -> Path:
    """Left-point sums Σ f_s g_{s,t}, dropping the area term."""
    g = cp.base.g.flat()
    f = cp.f.values

    def evaluate(si, ti):
        return np.einsum("n...b,nb->n...", f[si], g[ti] - g[si])

    return _integral_path(Germ(cp.base.grid, evaluate), cp.base.grid, S, T)


def integral_as_controlled(cp: ControlledPath) -> ControlledPath:
    """(∫ f dg, f) as a controlled path (requires f of shape (n, k, m))."""
    return controlled(cp.base, rough_integral(cp).values, cp.f.values)


def rough_ftc_residual(F: SmoothMap, f: ControlledPath, h: ControlledPath, nodes: int = 16) -> float:
    """Largest deviation, in value and derivative, between F(f) - F(h) and
    (∫₀¹ ∇F(θf + (1-θ)h) dθ)(f - h) built by composition and product."""
    x, w = gauss_legendre_unit(nodes)
    fv, hv = f.f.values, h.f.values
    fd, hd = f.fprime.values, h.fprime.values
    M = 0.0
    dM = 0.0
    for th, wt in zip(x, w):
        z = th * fv + (1 - th) * hv
        M = M + wt * F.grad(z)
        dM = dM + wt * np.einsum("npkl,nla->npka", F.hess(z), th * fd + (1 - th) * hd)
    Mcp = controlled(f.base, M, dM)
    diff = controlled(f.base, fv - hv, fd - hd)
    rhs = product(Mcp, diff)
    lhs = controlled(f.base, F.value(fv) - F.value(hv), np.einsum("npk,nka->npa", F.grad(fv), fd) - np.einsum(
        "npk,nka->npa", F.grad(hv), hd
    ))
    return max(
        float(np.max(np.abs(lhs.f.values - rhs.f.values))),
        float(np.max(np.abs(lhs.fprime.values - rhs.fprime.values))),
    )


def young_integral(f: Path, g: Path, alpha: float | None = None, beta: float | None = None) -> Path:
    """Left-point Riemann sums of ∫ f dg; the last value axis of f pairs with g."""
    if alpha is not None and beta is not None and alpha + beta <= 1:
        raise ValueError("Young integration needs alpha + beta > 1")
    F = f.values
    dg = np.diff(g.flat(), axis=0)
    if F.shape[-1] != dg.shape[1]:
        raise ValueError("integrand does not pair with the integrator")
    steps = np.einsum("n...b,nb->n...", F[:-1], dg)
    vals = np.concatenate([np.zeros((1,) + steps.shape[1:]), np.cumsum(steps, axis=0)])
    return Path(f.grid, vals)


@dataclass(frozen=True, eq=False)
class SingularYoung:
    field: TwoParamField
    ratio: float
    exponent: float


def young_singular(f: Path, w: Path, s: float, beta: float, gamma_w: float, alpha: float) -> SingularYoung:
    """∫_u^t f_{u,r} dw_r for grid pairs s < u < t, where w may blow up at s
    like |u - s|^{-gamma_w}.

    Also reports the largest ratio of |∫| to
    [f]_α [w]_{β,γ_w} |t-u|^{β+α-γ_w} (the row u = s is excluded).
    """
    if abs(f.grid.S - s) > 1e-12 or f.grid != w.grid:
        raise ValueError("f and w must share a grid starting at s")
    if alpha + beta <= 1 or not 0 < gamma_w < beta:
        raise ValueError("need alpha + beta > 1 and 0 < gamma_w < beta")
    F = f.flat()
    W = w.flat()
    if F.shape[1] != W.shape[1] and F.shape[1] != 1:
        raise ValueError("f must be scalar or match w's dimension")
    dW = np.diff(W, axis=0)
    steps = np.sum(F[:-1] * dW, axis=1)
    C = np.concatenate([[0.0], np.cumsum(steps)])
    cross = np.sum(F[:, None, :] * (W[None, :, :] - W[:, None, :]), axis=2)
    I = C[None, :] - C[:, None] - cross
    I[0, :] = 0.0
    t = f.grid.times
    exponent = beta + alpha - gamma_w
    fnorm = holder_seminorm(f, alpha)
    wnorm = weighted_holder_norm(w, beta, s, 1.0 - gamma_w)
    iu, it = np.triu_indices(t.size, k=1)
    keep = iu >= 1
    iu, it = iu[keep], it[keep]
    denom = fnorm * wnorm * (t[it] - t[iu]) ** exponent
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(I[iu, it]) / denom
    ratio = float(np.max(r[np.isfinite(r)])) if np.any(np.isfinite(r)) else 0.0
    return SingularYoung(TwoParamField(f.grid, I), ratio, exponent)


@dataclass(frozen=True, eq=False)
class MixedControlledPath:
    """(f, ∂•f, ∂∘f): derivatives against the rough part B and the smooth part L."""

    base: MixedRoughPath
    f: Path
    dB: Path
    dL: Path

    def __post_init__(self):
        m, e = self.base.gB.dim, self.base.gL.dim
        if self.dB.shape != self.f.shape + (m,) or self.dL.shape != self.f.shape + (e,):
            raise ValueError("derivative shapes do not match the mixed base")


def mixed_controlled(base: MixedRoughPath, f, dB, dL) -> MixedControlledPath:
    grid = base.grid
    f = np.asarray(f, float)
    if f.ndim == 1:
        f = f[:, None]
    return MixedControlledPath(base, Path(grid, f), Path(grid, np.asarray(dB, float)), Path(grid, np.asarray(dL, float)))


def mixed_circ_germ(mcp: MixedControlledPath) -> Germ:
    """A_{s,t} = f_s L_{s,t} + ∂•f_s 𝔾^{•∘}_{s,t}; f pairs with L on its last axis."""
    L = mcp.base.gL.flat()
    BL = mcp.base.areaBL.values
    f, dB = mcp.f.values, mcp.dB.values

    def evaluate(si, ti):
        return np.einsum("n...e,ne->n...", f[si], L[ti] - L[si]) + np.einsum("n...ea,nae->n...", dB[si], BL[si, ti])

    return Germ(mcp.base.grid, evaluate, {"kind": "mixed-circ"})


def mixed_bullet_germ(mcp: MixedControlledPath) -> Germ:
    """A_{s,t} = f_s B_{s,t} + ∂∘f_s 𝔾^{∘•}_{s,t} + ∂•f_s 𝔾^{••}_{s,t}."""
    B = mcp.base.gB.flat()
    LB = mcp.base.areaLB.values
    BB = mcp.base.areaBB.values
    f, dB, dL = mcp.f.values, mcp.dB.values, mcp.dL.values

    def evaluate(si, ti):
        out = np.einsum("n...b,nb->n...", f[si], B[ti] - B[si])
        out = out + np.einsum("n...be,neb->n...", dL[si], LB[si, ti])
        return out + np.einsum("n...ba,nab->n...", dB[si], BB[si, ti])

    return Germ(mcp.base.grid, evaluate, {"kind": "mixed-bullet"})


def mixed_integral_circ(mcp: MixedControlledPath, mrp: MixedRoughPath | None = None, S=None, T=None) -> Path:
    if mrp is not None and mrp is not mcp.base:
        mcp = MixedControlledPath(mrp, mcp.f, mcp.dB, mcp.dL)
    return _integral_path(mixed_circ_germ(mcp), mcp.base.grid, S, T)


def mixed_integral_bullet(mcp: MixedControlledPath, mrp: MixedRoughPath | None = None, S=None, T=None) -> Path:
    if mrp is not None and mrp is not mcp.base:
        mcp = MixedControlledPath(mrp, mcp.f, mcp.dB, mcp.dL)
    return _integral_path(mixed_bullet_germ(mcp), mcp.base.grid, S, T)
