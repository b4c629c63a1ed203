"""Regularisation-by-noise constructions: the cutoff and its scale, mollified
rough drifts and negative Hölder norms, the functionals J, K and the germ of
L, the mixed rough path G, the averaged derivative operators Σ and I, the
linear equation for Z = X − Y and the numerical uniqueness experiment.

Shapes: states are (..., d); a drift gradient is (..., d, d) with [i, j] =
∂_j b^i; the smooth component L of G flattens that d × d block row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .controlled import mixed_controlled, mixed_integral_circ
from .fbm import ORIGINAL_TAIL, FbmParams, GaussianDriver, resampled_tail, sample_fbm_volterra, volterra_matrix
from .quadrature import gauss_legendre_unit
from .rde import Coefficient, integrate, solve_with_drift, solve_with_drift_reordered
from .roughpath import MixedRoughPath, RoughPath, assemble_mixed, d_gamma, lift_piecewise_linear
from .sewing import sew
from .timegrid import Path, TwoParamField, holder_seminorm, holder_seminorm_2


def rho_of(lam: float, c1: float) -> float:
    """Cutoff scale √λ / (10⁵ ‖σ‖_{C¹})."""
    if lam <= 0 or c1 <= 0:
        raise ValueError("lambda and c1 must be positive")
    return math.sqrt(lam) / (1e5 * c1)


def convex_combination_min_eig(coeff: Coefficient, rho: float, trials: int = 200, seed: int = 0, radius: float = 3.0):
    """Smallest eigenvalue of (Σθᵢσ(xᵢ))(Σθᵢσ(xᵢ))* over random 4-point
    clusters with |xᵢ − x₁| ≤ 24ρ and random convex weights θ."""
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(trials):
        x1 = rng.uniform(-radius, radius, coeff.d)
        off = rng.normal(size=(3, coeff.d))
        off *= (24 * rho * rng.uniform(0, 1, (3, 1))) / np.linalg.norm(off, axis=1, keepdims=True)
        pts = np.vstack([x1, x1 + off])
        theta = rng.dirichlet(np.ones(4))
        m = np.einsum("k,kip->ip", theta, coeff.sigma(pts))
        worst = min(worst, float(np.linalg.eigvalsh(m @ m.T)[0]))
    return worst


def _psi(z):
    z = np.asarray(z, float)
    out = np.zeros_like(z)
    pos = z > 0
    out[pos] = np.exp(-1.0 / z[pos])
    return out


def _dpsi(z):
    z = np.asarray(z, float)
    out = np.zeros_like(z)
    pos = z > 0
    out[pos] = np.exp(-1.0 / z[pos]) / z[pos] ** 2
    return out


def smooth_step(z):
    """C^∞ step: 0 for z ≤ 0, 1 for z ≥ 1."""
    a, b = _psi(z), _psi(1.0 - np.asarray(z, float))
    return a / (a + b)


def smooth_step_prime(z):
    z = np.asarray(z, float)
    a, b = _psi(z), _psi(1.0 - z)
    da, db = _dpsi(z), _dpsi(1.0 - z)
    return (da * b + a * db) / (a + b) ** 2


@dataclass(frozen=True)
class CutoffSpec:
    """χ_a(x) = χ(x/a) with χ = 1 on |x| ≤ 1/2 and χ = 0 on |x| ≥ 2."""

    a: float = 1.0

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("radius must be positive")

    def __call__(self, x):
        r = np.linalg.norm(np.asarray(x, float), axis=-1) / self.a
        return smooth_step((2.0 - r) / 1.5)

    def grad(self, x):
        x = np.asarray(x, float)
        norm = np.linalg.norm(x, axis=-1)
        r = norm / self.a
        slope = -smooth_step_prime((2.0 - r) / 1.5) / (1.5 * self.a)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(norm[..., None] > 0, x / norm[..., None], 0.0)
        return slope[..., None] * unit

    def scaled(self, factor: float) -> "CutoffSpec":
        return CutoffSpec(self.a * factor)


def cutoff_algebra_defects(a: float, factor: float, points) -> tuple[float, float]:
    """max |χ_a χ_{ka} − χ_a| and max |∇χ_{ka} χ_a| over the points, k = factor."""
    small, big = CutoffSpec(a), CutoffSpec(a * factor)
    ca = small(points)
    prod = float(np.max(np.abs(ca * big(points) - ca)))
    grad = float(np.max(np.abs(big.grad(points) * ca[..., None])))
    return prod, grad


@dataclass(frozen=True)
class DriftSpec:
    """b^i(x) = Σ_k 2^{-αk} sin(2^k x_i + φ_{ik}), k = 0..K−1, and its heat
    mollification P_ε b (each mode damped by exp(−ε 4^k / 2))."""

    alpha: float
    d: int = 1
    K: int = 8
    seed: int = 0
    scale: float = 1.0

    @property
    def phases(self):
        return np.random.default_rng(self.seed).uniform(0, 2 * np.pi, size=(self.d, self.K))

    def _modes(self, eps):
        k = np.arange(self.K)
        freq = 2.0**k
        amp = self.scale * 2.0 ** (-self.alpha * k) * np.exp(-0.5 * eps * freq**2)
        return freq, amp

    def value(self, x, eps: float = 0.0):
        x = np.asarray(x, float)
        freq, amp = self._modes(eps)
        arg = x[..., :, None] * freq + self.phases
        return np.sum(amp * np.sin(arg), axis=-1)

    def derivative(self, x, eps: float = 0.0):
        """∂_i b^i as an array (..., d)."""
        x = np.asarray(x, float)
        freq, amp = self._modes(eps)
        arg = x[..., :, None] * freq + self.phases
        return np.sum(amp * freq * np.cos(arg), axis=-1)

    def grad(self, x, eps: float = 0.0):
        """Full gradient (..., d, d); diagonal because b^i depends on x_i only."""
        diag = self.derivative(x, eps)
        return diag[..., :, None] * np.eye(self.d)

    def declared_norm(self) -> float:
        """Upper bound on the C^α norm of the unmollified sum."""
        a = self.alpha
        sup = float(np.sum(2.0 ** (-a * np.arange(self.K))))
        return self.scale * (sup + 2 ** (1 - a) / (2 ** (1 - a) - 1) + 2 / (1 - 2**-a))

    def drift(self, eps: float):
        return lambda x: self.value(x, eps)

    def gradient(self, eps: float):
        return lambda x: self.grad(x, eps)


def heat_smooth(f, gamma: float, dx: float = 1.0):
    """Discrete Gaussian convolution with variance ``gamma`` (in physical
    units; grid spacing ``dx``) and reflection at the box boundary."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    f = np.asarray(f, float)
    return ndimage.gaussian_filter(f, sigma=math.sqrt(gamma) / dx, mode="reflect", truncate=6.0)


def heat_gradient_constant(f, gammas: Sequence[float], dx: float) -> float:
    """Fitted N in ‖∇P_γ f‖_∞ ≤ N γ^{-1/2} ‖f‖_∞ over the given γ."""
    f = np.asarray(f, float)
    sup = float(np.max(np.abs(f)))
    best = 0.0
    for g in gammas:
        grads = np.gradient(heat_smooth(f, g, dx), dx)
        grads = grads if isinstance(grads, list) else [grads]
        gmax = max(float(np.max(np.abs(q))) for q in grads)
        best = max(best, gmax * math.sqrt(g) / sup)
    return best


def besov_neg_norm(f, alpha_neg: float, dx: float = 1.0, levels: int | None = None) -> float:
    """max over γ = 2^{-k}, k = 0..levels, of γ^{-α/2} ‖P_γ f‖_∞ (α < 0)."""
    if alpha_neg >= 0:
        raise ValueError("alpha_neg must be negative")
    if levels is None:
        levels = int(math.floor(-math.log2(dx * dx)))
    best = 0.0
    for k in range(levels + 1):
        g = 2.0**-k
        best = max(best, g ** (-alpha_neg / 2) * float(np.max(np.abs(heat_smooth(f, g, dx)))))
    return best


def _cumtrapz(values, dt):
    """Cumulative trapezoid along axis 0 with cell widths dt."""
    v = np.asarray(values, float)
    shape = (-1,) + (1,) * (v.ndim - 1)
    inc = 0.5 * (v[1:] + v[:-1]) * np.asarray(dt).reshape(shape)
    return np.concatenate([np.zeros((1,) + v.shape[1:]), np.cumsum(inc, axis=0)])


def _integrand(X, Y, theta, f, rho, chi=None):
    chi = CutoffSpec(rho) if chi is None else chi.scaled(rho / chi.a)
    cut = chi(X - Y)
    vals = np.asarray(f(theta * X + (1 - theta) * Y), float)
    return cut.reshape(cut.shape + (1,) * (vals.ndim - cut.ndim)) * vals


def functional_J(X: Path, Y: Path, theta: float, f: Callable, rho: float) -> Path:
    """t ↦ ∫_0^t χ_ρ(X−Y) f(θX + (1−θ)Y) dr by the composite trapezoid rule."""
    if X.grid != Y.grid:
        raise ValueError("X and Y must share a grid")
    h = _integrand(X.values, Y.values, theta, f, rho)
    return Path(X.grid, _cumtrapz(h, np.diff(X.grid.times)))


def functional_K(X: Path, Y: Path, theta: float, f: Callable, ell: int, rho: float, B: Path) -> TwoParamField:
    """(s,t) ↦ ∫_s^t (B^ℓ_r − B^ℓ_s) χ_ρ(X−Y) f(θX + (1−θ)Y) dr."""
    if X.grid != Y.grid or B.grid != X.grid:
        raise ValueError("X, Y and B must share a grid")
    h = _integrand(X.values, Y.values, theta, f, rho).reshape(X.grid.n, -1)
    dt = np.diff(X.grid.times)
    b = B.flat()[:, ell]
    J = _cumtrapz(h, dt)
    M = _cumtrapz(b[:, None] * h, dt)
    vals = (M[None] - M[:, None]) - b[:, None, None] * (J[None] - J[:, None])
    out = np.asarray(f(X.values[:1]), float).shape[1:]
    return TwoParamField(X.grid, vals.reshape((X.grid.n, X.grid.n) + (out or (1,))))


@dataclass(frozen=True, eq=False)
class FlowContext:
    """Everything the conditional germs need besides the driver."""

    params: FbmParams
    coeff: Coefficient
    X: Path
    Y: Path
    rho: float
    drift: Callable | None = None


def _inner_noise(driver: GaussianDriver, params: FbmParams, ks: int, kmax: int, inner_seeds, antithetic=False):
    """fBm on grid rows ks..kmax for each resampled tail (inner, rows, d0).

    With ``antithetic`` the tails come in pairs (W, −W) drawn from seed j // 2.
    """
    M = volterra_matrix(driver.grid, FbmParams(params.H, driver.d0))
    past = M[ks : kmax + 1, :ks] @ driver.dW[:ks]

    def tail(j):
        if j == ORIGINAL_TAIL:
            return driver.dW[ks:kmax]
        if antithetic:
            return (-1) ** (j % 2) * resampled_tail(driver, ks, j // 2)[: kmax - ks]
        return resampled_tail(driver, ks, j)[: kmax - ks]

    tails = np.stack([tail(j) for j in inner_seeds])
    future = np.einsum("ji,nic->njc", M[ks : kmax + 1, ks:kmax], tails)
    return past[None] + future


def _flows_and_integrals(ctx: FlowContext, B, xs, ys, theta, f, start=None, weight_ell=None):
    """Flows of (xs, ys) driven by each row of B (PL lift), and the cumulative
    trapezoid of the cutoff integrand along them."""
    inner = B.shape[0]
    reps = xs.shape[0] // inner
    dg = np.diff(B, axis=1)
    dg = np.tile(dg, (2 * reps, 1, 1))
    dg = np.moveaxis(dg, 0, 1)
    area = 0.5 * dg[..., :, None] * dg[..., None, :]
    traj = integrate(ctx.coeff, dg, area, np.concatenate([xs, ys]), start=None if start is None else np.tile(start, 2))
    n = xs.shape[0]
    phiX, phiY = traj[:, :n], traj[:, n:]
    h = _integrand(phiX, phiY, theta, f, ctx.rho)
    if weight_ell is not None:
        b = np.tile(B[:, :, weight_ell], (reps, 1)).T
        h = (b - b[:1])[..., None] * h if h.ndim == 3 else (b - b[:1]) * h
    return _cumtrapz(h, np.diff(ctx.X.grid.times[: B.shape[1]]))


def germ_L(driver: GaussianDriver, ctx: FlowContext, theta: float, f: Callable, s: float, t: float, inner: int, inner_seeds=None):
    """Monte-Carlo E_s ∫_s^t χ_ρ(φ^{s,X_s} − φ^{s,Y_s}) f(θφ^{s,X_s} + (1−θ)φ^{s,Y_s}) dr."""
    if inner < 1:
        raise ValueError("inner must be at least 1")
    grid = driver.grid
    ks, kt = grid.index_of(s), grid.index_of(t)
    if kt == ks:
        return np.zeros(np.asarray(f(ctx.X.values[:1]), float).shape[1:])
    seeds = list(range(inner)) if inner_seeds is None else list(inner_seeds)
    B = _inner_noise(driver, ctx.params, ks, kt, seeds)
    xs = np.repeat(ctx.X.values[ks][None], len(seeds), axis=0)
    ys = np.repeat(ctx.Y.values[ks][None], len(seeds), axis=0)
    C = _flows_and_integrals(_shift(ctx, ks), B, xs, ys, theta, f)
    return C[-1].mean(axis=0)


def _shift(ctx: FlowContext, k: int) -> FlowContext:
    """Context whose grid starts at index k (only times are used)."""
    sub = ctx.X.grid.restrict(k, ctx.X.grid.n - 1)
    return FlowContext(ctx.params, ctx.coeff, Path(sub, ctx.X.values[k:]), Path(sub, ctx.Y.values[k:]), ctx.rho, ctx.drift)


@dataclass(frozen=True)
class GermExperiment:
    """Configuration of the conditional-germ rate experiment.

    ``kind`` is "L" (the J-type germ) or "K" (weighted by B^ℓ_r − B^ℓ_s).
    """

    params: FbmParams
    coeff: Coefficient
    drift: Callable
    f: Callable
    theta: float = 0.5
    rho: float = 1.0
    x0: float = 0.0
    y0: float = 0.1
    level: int = 8
    inner: int = 200
    kind: str = "L"
    ell: int = 0
    antithetic: bool = True

    def sample(self, seed: int) -> "ConditionalGermSample":
        return ConditionalGermSample(self, seed)

    def family(self):
        """Seed → sample, memoised so several rate fits share the work."""
        return lru_cache(maxsize=None)(self.sample)


class ConditionalGermSample:
    """One outer replica: the driver, X and Y, and per-anchor conditional
    Monte-Carlo estimates over ``inner`` resampled futures."""

    def __init__(self, exp: GermExperiment, seed: int):
        from .timegrid import dyadic_grid

        self.exp = exp
        grid = dyadic_grid(exp.level)
        self.driver = GaussianDriver.from_seed(grid, seed, exp.coeff.d0)
        B = sample_fbm_volterra(self.driver, FbmParams(exp.params.H, exp.coeff.d0))
        rp = lift_piecewise_linear(B)
        d = exp.coeff.d
        X = solve_with_drift(exp.drift, exp.coeff, rp, np.full(d, exp.x0))
        Y = solve_with_drift(exp.drift, exp.coeff, rp, np.full(d, exp.y0))
        self.ctx = FlowContext(exp.params, exp.coeff, X, Y, exp.rho, exp.drift)
        self._cache = {}

    def _anchor(self, s, ts):
        key = (float(s), tuple(np.round(ts, 14)))
        if key in self._cache:
            return self._cache[key]
        exp, ctx, grid = self.exp, self.ctx, self.driver.grid
        ks = grid.index_of(s)
        kt = np.array([grid.index_of(t) for t in ts])
        if np.any((kt - ks) % 2):
            raise ValueError("scales must span an even number of cells")
        ku = (ks + kt) // 2
        kmax = int(kt.max())
        inner = exp.inner
        if exp.antithetic and inner % 2:
            raise ValueError("antithetic sampling needs an even inner count")
        B = _inner_noise(self.driver, exp.params, ks, kmax, range(inner), exp.antithetic)
        sub = _shift(ctx, ks)
        weight = exp.ell if exp.kind == "K" else None
        xs = np.repeat(ctx.X.values[ks][None], inner, axis=0)
        ys = np.repeat(ctx.Y.values[ks][None], inner, axis=0)
        C = _flows_and_integrals(sub, B, xs, ys, exp.theta, exp.f, weight_ell=weight)
        values = C[kt - ks].mean(axis=1)
        defects = errs = None
        if exp.kind == "L":
            # X_u, Y_u on every resampled future, then flows restarted at u
            dg = np.moveaxis(np.diff(B, axis=1), 0, 1)
            area = 0.5 * dg[..., :, None] * dg[..., None, :]
            dt = np.diff(grid.times[ks : kmax + 1])
            cells_u = int(ku.max() - ks)
            dgs, areas = np.concatenate([dg, dg], axis=1), np.concatenate([area, area], axis=1)
            Xd = integrate(exp.coeff, dgs[:cells_u], areas[:cells_u], np.concatenate([xs, ys]), dt=dt, drift=exp.drift)
            starts = np.repeat(ku - ks, inner)
            xu = np.concatenate([Xd[k - ks, :inner] for k in ku])
            yu = np.concatenate([Xd[k - ks, inner:] for k in ku])
            Bt = np.tile(B, (len(ku), 1, 1))
            C2 = _flows_and_integrals(sub, Bt, xu, yu, exp.theta, exp.f, start=starts)
            C2 = C2.reshape((C2.shape[0], len(ku), inner) + C2.shape[2:])
            diffs = np.stack([(C[kt[j] - ks] - C[ku[j] - ks]) - (C2[kt[j] - ks, j] - C2[ku[j] - ks, j]) for j in range(len(ku))])
            defects = diffs.mean(axis=1)
            if exp.antithetic:
                # pairs are the independent units
                diffs = 0.5 * (diffs[:, 0::2] + diffs[:, 1::2])
            errs = diffs.std(axis=1, ddof=1) / math.sqrt(diffs.shape[1])
        self._cache[key] = (values, defects, errs, ku)
        return self._cache[key]

    def values(self, s, ts):
        return self._anchor(s, np.asarray(ts, float))[0]

    def conditional_defects(self, s, us, ts, inner):
        if inner != self.exp.inner:
            raise ValueError("inner count is fixed by the experiment")
        values, defects, errs, ku = self._anchor(s, np.asarray(ts, float))
        if defects is None:
            raise ValueError("conditional defects are only available for the L germ")
        if not np.allclose(self.driver.grid.times[ku], us):
            raise ValueError("midpoints expected for u")
        return defects, errs


@dataclass(frozen=True, eq=False)
class GData:
    G: MixedRoughPath
    provenance: dict = field(default_factory=dict)


def theta_averaged_gradient(X: Path, Y: Path, grad_f: Callable, rho: float, nodes: int = 16):
    """χ_ρ(X−Y) ∫_0^1 ∇f(θX + (1−θ)Y) dθ, shape (n, d, d)."""
    th, w = gauss_legendre_unit(nodes)
    cut = CutoffSpec(rho)(X.values - Y.values)
    acc = 0.0
    for t, wt in zip(th, w):
        acc = acc + wt * np.asarray(grad_f(t * X.values + (1 - t) * Y.values), float)
    return cut[:, None, None] * acc


def build_G(B_lift: RoughPath, X: Path, Y: Path, grad_f: Callable, rho: float, beta: float = 0.9, provenance=None) -> GData:
    """G = (B, L, 𝔹, 𝒦̃, 𝒦) with L = 𝒥∇f and 𝒦 = ∫(B_r − B_s) ⊗ dL_r."""
    grid = B_lift.grid
    n, d = grid.n, X.dim
    Mr = theta_averaged_gradient(X, Y, grad_f, rho).reshape(n, d * d)
    dt = np.diff(grid.times)
    L = _cumtrapz(Mr, dt)
    Bv = B_lift.g.flat()
    P = _cumtrapz(Bv[:, :, None] * Mr[:, None, :], dt)
    areaBL = (P[None] - P[:, None]) - Bv[:, None, :, None] * (L[None, :, None, :] - L[:, None, None, :])
    G = assemble_mixed(B_lift, Path(grid, L), TwoParamField(grid, areaBL), beta=beta)
    return GData(G, dict(provenance or {}))


def mixed_distance(G1: MixedRoughPath, G2: MixedRoughPath) -> float:
    """Distance of mixed rough paths on grid pairs: rough distance of the B
    parts plus Hölder norms of the differences of L and the cross areas."""
    g, b = G1.gamma, G1.beta
    dL = Path(G1.grid, G1.gL.values - G2.gL.values)
    out = d_gamma(G1.rough_part(), G2.rough_part())
    out += float(np.max(np.abs(dL.values[0]))) + holder_seminorm(dL, b)
    out += holder_seminorm_2(TwoParamField(G1.grid, G1.areaBL.values - G2.areaBL.values), g + b)
    out += holder_seminorm_2(TwoParamField(G1.grid, G1.areaLB.values - G2.areaLB.values), g + b)
    return out


def sigma_avg(X, Y, coeff: Coefficient, nodes: int = 16):
    """Σ[..., i, ρ, l] = ∫_0^1 ∂_l σ^{iρ}(θX + (1−θ)Y) dθ and
    Σ̂[..., i, ρ, l, ρ'] = Σ_q ∫_0^1 ∂_q∂_l σ^{iρ}(θX + (1−θ)Y)(θσ^{qρ'}(X) + (1−θ)σ^{qρ'}(Y)) dθ."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    th, w = gauss_legendre_unit(nodes)
    sX, sY = coeff.sigma(X), coeff.sigma(Y)
    S = 0.0
    Sh = 0.0
    for t, wt in zip(th, w):
        mid = t * X + (1 - t) * Y
        S = S + wt * coeff.dsigma(mid)
        Sh = Sh + wt * np.einsum("...iplq,...qr->...iplr", coeff.d2sigma(mid), t * sX + (1 - t) * sY)
    return S, Sh


def apply_sigma(S, z):
    """(Σz)^{iρ} = Σ_l Σ^{liρ} z^l."""
    return np.einsum("...ipl,...l->...ip", S, z)


def apply_I(z, c):
    """(Iz)c = (Σ_j z^j c^{ij})_i for c of shape (..., d, d)."""
    return np.einsum("...j,...ij->...i", z, c)


def solve_linear_Z(G: MixedRoughPath, Sigma, Sigma_hat, z0) -> Path:
    """dZ = (IZ) dL + (ΣZ) dB, one mixed-germ step per cell:

    Z⁺ = Z + (IZ)ΔL + (ΣZ)ΔB + I(ΣZ):𝔾^{•∘} + Σ(IZ):𝔾^{∘•} + [Σ(ΣZ) + Σ̂Z]:𝔾^{••}.
    """
    grid = G.grid
    n = grid.n
    z = np.asarray(z0, float).copy()
    d = z.size
    m = G.gB.dim
    idx = np.arange(n - 1)
    dB = np.diff(G.gB.flat(), axis=0)
    dL = np.diff(G.gL.flat(), axis=0).reshape(n - 1, d, d)
    BB = G.areaBB.values[idx, idx + 1]
    BL = G.areaBL.values[idx, idx + 1].reshape(n - 1, m, d, d)
    LB = G.areaLB.values[idx, idx + 1].reshape(n - 1, d, d, m)
    out = np.empty((n, d))
    out[0] = z
    for k in range(n - 1):
        S, Sh = Sigma[k], Sigma_hat[k]
        sz = apply_sigma(S, z)  # (d, m)
        inc = apply_I(z, dL[k]) + sz @ dB[k]
        inc += np.einsum("jr,rij->i", sz, BL[k])
        inc += np.einsum("irl,q,lqr->i", S, z, LB[k])
        dsz = np.einsum("irl,lp->irp", S, sz) + np.einsum("irlp,l->irp", Sh, z)
        inc += np.einsum("irp,pr->i", dsz, BB[k])
        z = z + inc
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite Z at t={grid.times[k + 1]}")
        out[k + 1] = z
    return Path(grid, out)


def iz_controlled(G: MixedRoughPath, Z: Path, Sigma):
    """(IZ, ∂•(IZ), ∂∘(IZ)) as a mixed controlled path against G."""
    n, d = Z.grid.n, Z.dim
    m = G.gB.dim
    eye = np.eye(d)
    z = Z.values
    f = np.einsum("ik,nj->nikj", eye, z).reshape(n, d, d * d)
    sz = apply_sigma(Sigma, z)  # (n, d, m)
    dB = np.einsum("ik,njr->nikjr", eye, sz).reshape(n, d, d * d, m)
    dL = np.einsum("ik,ja,nq->nikjaq", eye, eye, z).reshape(n, d, d * d, d * d)
    return mixed_controlled(G, f, dB, dL)


@dataclass(frozen=True)
class DriftIdentity:
    lhs: np.ndarray
    rhs: np.ndarray
    residual: float
    quadrature_tol: float
    sewing_tol: float

    @property
    def tolerance(self):
        return self.quadrature_tol + self.sewing_tol


def drift_identity(G: MixedRoughPath, X: Path, Y: Path, b: Callable, Sigma) -> DriftIdentity:
    """Compare D^X − D^Y (trapezoid of b along X and Y) with ∫ IZ dG∘."""
    grid = X.grid
    dt = np.diff(grid.times)
    diff_b = np.asarray(b(X.values), float) - np.asarray(b(Y.values), float)
    lhs = _cumtrapz(diff_b, dt)
    Z = Path(grid, X.values - Y.values)
    mcp = iz_controlled(G, Z, Sigma)
    rhs = mixed_integral_circ(mcp).values
    residual = float(np.max(np.abs(lhs - rhs)))
    coarse = _cumtrapz(diff_b[::2], np.diff(grid.times[::2]))
    quad = float(np.max(np.abs(lhs[::2][-1] - coarse[-1]))) / 3.0
    from .controlled import mixed_circ_germ

    report = sew(mixed_circ_germ(mcp))
    sew_tol = float(report.cauchy[-1]) if report.cauchy.size else 0.0
    return DriftIdentity(lhs, rhs, residual, quad, sew_tol)


@dataclass(frozen=True)
class UniquenessConfig:
    H: float = 0.4
    alpha: float = 0.1
    eps: tuple = (2.0**-2, 2.0**-4, 2.0**-6)
    levels: tuple = (6, 7, 8, 9)
    identity_level: int = 8
    seed: int = 0
    sigma: str = "sin"
    x0: float = 0.0
    dz: float = 0.05
    rho: float = 1.0
    K: int = 8


@dataclass(frozen=True)
class UniquenessReport:
    eps: np.ndarray
    levels: np.ndarray
    differences: np.ndarray  # (eps, levels)
    ratios: np.ndarray  # successive decrease factors per eps
    identity: DriftIdentity
    z_zero_max: float


def uniqueness_experiment(config: UniquenessConfig = UniquenessConfig()) -> UniquenessReport:
    """Numerical uniqueness: two step orderings on one noise for each
    mollification, the drift identity for two nearby solutions, and the
    homogeneous linear equation for Z."""
    from .rde import COEFFICIENTS
    from .timegrid import dyadic_grid

    coeff = COEFFICIENTS[config.sigma]()
    params = FbmParams(config.H, coeff.d0)
    spec = DriftSpec(config.alpha, coeff.d, config.K, config.seed)
    top = max(max(config.levels), config.identity_level)
    fine = GaussianDriver.from_seed(dyadic_grid(top), config.seed, coeff.d0)
    x0 = np.full(coeff.d, config.x0)
    diffs = np.zeros((len(config.eps), len(config.levels)))
    lifts = {}
    for j, lev in enumerate(config.levels):
        drv = fine.coarsen(2 ** (top - lev))
        lifts[lev] = lift_piecewise_linear(sample_fbm_volterra(drv, params))
        for i, eps in enumerate(config.eps):
            b = spec.drift(eps)
            a = solve_with_drift(b, coeff, lifts[lev], x0).values
            c = solve_with_drift_reordered(b, coeff, lifts[lev], x0).values
            diffs[i, j] = float(np.max(np.abs(a - c)))
    ratios = diffs[:, :-1] / diffs[:, 1:]

    lev = config.identity_level
    if lev not in lifts:
        lifts[lev] = lift_piecewise_linear(sample_fbm_volterra(fine.coarsen(2 ** (top - lev)), params))
    rp = lifts[lev]
    eps = config.eps[len(config.eps) // 2]
    b = spec.drift(eps)
    X = solve_with_drift(b, coeff, rp, x0)
    Y = solve_with_drift(b, coeff, rp, x0 + config.dz)
    data = build_G(rp, X, Y, spec.gradient(eps), config.rho, provenance={"seed": config.seed, "eps": eps})
    S, Sh = sigma_avg(X.values, Y.values, coeff)
    ident = drift_identity(data.G, X, Y, b, S)
    Z0 = solve_linear_Z(data.G, S, Sh, np.zeros(coeff.d))
    return UniquenessReport(
        np.asarray(config.eps), np.asarray(config.levels), diffs, ratios, ident, float(np.max(np.abs(Z0.values)))
    )
