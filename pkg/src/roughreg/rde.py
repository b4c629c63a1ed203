"""Rough differential equations on a grid: the driftless flow, its Jacobian
and inverse Jacobian, the flow identity, the Malliavin kernel, drifted
solutions and the stability rate experiment.

Arrays carry an optional leading batch axis so Monte-Carlo replicas can be
advanced together. Coefficient derivatives use the layout
``dsigma[..., i, b, l] = ∂_l σ^{ib}`` and ``d2sigma[..., i, b, l, q] = ∂_q ∂_l σ^{ib}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fbm import FbmParams, GaussianDriver, sample_fbm_volterra
from .roughpath import RoughPath, lift_piecewise_linear
from .sewing import RateFit, _fit, lp_norm
from .timegrid import Path


@dataclass(frozen=True)
class Coefficient:
    d: int
    d0: int
    sigma: Callable
    dsigma: Callable
    d2sigma: Callable
    lam: float
    c1: float
    name: str = "custom"

    def ellipticity_spot_check(self, points) -> float:
        """Smallest eigenvalue of σσ* over the given points."""
        s = self.sigma(np.asarray(points, float))
        return float(np.min(np.linalg.eigvalsh(s @ np.swapaxes(s, -1, -2))))


def constant_coefficient(M) -> Coefficient:
    M = np.atleast_2d(np.asarray(M, float))
    d, d0 = M.shape
    sv = np.linalg.svd(M, compute_uv=False)
    lam = float(sv[-1] ** 2) if d <= d0 else 0.0
    return Coefficient(
        d,
        d0,
        lambda x: np.broadcast_to(M, np.shape(x)[:-1] + (d, d0)),
        lambda x: np.zeros(np.shape(x)[:-1] + (d, d0, d)),
        lambda x: np.zeros(np.shape(x)[:-1] + (d, d0, d, d)),
        lam,
        float(np.abs(M).max()),
        "const",
    )


def _scalar_coefficient(f, df, d2f, lam, c1, name) -> Coefficient:
    return Coefficient(
        1,
        1,
        lambda x: f(x)[..., None],
        lambda x: df(x)[..., None, None],
        lambda x: d2f(x)[..., None, None, None],
        lam,
        c1,
        name,
    )


def sin_coefficient() -> Coefficient:
    """σ(x) = 2 + sin x in one dimension."""
    return _scalar_coefficient(lambda x: 2.0 + np.sin(x), np.cos, lambda x: -np.sin(x), 1.0, 4.0, "sin")


def exp_bounded_coefficient() -> Coefficient:
    """σ(x) = 1 + exp(-x²)/2 in one dimension."""
    e = lambda x: np.exp(-x * x)  # noqa: E731
    return _scalar_coefficient(
        lambda x: 1.0 + 0.5 * e(x),
        lambda x: -x * e(x),
        lambda x: (2 * x * x - 1) * e(x),
        1.0,
        1.5 + math.sqrt(0.5 / math.e),
        "exp-bounded",
    )


def linear_scalar_coefficient() -> Coefficient:
    """σ(x) = x; unbounded and degenerate, used for closed-form checks only."""
    return _scalar_coefficient(lambda x: x, np.ones_like, np.zeros_like, 0.0, math.inf, "linear")


def trig_coefficient(d: int, c: float = 2.0, amp: float = 0.3, seed: int = 0) -> Coefficient:
    """σ^{ib}(x) = c δ_{ib} + amp sin(⟨w_{ib}, x⟩ + φ_{ib}) with d0 = d."""
    rng = np.random.default_rng(seed)
    W = rng.uniform(-1, 1, size=(d, d, d))
    phase = rng.uniform(0, 2 * np.pi, size=(d, d))
    eye = np.eye(d)

    def arg(x):
        return np.einsum("ibl,...l->...ib", W, x) + phase

    lam = max(c - amp * d, 0.0) ** 2
    c1 = c + amp * d + amp * d * float(np.abs(W).max())
    return Coefficient(
        d,
        d,
        lambda x: c * eye + amp * np.sin(arg(x)),
        lambda x: amp * np.cos(arg(x))[..., None] * W,
        lambda x: -amp * np.sin(arg(x))[..., None, None] * W[..., :, None] * W[..., None, :],
        lam,
        c1,
        "trig",
    )


COEFFICIENTS = {"const": lambda: constant_coefficient([[1.0]]), "sin": sin_coefficient, "exp-bounded": exp_bounded_coefficient}


def davie_increment(coeff: Coefficient, x, dg, area):
    """σ(x) g + (∇σ σ)(x) 𝔾 for a batch of states x (n, d)."""
    s = coeff.sigma(x)
    ds = coeff.dsigma(x)
    first = np.einsum("nib,nb->ni", s, np.broadcast_to(dg, (x.shape[0], coeff.d0)))
    second = np.einsum("nibl,nla,nab->ni", ds, s, np.broadcast_to(area, (x.shape[0], coeff.d0, coeff.d0)))
    return first + second


def _jacobian_increment(coeff, x, J, dg, area):
    s, ds, d2s = coeff.sigma(x), coeff.dsigma(x), coeff.d2sigma(x)
    first = np.einsum("nibl,nlj,nb->nij", ds, J, dg)
    second = np.einsum("niblq,nqa,nlj,nab->nij", d2s, s, J, area) + np.einsum(
        "nibl,nlam,nmj,nab->nij", ds, ds, J, area
    )
    return first + second


def _inverse_jacobian_increment(coeff, x, Ji, dg, area):
    s, ds, d2s = coeff.sigma(x), coeff.dsigma(x), coeff.d2sigma(x)
    first = -np.einsum("nik,nkbl,nb->nil", Ji, ds, dg)
    second = np.einsum("nik,nkam,nmbl,nab->nil", Ji, ds, ds, area) - np.einsum(
        "nik,nkblq,nqa,nab->nil", Ji, d2s, s, area
    )
    return first + second


@dataclass(frozen=True, eq=False)
class FlowSolution:
    s: float
    x: np.ndarray
    phi: Path
    J: Path | None = None
    Jinv: Path | None = None
    coeff: Coefficient | None = field(default=None, repr=False)

    @property
    def grid(self):
        return self.phi.grid


def _as_batch(x, d):
    x = np.asarray(x, float)
    single = x.ndim == 1
    x = x.reshape(-1, d)
    return x, single


def _cells(rp: RoughPath, k0: int, k1: int | None = None):
    k1 = rp.grid.n - 1 if k1 is None else k1
    dg = rp.cell_increments()[k0:k1]
    area = rp.cell_areas()[k0:k1]
    return dg, area


def integrate(coeff, dg, area, x0, dt=None, drift=None, jacobian=False, start=None, check_from=0.0, times=None):
    """Advance a batch of states through the cells (dg[k], area[k]).

    ``start[n]`` (optional) is the first cell at which replica n moves; before
    it the state is frozen. Returns the trajectory of shape (cells+1, n, d)
    and, if requested, the trajectories of J and J^{-1}.
    """
    x = np.array(x0, float)
    nb, d = x.shape
    cells = dg.shape[0]
    traj = np.empty((cells + 1, nb, d))
    traj[0] = x
    if jacobian:
        J = np.broadcast_to(np.eye(d), (nb, d, d)).copy()
        Ji = J.copy()
        Js, Jis = [J.copy()], [Ji.copy()]
    for k in range(cells):
        g = np.broadcast_to(dg[k], (nb, coeff.d0))
        a = np.broadcast_to(area[k], (nb, coeff.d0, coeff.d0))
        inc = davie_increment(coeff, x, g, a)
        if jacobian:
            J = J + _jacobian_increment(coeff, x, J, g, a)
            Ji = Ji + _inverse_jacobian_increment(coeff, x, Ji, g, a)
            Js.append(J)
            Jis.append(Ji)
        new = x + inc
        if drift is not None:
            new = new + drift(x) * dt[k]
        if start is not None:
            new = np.where((k >= start)[:, None], new, x)
        if not np.all(np.isfinite(new)):
            when = check_from if times is None else times[k + 1]
            raise FloatingPointError(f"non-finite state at t={when}")
        x = new
        traj[k + 1] = x
    if jacobian:
        return traj, np.array(Js), np.array(Jis)
    return traj


def solve_flow(coeff: Coefficient, rp: RoughPath, s: float, x) -> FlowSolution:
    k = rp.grid.index_of(s)
    dg, area = _cells(rp, k)
    x0, single = _as_batch(x, coeff.d)
    traj = integrate(coeff, dg, area, x0, times=rp.grid.times[k:])
    sub = rp.grid.restrict(k, rp.grid.n - 1)
    vals = traj[:, 0] if single else np.moveaxis(traj, 0, 1)
    phi = Path(sub, vals) if single else vals
    if not single:
        return phi
    return FlowSolution(float(rp.grid.times[k]), np.asarray(x, float), phi, coeff=coeff)


def solve_jacobian(coeff: Coefficient, rp: RoughPath, s: float, x) -> FlowSolution:
    k = rp.grid.index_of(s)
    dg, area = _cells(rp, k)
    x0, _ = _as_batch(x, coeff.d)
    traj, Js, Jis = integrate(coeff, dg, area, x0[:1], jacobian=True, times=rp.grid.times[k:])
    sub = rp.grid.restrict(k, rp.grid.n - 1)
    return FlowSolution(
        float(rp.grid.times[k]),
        np.asarray(x, float).reshape(coeff.d),
        Path(sub, traj[:, 0]),
        Path(sub, Js[:, 0]),
        Path(sub, Jis[:, 0]),
        coeff,
    )


def inverse_flow_point(coeff: Coefficient, rp: RoughPath, s: float, x, max_iter: int = 50, tol: float = 1e-13):
    """y with φ^{0,y}_s = x, by damped Newton using the scheme's Jacobian."""
    k = rp.grid.index_of(s)
    x = np.asarray(x, float).reshape(coeff.d)
    dg, area = _cells(rp, 0, k)
    y = x.copy()

    def forward(y):
        traj, Js, _ = integrate(coeff, dg, area, y[None], jacobian=True)
        return traj[-1, 0], Js[-1, 0]

    val, J = forward(y)
    res = val - x
    scale = max(1.0, float(np.abs(x).max()))
    for _ in range(max_iter):
        if np.abs(res).max() <= tol * scale:
            return y
        step = np.linalg.solve(J, res)
        lam = 1.0
        while True:
            cand = y - lam * step
            v2, J2 = forward(cand)
            r2 = v2 - x
            if np.abs(r2).max() < np.abs(res).max() or lam < 1e-6:
                break
            lam *= 0.5
        y, val, J, res = cand, v2, J2, r2
    if np.abs(res).max() <= tol * scale * 10:
        return y
    raise RuntimeError("Newton iteration for the inverse flow did not converge in 50 steps")


def flow_identity_residual(coeff: Coefficient, rp: RoughPath, s: float, x) -> float:
    """max_t |J^{s,x}_t − J^{0,y}_t (J^{0,y}_s)^{-1}| with y the preimage of x under φ^{0,·}_s."""
    k = rp.grid.index_of(s)
    y = inverse_flow_point(coeff, rp, s, x)
    left = solve_jacobian(coeff, rp, s, x).J.values
    full = solve_jacobian(coeff, rp, 0.0, y).J.values
    right = full[k:] @ np.linalg.inv(full[k])
    return float(np.max(np.abs(left - right)))


def malliavin_kernel(flow: FlowSolution, r: float, t: float) -> np.ndarray:
    """J_t J_r^{-1} σ(φ_r) 1_{s ≤ r ≤ t}."""
    if flow.J is None or flow.Jinv is None or flow.coeff is None:
        raise ValueError("the flow must carry J, J^{-1} and its coefficient")
    grid = flow.grid
    kt = grid.index_of(t)
    coeff = flow.coeff
    if r < flow.s - 1e-12 or r > t + 1e-12:
        return np.zeros((coeff.d, coeff.d0))
    kr = grid.index_of(r)
    sig = coeff.sigma(flow.phi.values[kr][None])[0]
    return flow.J.values[kt] @ flow.Jinv.values[kr] @ sig


def solve_with_drift(b: Callable | None, coeff: Coefficient, rp: RoughPath, x0, s: float = 0.0) -> Path:
    """X⁺ = X + σ(X)g + (∇σσ)(X)𝔾 + b(X)Δt on every cell from s on."""
    k = rp.grid.index_of(s)
    dg, area = _cells(rp, k)
    x, single = _as_batch(x0, coeff.d)
    dt = np.diff(rp.grid.times[k:])
    traj = integrate(coeff, dg, area, x, dt=dt, drift=b, times=rp.grid.times[k:])
    sub = rp.grid.restrict(k, rp.grid.n - 1)
    if single:
        return Path(sub, traj[:, 0])
    return np.moveaxis(traj, 0, 1)


def solve_with_drift_reordered(b: Callable, coeff: Coefficient, rp: RoughPath, x0) -> Path:
    """Alternative splitting: drift first, then the rough step from the drifted point."""
    dg, area = _cells(rp, 0)
    dt = np.diff(rp.grid.times)
    x, single = _as_batch(x0, coeff.d)
    traj = [x]
    for k in range(dg.shape[0]):
        y = x + b(x) * dt[k]
        x = y + davie_increment(coeff, y, dg[k][None], area[k][None])
        traj.append(x)
    traj = np.array(traj)
    return Path(rp.grid, traj[:, 0]) if single else np.moveaxis(traj, 0, 1)


def fbm_lift(driver: GaussianDriver, params: FbmParams, gamma: float | None = None) -> RoughPath:
    B = sample_fbm_volterra(driver, params)
    return lift_piecewise_linear(B, params.H - 0.01 if gamma is None else gamma)


def stability_rate(
    b: Callable | None,
    coeff: Coefficient,
    params: FbmParams,
    level: int = 8,
    anchors: Sequence[float] = (0.0, 0.125, 0.25, 0.5),
    scales: Sequence[float] = (2.0**-2, 2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6),
    replicas: int = 200,
    seed: int = 0,
    x0=None,
    p: float = 2.0,
    comparator: Callable | None = None,
) -> RateFit:
    """Fit ‖X_{s+Δ} − φ^{s,X_s}_{s+Δ}‖_{L^p} ~ Δ^slope (max over anchors).

    ``comparator(X, k_s, k_t)``, if given, replaces the flow value at index
    k_t started from X at index k_s (used to calibrate the fitter).
    """
    from .timegrid import dyadic_grid

    grid = dyadic_grid(level)
    scales = np.asarray(scales, float)
    x0 = np.zeros(coeff.d) if x0 is None else np.asarray(x0, float)
    h = 1.0 / 2**level
    steps = np.rint(scales / h).astype(int)
    diffs = np.zeros((len(anchors), scales.size, replicas, coeff.d))
    for r in range(replicas):
        drv = GaussianDriver.from_seed(grid, seed + r, coeff.d0)
        rp = fbm_lift(drv, params)
        X = solve_with_drift(b, coeff, rp, x0).values
        for a, s in enumerate(anchors):
            ks = grid.index_of(s)
            if comparator is None:
                dg, area = _cells(rp, ks, ks + steps.max())
                phi = integrate(coeff, dg, area, X[ks][None])[:, 0]
                ref = phi[steps]
            else:
                ref = np.array([comparator(X, ks, ks + m) for m in steps])
            diffs[a, :, r] = X[ks + steps] - ref
    norms = np.array([[lp_norm(diffs[a, k], p) for k in range(scales.size)] for a in range(len(anchors))])
    best = norms.max(axis=0)
    return _fit(scales, best, p)


def self_convergence(
    coeff: Coefficient,
    params: FbmParams,
    levels: Sequence[int],
    ref_level: int = 12,
    samples: int = 16,
    seed: int = 0,
    x0=None,
):
    """Sup-norm distance on each coarse grid between the scheme at that level
    and at ``ref_level``, every level driven by the same exact fBm samples.

    Returns ``(h, mean_errors, errors)`` with ``errors`` of shape
    (samples, len(levels)).
    """
    from .fbm import sample_fbm_cholesky
    from .timegrid import dyadic_grid

    fine = dyadic_grid(ref_level)
    B = sample_fbm_cholesky(fine, FbmParams(params.H, coeff.d0), seed, n_samples=samples)
    x0 = np.zeros(coeff.d) if x0 is None else np.asarray(x0, float)
    start = np.broadcast_to(x0, (samples, coeff.d))

    def run(stride):
        dg = np.diff(B[:, ::stride], axis=1)  # (samples, cells, d0)
        dg = np.moveaxis(dg, 0, 1)
        area = 0.5 * dg[..., :, None] * dg[..., None, :]
        return integrate(coeff, dg, area, start)  # (cells+1, samples, d)

    ref = run(1)
    errors = np.empty((samples, len(levels)))
    for j, lev in enumerate(levels):
        stride = 2 ** (ref_level - lev)
        diff = run(stride) - ref[::stride]
        errors[:, j] = np.max(np.abs(diff), axis=(0, 2))
    h = np.array([2.0**-lev for lev in levels])
    return h, errors.mean(axis=0), errors
