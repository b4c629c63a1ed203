import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughreg.controlled import SIN, compose, identity_controlled, rough_integral, rough_integral_germ
from roughreg.fbm import FbmParams, IncrementGermSample, sample_fbm_cholesky
from roughreg.roughpath import lift_piecewise_linear
from roughreg.sewing import (
    Germ,
    PlantedGermSample,
    delta_defect_fit,
    fit_rate,
    lp_norm,
    mc_rate_beta1,
    mc_rate_beta2,
    sew,
)
from roughreg.timegrid import dyadic_grid, loglog_fit

H = 0.4
SCALES = (2.0**-2, 2.0**-3, 2.0**-4, 2.0**-5)


def _smooth_germ(level=10):
    g = dyadic_grid(level)
    t = g.times
    return Germ(g, lambda si, ti: (np.cos(t[si]) * (t[ti] - t[si]))[:, None])


def _additive_germ(level=8, planted=0.0):
    g = dyadic_grid(level)
    t = g.times
    F = np.sin(7 * t) + t**3
    return Germ(g, lambda si, ti: (F[ti] - F[si] + planted * (t[ti] - t[si]) ** 2)[:, None])


def _fbm_integral(seed=0, level=9):
    rp = lift_piecewise_linear(sample_fbm_cholesky(dyadic_grid(level), FbmParams(H, 2), seed), H - 0.01)
    return compose(SIN, identity_controlled(rp))


def test_sew_riemann_sums():
    rep = sew(_smooth_germ())
    assert rep.limit[0] == pytest.approx(math.sin(1.0), abs=2.0**-10)
    assert rep.order == pytest.approx(1.0, abs=0.1)
    assert np.all(rep.cauchy >= 0)


def test_sew_additive_germ():
    rep = sew(_additive_germ())
    assert np.all(rep.cauchy <= 1e-14)
    assert np.allclose(rep.level_sums, rep.level_sums[0], atol=1e-14)


def test_sew_rough_integral_bitwise():
    cp = _fbm_integral(level=7)
    rep = sew(rough_integral_germ(cp))
    assert np.array_equal(rep.limit_path, rough_integral(cp).values[:, 0])


def test_sew_additive_over_concatenation():
    germ = rough_integral_germ(_fbm_integral(1, level=8))
    whole = sew(germ).limit
    halves = sew(germ, (0.0, 0.5)).limit + sew(germ, (0.5, 1.0)).limit
    assert np.allclose(whole, halves, atol=1e-13)


def test_sew_rejects_non_dyadic_interval():
    with pytest.raises(ValueError):
        sew(_smooth_germ(4), (0.0, 0.75))


def test_delta_defect_additive_is_infinite():
    theta, c = delta_defect_fit(_additive_germ())
    assert theta == math.inf and c == 0.0


def test_delta_defect_planted_square():
    # δA_{s,u,t} = 2(u-s)(t-u) = (t-s)²/2 at the midpoint
    theta, c = delta_defect_fit(_additive_germ(planted=1.0))
    assert theta == pytest.approx(2.0, abs=0.05)
    assert c == pytest.approx(0.5, rel=1e-6)


def test_delta_defect_rough_integral():
    # one path gives a slope within about ±0.35 of 3γ (heavy-tailed maxima of
    # cubic increments), so the fitted exponent is averaged over eight lifts
    gamma = H - 0.01
    thetas = [
        delta_defect_fit(rough_integral_germ(_fbm_integral(s, level=10)), min_level=3, triples_per_level=8)[0]
        for s in range(8)
    ]
    assert abs(np.mean(thetas) - 3 * gamma) <= 0.2, thetas


def test_delta_defect_needs_three_scales():
    with pytest.raises(ValueError):
        delta_defect_fit(_smooth_germ(3), min_level=1, max_level=2)


def _remainder_slope(seed, level=10, per_level=8):
    germ = rough_integral_germ(_fbm_integral(seed, level))
    path = sew(germ).limit_path
    n = 2**level
    widths, worst = [], []
    for lev in range(3, level - 1):
        step = n // 2**lev
        s = np.arange(2**lev) * step
        s = s[np.linspace(0, s.size - 1, per_level).round().astype(int)]
        widths.append(step / n)
        worst.append(np.abs(path[s + step] - path[s] - germ(s, s + step)).max())
    return loglog_fit(widths, worst)[0]


def test_sewn_remainder_scaling():
    # |𝒜_t − 𝒜_s − A_{s,t}| scales like |t−s|^{3γ}
    slopes = [_remainder_slope(seed) for seed in range(8)]
    assert abs(np.mean(slopes) - 3 * (H - 0.01)) <= 0.2, slopes


class _Deterministic:
    def __init__(self, seed):
        pass

    def values(self, s, ts):
        return np.asarray(ts) - s


def test_beta1_deterministic_germ():
    fit = mc_rate_beta1(_Deterministic, scales=SCALES, replicas=3)
    assert fit.slope == pytest.approx(1.0, abs=1e-12)


def test_beta1_fbm_increment():
    # exact oracle: ‖B_{s,s+Δ}‖_{L²} = Δ^H, so the log-log slope is H
    fit = mc_rate_beta1(lambda seed: IncrementGermSample(seed, FbmParams(H)), scales=SCALES, replicas=2000)
    assert fit.slope == pytest.approx(H, abs=0.05)


def test_beta1_validation():
    with pytest.raises(ValueError):
        mc_rate_beta1(_Deterministic, p=1.5, scales=SCALES, replicas=2)
    with pytest.raises(ValueError):
        mc_rate_beta1(_Deterministic, scales=(0.25, 0.125), replicas=2)
    with pytest.raises(ValueError):
        fit_rate([0.1, 0.2, 0.3], [1, 2, 3])


def test_beta2_additive_flagged():
    fit = mc_rate_beta2(lambda seed: IncrementGermSample(seed, FbmParams(H), level=6), scales=SCALES, outer=4, inner=100)
    assert not fit.reliable


def test_beta2_planted():
    fit = mc_rate_beta2(lambda seed: PlantedGermSample(seed, beta2=1.5), scales=SCALES, outer=400, inner=100)
    assert fit.reliable
    assert fit.slope == pytest.approx(1.5, abs=0.1)


def test_beta2_noise_guard():
    noisy = mc_rate_beta2(lambda seed: PlantedGermSample(seed, beta2=1.5, noise=0.5), scales=SCALES, outer=50, inner=100)
    assert not noisy.reliable
    with pytest.raises(ValueError):
        mc_rate_beta2(lambda seed: PlantedGermSample(seed), scales=SCALES, outer=2, inner=50)


def test_beta2_bias_vanishes_with_inner():
    exact = mc_rate_beta2(lambda seed: PlantedGermSample(seed, beta2=1.5), scales=SCALES, outer=500, inner=100)
    gaps = []
    for inner in (100, 400, 1600):
        fit = mc_rate_beta2(lambda seed: PlantedGermSample(seed, beta2=1.5, noise=0.05), scales=SCALES, outer=500, inner=inner)
        gaps.append(abs(fit.slope - exact.slope))
    assert gaps[2] < gaps[1] < gaps[0]


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.1, 10.0))
def test_fit_rate_recovers_planted_power(beta, c):
    s = np.array(SCALES)
    fit = fit_rate(s, c * s**beta)
    assert fit.slope == pytest.approx(beta, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(2.0, 6.0))
def test_lp_norm_homogeneous(seed, p):
    x = np.random.default_rng(seed).standard_normal((50, 3))
    assert lp_norm(3 * x, p) == pytest.approx(3 * lp_norm(x, p))
    assert lp_norm(x, p) >= lp_norm(x, 2.0) - 1e-12
