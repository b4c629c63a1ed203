import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughreg.fbm import FbmParams, GaussianDriver, sample_fbm_cholesky
from roughreg.rde import (
    Coefficient,
    constant_coefficient,
    exp_bounded_coefficient,
    fbm_lift,
    flow_identity_residual,
    inverse_flow_point,
    linear_scalar_coefficient,
    malliavin_kernel,
    self_convergence,
    sin_coefficient,
    solve_flow,
    solve_jacobian,
    solve_with_drift,
    solve_with_drift_reordered,
    stability_rate,
    trig_coefficient,
)
from roughreg.roughpath import lift_piecewise_linear
from roughreg.timegrid import Path, TimeGrid, dyadic_grid, loglog_fit

P = FbmParams(0.4)
GAMMA = 0.39


def _nested_lifts(seed=3, top=12, d0=1):
    fine = dyadic_grid(top)
    B = sample_fbm_cholesky(fine, FbmParams(0.4, d0), seed)

    def lift(level):
        st_ = 2 ** (top - level)
        return lift_piecewise_linear(Path(TimeGrid(fine.times[::st_]), B.values[::st_]), GAMMA)

    return lift


def _self_error(coeff, lift, level, x, top=12):
    ref = solve_flow(coeff, lift(top), 0.0, x).phi.values
    return float(np.max(np.abs(solve_flow(coeff, lift(level), 0.0, x).phi.values - ref[:: 2 ** (top - level)])))


def test_constant_sigma_exact():
    M = np.array([[1.0, 0.5], [-0.3, 2.0]])
    coeff = constant_coefficient(M)
    lift = _nested_lifts(d0=2, top=9)
    rp = lift(9)
    x = np.array([0.2, -1.0])
    phi = solve_flow(coeff, rp, 0.25, x).phi.values
    k = rp.grid.index_of(0.25)
    B = rp.g.values[k:] - rp.g.values[k]
    assert np.max(np.abs(phi - (x + B @ M.T))) <= 1e-14


def test_linear_sigma_closed_form():
    lift = _nested_lifts()
    coeff = linear_scalar_coefficient()
    errs = []
    for level in (8, 10):
        rp = lift(level)
        phi = solve_flow(coeff, rp, 0.0, [0.7]).phi.values[:, 0]
        errs.append(np.max(np.abs(phi - 0.7 * np.exp(rp.g.values[:, 0] - rp.g.values[0, 0]))))
    assert errs[1] < errs[0] < 0.05


def test_batched_flow_matches_single():
    rp = _nested_lifts()(8)
    coeff = sin_coefficient()
    batch = solve_flow(coeff, rp, 0.0, np.array([[0.1], [0.5]]))
    for i, x in enumerate((0.1, 0.5)):
        assert np.array_equal(batch[i], solve_flow(coeff, rp, 0.0, [x]).phi.values)


def test_flow_semigroup_exact():
    rp = _nested_lifts(seed=5)(9)
    coeff = exp_bounded_coefficient()
    whole = solve_flow(coeff, rp, 0.25, [0.4]).phi.values
    ku = rp.grid.index_of(0.5) - rp.grid.index_of(0.25)
    restart = solve_flow(coeff, rp, 0.5, whole[ku]).phi.values
    assert np.array_equal(restart, whole[ku:])


def test_constant_sigma_jacobian_identity():
    coeff = constant_coefficient([[1.0, 0.0], [0.5, 1.0]])
    sol = solve_jacobian(coeff, _nested_lifts(d0=2, top=8)(8), 0.0, [0.0, 0.0])
    assert np.all(sol.J.values == np.eye(2)) and np.all(sol.Jinv.values == np.eye(2))


def test_linear_sigma_jacobian_closed_form():
    lift = _nested_lifts()
    errs = []
    for level in (8, 10):
        rp = lift(level)
        J = solve_jacobian(linear_scalar_coefficient(), rp, 0.0, [1.3]).J.values[:, 0, 0]
        errs.append(np.max(np.abs(J - np.exp(rp.g.values[:, 0] - rp.g.values[0, 0]))))
    assert errs[1] < errs[0] < 0.05


@pytest.mark.parametrize("seed", [3, 4])
def test_jacobian_times_inverse(seed):
    lift = _nested_lifts(seed)
    coeff = sin_coefficient()
    sol = solve_jacobian(coeff, lift(9), 0.0, [0.3])
    resid = np.max(np.abs(sol.J.values @ sol.Jinv.values - np.eye(1)))
    assert resid <= 10 * _self_error(coeff, lift, 9, [0.3])


def test_flow_identity():
    lift = _nested_lifts()
    coeff = sin_coefficient()
    rp = lift(9)
    assert flow_identity_residual(coeff, rp, 0.0, [0.3]) <= 1e-12
    const = constant_coefficient([[2.0]])
    assert flow_identity_residual(const, rp, 0.5, [0.3]) == 0.0
    assert flow_identity_residual(coeff, rp, 0.5, [0.3]) <= 10 * _self_error(coeff, lift, 9, [0.3])


def test_flow_identity_multidimensional():
    lift = _nested_lifts(seed=6, top=10, d0=2)
    coeff = trig_coefficient(2)
    x = np.array([0.1, -0.2])
    err = _self_error(coeff, lift, 8, x, top=10)
    assert flow_identity_residual(coeff, lift(8), 0.5, x) <= 10 * err


def test_inverse_flow_point():
    rp = _nested_lifts()(8)
    coeff = sin_coefficient()
    y = inverse_flow_point(coeff, rp, 0.5, [0.3])
    k = rp.grid.index_of(0.5)
    assert solve_flow(coeff, rp, 0.0, y).phi.values[k, 0] == pytest.approx(0.3, abs=1e-12)
    with pytest.raises(RuntimeError, match="50 steps"):
        inverse_flow_point(coeff, rp, 0.5, [0.3], max_iter=0)


def test_malliavin_kernel_constant_and_indicator():
    rp = _nested_lifts(d0=2, top=8)(8)
    M = np.array([[1.0, 0.5], [0.0, 2.0]])
    sol = solve_jacobian(constant_coefficient(M), rp, 0.25, [0.0, 0.0])
    assert np.array_equal(malliavin_kernel(sol, 0.5, 0.75), M)
    assert np.all(malliavin_kernel(sol, 0.8, 0.75) == 0)
    assert np.all(malliavin_kernel(sol, 0.125, 0.75) == 0)
    with pytest.raises(ValueError):
        malliavin_kernel(solve_flow(constant_coefficient(M), rp, 0.0, [0.0, 0.0]), 0.5, 0.75)


def test_malliavin_kernel_duhamel():
    rp = _nested_lifts()(10)
    coeff = sin_coefficient()
    sol = solve_jacobian(coeff, rp, 0.0, [0.3])
    t = rp.grid.times
    h, dh = np.sin(3 * t) + t**2, 3 * np.cos(3 * t) + 2 * t
    eps = 1e-4
    shifted = lift_piecewise_linear(Path(rp.grid, rp.g.values + eps * h[:, None]), GAMMA)
    fd = (solve_flow(coeff, shifted, 0.0, [0.3]).phi.values[-1, 0] - sol.phi.values[-1, 0]) / eps
    ker = np.array([malliavin_kernel(sol, r, 1.0)[0, 0] for r in t])
    integral = np.sum(0.5 * (ker[1:] * dh[1:] + ker[:-1] * dh[:-1]) * np.diff(t))
    assert abs(fd - integral) <= 0.05 * abs(fd)


def test_drift_zero_is_bitwise_driftless():
    rp = _nested_lifts()(9)
    coeff = sin_coefficient()
    assert np.array_equal(solve_with_drift(None, coeff, rp, [0.3]).values, solve_flow(coeff, rp, 0.0, [0.3]).phi.values)
    zero = solve_with_drift(lambda x: 0 * x, coeff, rp, [0.3]).values
    assert np.array_equal(zero, solve_flow(coeff, rp, 0.0, [0.3]).phi.values)


def test_pure_drift_ode():
    rp = _nested_lifts()(10)
    X = solve_with_drift(lambda x: -x, constant_coefficient([[0.0]]), rp, [1.0]).values[:, 0]
    assert np.max(np.abs(X - np.exp(-rp.grid.times))) <= 2.0**-10


def test_drift_component_is_lipschitz():
    rp = _nested_lifts()(10)
    coeff = sin_coefficient()
    b = lambda x: np.sin(2 * x)  # noqa: E731
    X = solve_with_drift(b, coeff, rp, [0.1]).values
    D = np.concatenate([[0.0], np.cumsum(b(X[:-1, 0]) * np.diff(rp.grid.times))])
    widths, worst = [], []
    for lev in range(5, 10):
        step = 1024 // 2**lev
        s = np.arange(2**lev) * step
        widths.append(step / 1024)
        worst.append(np.abs(D[s + step] - D[s]).max())
    assert loglog_fit(widths, worst)[0] == pytest.approx(1.0, abs=0.1)


def test_reordered_scheme_agrees_to_first_order():
    lift = _nested_lifts()
    b = lambda x: x * x * np.exp(-x * x)  # noqa: E731
    gaps = []
    for level in (8, 10):
        rp = lift(level)
        a = solve_with_drift(b, sin_coefficient(), rp, [0.2]).values
        c = solve_with_drift_reordered(b, sin_coefficient(), rp, [0.2]).values
        gaps.append(np.max(np.abs(a - c)))
    assert gaps[1] < gaps[0]


def test_non_finite_state_aborts():
    rp = _nested_lifts()(6)
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError, match="non-finite state at t="):
        solve_flow(_square_coefficient(), rp, 0.0, [1e200])


def _square_coefficient():
    return Coefficient(
        1,
        1,
        lambda x: (x * x)[..., None],
        lambda x: (2 * x)[..., None, None],
        lambda x: 2 * np.ones_like(x)[..., None, None, None],
        0.0,
        np.inf,
    )


@pytest.mark.parametrize("coeff", [sin_coefficient(), exp_bounded_coefficient(), trig_coefficient(2), trig_coefficient(3, c=3.0)])
def test_ellipticity(coeff):
    pts = np.random.default_rng(0).uniform(-5, 5, size=(500, coeff.d))
    assert coeff.ellipticity_spot_check(pts) >= coeff.lam - 1e-8


@pytest.mark.parametrize("coeff", [sin_coefficient(), exp_bounded_coefficient(), trig_coefficient(2)])
def test_coefficient_derivatives_by_finite_differences(coeff):
    x = np.random.default_rng(1).uniform(-2, 2, size=(5, coeff.d))
    h = 1e-6
    for l in range(coeff.d):
        e = np.zeros(coeff.d)
        e[l] = h
        fd = (coeff.sigma(x + e) - coeff.sigma(x - e)) / (2 * h)
        assert np.allclose(coeff.dsigma(x)[..., l], fd, atol=1e-7)
        fd2 = (coeff.dsigma(x + e) - coeff.dsigma(x - e)) / (2 * h)
        assert np.allclose(coeff.d2sigma(x)[..., l], fd2, atol=1e-7)


def test_stability_rate_zero_drift():
    fit = stability_rate(None, sin_coefficient(), P, level=7, scales=(2.0**-2, 2.0**-3, 2.0**-4), replicas=4)
    assert np.all(fit.lp_norms == 0) and not fit.reliable


def test_stability_rate_planted_oracle():
    t = dyadic_grid(7).times

    def planted(X, ks, kt):
        return X[kt] + (t[kt] - t[ks]) ** 1.3 * (1 + np.abs(X[ks]))

    fit = stability_rate(lambda x: -x, sin_coefficient(), P, level=7, scales=(2.0**-2, 2.0**-3, 2.0**-4, 2.0**-5), replicas=20, comparator=planted)
    assert fit.slope == pytest.approx(1.3, abs=0.1)


def test_self_convergence_outputs():
    h, mean, errors = self_convergence(sin_coefficient(), P, (6, 7, 8), ref_level=10, samples=4)
    assert errors.shape == (4, 3)
    assert np.all(np.diff(mean) < 0)
    assert np.allclose(h, [2.0**-6, 2.0**-7, 2.0**-8])


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 1000))
def test_flow_with_constant_sigma_exact_property(x, seed):
    rp = fbm_lift(GaussianDriver.from_seed(dyadic_grid(6), seed), P)
    phi = solve_flow(constant_coefficient([[1.7]]), rp, 0.0, [x]).phi.values[:, 0]
    assert np.max(np.abs(phi - (x + 1.7 * (rp.g.values[:, 0] - rp.g.values[0, 0])))) <= 1e-13


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([0.0, 0.25, 0.5]))
def test_flow_semigroup_property(seed, s):
    rp = fbm_lift(GaussianDriver.from_seed(dyadic_grid(6), seed), P)
    coeff = sin_coefficient()
    whole = solve_flow(coeff, rp, s, [0.2]).phi.values
    ku = rp.grid.index_of(0.75) - rp.grid.index_of(s)
    assert np.array_equal(solve_flow(coeff, rp, 0.75, whole[ku]).phi.values, whole[ku:])
