import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughreg.cmspace import (
    StepFunction,
    h_inner,
    indicator,
    interpolation_ratio,
    kstar_apply,
    kstar_rule,
    projected_inner,
    qs_double_sum,
    step_from_path,
)
from roughreg.fbm import FbmParams, _kernel_fast, conditional_cov_Qs, covariance_Q
from roughreg.timegrid import Path, TimeGrid, dyadic_grid

P = FbmParams(0.4)


def test_step_function_evaluation_and_indicator_form():
    h = StepFunction([0.1, 0.4, 0.9], [2.0, -1.0])
    assert h(np.array([0.0, 0.1, 0.3, 0.4, 0.95]))[:, 0].tolist() == [0, 2, 2, -1, 0]
    tk, ak = h.indicator_form()
    r = np.linspace(0, 1, 101)
    rebuilt = sum(a * (r <= t) for t, a in zip(tk, ak[:, 0]))
    # indicator form uses closed intervals; compare away from the breakpoints
    away = np.all(np.abs(r[:, None] - h.breakpoints[None]) > 1e-9, axis=1)
    assert np.allclose(rebuilt[away], h(r)[away, 0])


def test_step_function_validation():
    with pytest.raises(ValueError):
        StepFunction([0.2, 0.1], [1.0])
    with pytest.raises(ValueError):
        StepFunction([0.0, 1.5], [1.0])
    with pytest.raises(ValueError):
        StepFunction([0.0, 0.5, 1.0], [1.0])


def test_h_inner_examples():
    for t in (0.2, 0.5, 1.0):
        assert h_inner(indicator(t), indicator(t), P) == pytest.approx(t**0.8, rel=1e-14)
    assert h_inner(indicator(0.3), indicator(0.8), P) == pytest.approx(covariance_Q(0.3, 0.8, P), rel=1e-14)
    f = StepFunction([0.0, 0.3, 0.6, 1.0], [1.0, -2.0, 0.5])
    g = StepFunction([0.1, 0.5, 0.7], [0.3, 1.1])
    assert h_inner(f.scaled(2.0), g, P) == pytest.approx(2 * h_inner(f, g, P), abs=1e-12)


@pytest.mark.parametrize("t", [0.35, 0.6, 0.9])
def test_kstar_of_indicator_is_kernel(t):
    grid = TimeGrid(np.linspace(0.0, 1.0, 41))
    img = kstar_apply(indicator(t), grid, P)
    r = grid.times[1:-1]
    expected = np.where(r < t, _kernel_fast(t, r, P), 0.0)
    assert np.max(np.abs(img.values[1:-1, 0] - expected)) < 1e-4


def test_kstar_of_zero_and_endpoints():
    grid = TimeGrid(np.linspace(0.0, 1.0, 11))
    z = kstar_apply(StepFunction([0, 1], [0.0]), grid, P)
    assert np.all(z.values[1:] == 0) and np.isnan(z.values[0, 0])
    # right-open support: h(1) = 0, matching K(1, r) 1_{r<1} at r = 1
    assert kstar_apply(indicator(1.0), grid, P).values[-1, 0] == 0.0


def test_kstar_isometry():
    h = StepFunction([0.4, 0.7], [-1.0])  # 1_[0,.4] - 1_[0,.7]
    img = kstar_rule(h, 0.0, P)
    assert img.l2_inner(img) == pytest.approx(h_inner(h, h, P), abs=1e-3)


def test_projected_inner_examples():
    f = StepFunction([0.0, 0.3, 0.6, 1.0], [1.0, -2.0, 0.5])
    g = StepFunction([0.1, 0.5, 0.7], [0.3, 1.1])
    assert projected_inner(f, g, 0.0, P) == pytest.approx(h_inner(f, g, P), abs=1e-3)
    for s, u, v in ((0.25, 0.5, 0.75), (0.5, 0.6, 1.0), (0.1, 0.1, 0.9)):
        assert projected_inner(indicator(u), indicator(v), s, P) == pytest.approx(conditional_cov_Qs(s, u, v, P), abs=1e-3)
    for s in (0.2, 0.5):
        assert projected_inner(f, f, s, P) <= h_inner(f, f, P) + 1e-3


def test_projected_inner_closed_matches_quadrature():
    f = StepFunction([0.0, 0.3, 0.6, 1.0], [1.0, -2.0, 0.5])
    for s in (0.0, 0.4):
        a = projected_inner(f, f, s, P, method="kstar")
        b = projected_inner(f, f, s, P, method="closed")
        assert a == pytest.approx(b, abs=1e-6)


def test_qs_double_sum():
    s, t = 0.25, 0.75
    grid = TimeGrid(np.linspace(s, t, 9))
    one = Path(grid, np.ones(grid.n))
    assert qs_double_sum(one, one, s, P) == pytest.approx(conditional_cov_Qs(s, t, t, P), abs=1e-6)
    zero = Path(grid, np.zeros(grid.n))
    assert qs_double_sum(zero, one, s, P) == 0.0
    f = Path(grid, np.cos(5 * grid.times))
    g = Path(grid, np.sign(grid.times - 0.5))
    assert qs_double_sum(f, g, s, P) == pytest.approx(projected_inner(step_from_path(f), step_from_path(g), s, P), abs=2e-3)


def test_interpolation_ratio_constant():
    s, t = 0.25, 0.5
    grid = TimeGrid(np.linspace(s, t, 9))
    f = Path(grid, np.ones(grid.n))
    expected = np.sqrt(projected_inner(step_from_path(f), step_from_path(f), s, P)) / (t - s) ** 0.4
    assert interpolation_ratio(f, s, t, 0.4, P) == pytest.approx(expected)
    assert expected > 0
    with pytest.raises(ValueError):
        interpolation_ratio(Path(grid, np.zeros(grid.n)), s, t, 0.4, P)
    with pytest.raises(ValueError):
        interpolation_ratio(f, s, t, 0.1, P)


def test_interpolation_ratio_positive_for_random_trig():
    rng = np.random.default_rng(0)
    s, t = 0.25, 0.5
    grid = TimeGrid(np.linspace(s, t, 33))
    u = (grid.times - s) / (t - s)
    for _ in range(50):
        a, k, ph = rng.standard_normal(3), rng.integers(1, 6, 3), rng.uniform(0, 2 * np.pi, 3)
        f = Path(grid, sum(a[i] * np.sin(2 * np.pi * k[i] * u + ph[i]) for i in range(3)))
        assert interpolation_ratio(f, s, t, 0.4, P) > 0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.floats(0.0, 0.6))
def test_projection_contracts(coeffs, s):
    f = StepFunction([0.0, 0.3, 0.65, 1.0], coeffs)
    assert projected_inner(f, f, s, P, method="closed") <= h_inner(f, f, P) + 1e-3
    assert projected_inner(f, f, s, P, method="closed") >= -1e-12
