import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from twostep.risk import Sample, dtvar, expectile, kb_error, tvar, var

ONE_TO_100 = np.arange(1, 101, dtype=float)


def test_var_order_statistic():
    assert var(ONE_TO_100, 0.95) == 95
    assert var(np.full(10, 7.0), 0.3) == 7


def test_var_lognormal_reference():
    rng = np.random.default_rng(5)
    s = np.exp(0.1 + 0.3 * rng.standard_normal(200_000))
    assert var(s, 0.9) == pytest.approx(1.623, abs=0.01)


def test_tvar_discrete_tail():
    assert tvar(ONE_TO_100, 0.95) == pytest.approx(98.0, abs=1e-12)
    assert tvar(np.full(5, -2.5), 0.7) == pytest.approx(-2.5)


def test_tvar_fractional_atom():
    # alpha*M = 97.5: half of the 98th order statistic enters the tail
    x = np.arange(1, 101, dtype=float)
    expected = (0.5 * 98 + 99 + 100) / 2.5
    assert tvar(x, 0.975) == pytest.approx(expected, rel=1e-12)


def test_tvar_matches_quantile_integral():
    rng = np.random.default_rng(11)
    x = rng.gamma(2.0, size=257)
    alpha = 0.83
    # midpoint rule on the empirical quantile function, independent of the tail-weight formula
    u = alpha + (np.arange(200_000) + 0.5) * (1 - alpha) / 200_000
    xs = np.sort(x)
    q = xs[np.ceil(u * x.size).astype(int) - 1]
    assert tvar(x, alpha) == pytest.approx(q.mean(), rel=1e-4)


def test_tvar_normal_closed_form():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(400_000)
    alpha = 0.95
    exact = norm.pdf(norm.ppf(alpha)) / (1 - alpha)
    q = var(x, alpha)
    se = np.std(np.maximum(x - q, 0.0)) / (1 - alpha) / np.sqrt(x.size)
    assert abs(tvar(x, alpha) - exact) < 3 * se


def test_dtvar_difference():
    assert dtvar(ONE_TO_100, 0.95) == pytest.approx(47.5)


def test_expectile_examples():
    x = np.random.default_rng(0).normal(size=1000)
    assert expectile(x, 0.5) == pytest.approx(x.mean(), abs=1e-10)
    assert expectile(np.full(4, 3.3), 0.9) == pytest.approx(3.3)
    assert expectile(np.array([0.0, 1.0]), 0.8) == pytest.approx(0.8, abs=1e-12)


@pytest.mark.parametrize("tau", [0.1, 0.5, 0.8, 0.998])
def test_expectile_grid_search(tau):
    x = np.random.default_rng(2).lognormal(size=300)
    grid = np.linspace(x.min(), x.max(), 20001)
    d = x[None, :] - grid[:, None]
    loss = np.mean(np.where(d > 0, tau, 1 - tau) * d * d, axis=1)
    k = int(np.argmin(loss))
    step = grid[1] - grid[0]
    assert abs(expectile(x, tau) - grid[k]) <= step


def test_kb_error_examples():
    assert kb_error(np.array([-1.0, -2.0]), 0.9) == pytest.approx(1.5)
    x = np.arange(-95, 5, dtype=float)  # 100 points, 95th order statistic is -1
    shifted = x - var(x, 0.95)
    assert var(shifted, 0.95) == 0
    assert kb_error(shifted, 0.95) == pytest.approx(dtvar(shifted, 0.95), abs=1e-12)


def test_weighted_uniform_matches_plain():
    x = np.random.default_rng(4).normal(size=50)
    w = np.full(50, 3.0)
    ws = Sample(x, w)
    for a in (0.1, 0.5, 0.93):
        assert var(ws, a) == var(x, a)
        assert tvar(ws, a) == pytest.approx(tvar(x, a), rel=1e-12)
        assert expectile(ws, a) == pytest.approx(expectile(x, a), rel=1e-12)
        assert kb_error(ws, a) == pytest.approx(kb_error(x, a), rel=1e-12)


def test_weighted_atoms():
    s = Sample(np.array([0.0, 10.0]), np.array([0.9, 0.1]))
    assert var(s, 0.9) == 0.0
    assert var(s, 0.91) == 10.0
    assert tvar(s, 0.8) == pytest.approx(5.0)


def test_errors():
    with pytest.raises(ValueError):
        var(np.array([]), 0.5)
    with pytest.raises(ValueError):
        tvar(np.array([1.0, np.nan]), 0.5)
    with pytest.raises(ValueError):
        var(ONE_TO_100, 1.0)


samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=60).map(np.array)
levels = st.floats(0.01, 0.99)


@settings(max_examples=150, deadline=None)
@given(samples, levels)
def test_var_below_tvar(x, a):
    assert var(x, a) <= tvar(x, a) + 1e-9 * (1 + np.abs(x).max())


@settings(max_examples=150, deadline=None)
@given(samples, levels, st.floats(-100, 100))
def test_translation(x, a, c):
    tol = 1e-9 * (1 + np.abs(x).max() + abs(c))
    assert var(x + c, a) == pytest.approx(var(x, a) + c, abs=tol)
    assert tvar(x + c, a) == pytest.approx(tvar(x, a) + c, abs=tol)
    assert dtvar(x + c, a) == pytest.approx(dtvar(x, a), abs=tol * 10)
    assert expectile(x + c, a) == pytest.approx(expectile(x, a) + c, abs=tol * 10)


@settings(max_examples=150, deadline=None)
@given(samples, levels, st.floats(0.01, 100))
def test_positive_homogeneity(x, a, lam):
    tol = 1e-9 * (1 + np.abs(x).max()) * (1 + lam)
    assert var(lam * x, a) == pytest.approx(lam * var(x, a), abs=tol)
    assert tvar(lam * x, a) == pytest.approx(lam * tvar(x, a), abs=tol)
    assert dtvar(lam * x, a) == pytest.approx(lam * dtvar(x, a), abs=10 * tol)
    assert expectile(lam * x, a) == pytest.approx(lam * expectile(x, a), abs=10 * tol)


@settings(max_examples=150, deadline=None)
@given(samples)
def test_expectile_half_is_mean(x):
    assert expectile(x, 0.5) == pytest.approx(x.mean(), abs=1e-10 * (1 + np.abs(x).max()))


@settings(max_examples=150, deadline=None)
@given(samples, levels)
def test_kb_error_dominates_dtvar_at_var_shift(x, a):
    shifted = x - var(x, a)
    scale = 1 + np.abs(x).max()
    assert kb_error(shifted, a) >= dtvar(shifted, a) - 1e-9 * scale
