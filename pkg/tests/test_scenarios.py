import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import lognorm

from twostep import rng
from twostep.scenarios import (
    GaussianModel,
    GridSpec,
    MarketParams,
    MortalityParams,
    one_period_lognormal_binomial,
    read_scenarios,
    regulatory_arbitrage_payoffs,
    regulatory_arbitrage_var,
    simulate_joint,
    write_scenarios,
)

SMALL = GridSpec(horizon_T=4, substeps=6, n_paths=3000, seed=7)


def test_rng_chunking_is_consistent():
    full = rng.raw_block(99, 3, 1, 0, 1000)
    parts = np.concatenate([rng.raw_block(99, 3, 1, a, b - a) for a, b in [(0, 1), (1, 333), (333, 1000)]])
    assert np.array_equal(full, parts)
    u = rng.uniforms(99, 3, 1, 0, 10_000)
    assert u.min() > 0 and u.max() < 1


def test_rng_streams_differ_by_driver_and_step():
    a = rng.normals(1, 0, 0, 0, 100)
    assert not np.array_equal(a, rng.normals(1, 0, 1, 0, 100))
    assert not np.array_equal(a, rng.normals(1, 1, 0, 0, 100))
    assert not np.array_equal(a, rng.normals(2, 0, 0, 0, 100))


def test_zero_noise_mortality_is_deterministic():
    mort = MortalityParams(eta_mort=0.0)
    scen = simulate_joint(MarketParams(delta=0.0), mort, SMALL)
    expected = 0.0087 * np.exp(0.075 * scen.times)
    assert np.allclose(scen.forces, expected[None, :], rtol=1e-12, atol=0)


def test_zero_volatility_equity():
    scen = simulate_joint(MarketParams(sigma=0.0, mu=0.02), MortalityParams(), SMALL)
    expected = np.exp(0.02 * scen.times)
    assert np.allclose(scen.asset_prices, expected[None, :], rtol=1e-12, atol=0)


def test_structure_invariants():
    scen = simulate_joint(MarketParams(), MortalityParams(), SMALL)
    assert np.all(np.diff(scen.survivors, axis=1) <= 0)
    assert np.all(scen.survivors[:, 0] == 1000)
    assert np.all(scen.survivors >= 0)
    assert np.all(scen.asset_prices > 0)
    assert np.all(scen.asset_prices[:, 0] == 1.0)
    assert np.allclose(scen.riskfree_prices, np.exp(0.01 * scen.times))
    assert scen.prices().shape == (3000, 5, 2)
    assert scen.features().shape == (3000, 5, 2)


def test_high_volatility_mortality_stays_valid():
    # large noise drives lambda negative on many paths; survival must still be a probability
    mort = MortalityParams(eta_mort=0.05, lambda0=0.01)
    scen = simulate_joint(MarketParams(), mort, SMALL)
    assert (scen.forces < 0).any()
    assert np.all(np.diff(scen.survivors, axis=1) <= 0)
    assert np.all(scen.survivors >= 0)


def test_determinism_across_workers():
    a = simulate_joint(MarketParams(), MortalityParams(), SMALL, workers=1)
    b = simulate_joint(MarketParams(), MortalityParams(), SMALL, workers=4)
    c = simulate_joint(MarketParams(), MortalityParams(), SMALL, workers=7)
    assert a.checksum() == b.checksum() == c.checksum()
    assert np.array_equal(a.survivors, c.survivors)


def test_seed_changes_output():
    a = simulate_joint(MarketParams(), MortalityParams(), SMALL)
    b = simulate_joint(MarketParams(), MortalityParams(), GridSpec(4, 6, 3000, 8))
    assert a.checksum() != b.checksum()


def test_martingale_at_riskfree_drift():
    grid = GridSpec(horizon_T=10, substeps=4, n_paths=40_000, seed=3)
    scen = simulate_joint(MarketParams(mu=0.01, r=0.01), MortalityParams(), grid)
    disc = scen.asset_prices * np.exp(-0.01 * scen.times)[None, :]
    m = disc.mean(axis=0)
    se = disc.std(axis=0, ddof=1) / math.sqrt(grid.n_paths)
    assert np.all(np.abs(m[1:] - 1.0) < 3 * se[1:])


def _brute_force_survivors(n_paths, seed, substeps=12):
    """Straight-line simulator of the benchmark model with numpy's default generator."""
    gen = np.random.default_rng(seed)
    lam0, c, eta, lx = 0.0087, 0.075, 0.000597, 1000
    dt = 1.0 / substeps
    decay = math.exp(c * dt)
    sd = eta * math.sqrt((math.exp(2 * c * dt) - 1) / (2 * c))
    lam = np.full(n_paths, lam0)
    alive = np.full(n_paths, lx)
    for _ in range(10):
        integral = np.zeros(n_paths)
        prev = np.maximum(lam, 0)
        for _ in range(substeps):
            lam = lam * decay + sd * gen.standard_normal(n_paths)
            cur = np.maximum(lam, 0)
            integral += 0.5 * dt * (prev + cur)
            prev = cur
        q = np.clip(1 - np.exp(-integral), 0, 1)
        alive = alive - gen.binomial(alive, q)
    return alive


@pytest.mark.slow
def test_expected_survivors_matches_brute_force():
    grid = GridSpec(horizon_T=10, substeps=12, n_paths=200_000, seed=12345)
    scen = simulate_joint(MarketParams(), MortalityParams(), grid, workers=4)
    engine = scen.survivors[:, -1].astype(float)
    oracle = _brute_force_survivors(1_000_000, seed=2024).astype(float)
    se = math.sqrt(engine.var(ddof=1) / engine.size + oracle.var(ddof=1) / oracle.size)
    assert abs(engine.mean() - oracle.mean()) < 3 * se


def test_scenario_csv_roundtrip(tmp_path):
    scen = simulate_joint(MarketParams(), MortalityParams(), GridSpec(3, 2, 25, 11))
    out = tmp_path / "scenarios.csv"
    meta = write_scenarios(scen, out)
    assert out.read_text().splitlines()[0] == "path,time,y1,lambda,survivors"
    assert (tmp_path / "scenarios.meta.json").exists()
    assert meta["seed"] == 11 and meta["n_paths"] == 25
    back = read_scenarios(out)
    assert back.checksum() == scen.checksum()
    assert back.grid == scen.grid and back.market == scen.market


@pytest.mark.parametrize(
    "kwargs, field",
    [
        (dict(sigma=-1.0), "sigma"),
        (dict(delta=1.5), "delta"),
        (dict(y1_0=0.0), "y1_0"),
        (dict(mu=float("nan")), "mu"),
    ],
)
def test_market_validation_names_field(kwargs, field):
    with pytest.raises(ValueError, match=field):
        MarketParams(**kwargs)


def test_grid_and_mortality_validation():
    with pytest.raises(ValueError, match="n_paths"):
        GridSpec(n_paths=1)
    with pytest.raises(ValueError, match="horizon_T"):
        GridSpec(horizon_T=0)
    with pytest.raises(ValueError, match="lambda0"):
        MortalityParams(lambda0=0.0)
    with pytest.raises(ValueError, match="l_x"):
        MortalityParams(l_x=0)


def test_one_period_degenerate_survival():
    n, y1 = one_period_lognormal_binomial(p_survive=1.0, n_paths=1000, seed=5)
    assert np.all(n == 1000)
    s = n * np.maximum(y1, 0.0)
    assert np.array_equal(s, 1000 * y1)


def test_one_period_repeatable():
    a = one_period_lognormal_binomial(n_paths=2, seed=9)
    b = one_period_lognormal_binomial(n_paths=2, seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_one_period_mean_matches_quadrature():
    n, y1 = one_period_lognormal_binomial(n_paths=200_000, seed=12345)
    s = n * np.maximum(y1, 1.0)
    dist = lognorm(s=0.2, scale=math.exp(0.1))
    e_max = integrate.quad(dist.pdf, 0, 1.0)[0] + integrate.quad(lambda y: y * dist.pdf(y), 1.0, np.inf)[0]
    exact = 900 * e_max
    se = s.std(ddof=1) / math.sqrt(s.size)
    assert abs(s.mean() - exact) < 3 * se


def test_one_period_independence():
    n, y1 = one_period_lognormal_binomial(n_paths=200_000, seed=1)
    assert abs(np.corrcoef(n, y1)[0, 1]) < 4 / math.sqrt(n.size)


def test_regulatory_arbitrage_sample():
    assert regulatory_arbitrage_var() == pytest.approx(1.623, abs=5e-4)
    s, y1 = regulatory_arbitrage_payoffs(200_000, seed=4)
    assert set(np.unique(y1)) == {-3.0, 1.5}
    assert np.all((y1 == -3.0) == (s > regulatory_arbitrage_var()))
    frac = np.mean(y1 == -3.0)
    assert abs(frac - 0.1) < 3 * math.sqrt(0.09 / s.size)
    assert abs(y1.mean() - 1.05) < 3 * y1.std() / math.sqrt(s.size)


def test_gaussian_model_moments():
    model = GaussianModel()
    prices, feats, liab = model.simulate(100_000, seed=2)
    assert prices.shape == (100_000, 4, 2)
    assert np.all(prices[:, :, 0] == 1.0)
    ret = prices[:, 1, 1] / prices[:, 0, 1]
    assert ret.mean() == pytest.approx(1.02, abs=0.003)
    assert np.corrcoef(ret, feats[:, 1, 1])[0, 1] == pytest.approx(0.5, abs=0.01)
    assert liab.std() == pytest.approx(math.sqrt(300), rel=0.02)
    assert model.closed_form_value(0.95, 0.06) == pytest.approx(
        100 - 0.1 * 0.5 * 30 + 0.06 * 1.6448536 * math.sqrt(0.75) * 30, rel=1e-7
    )
