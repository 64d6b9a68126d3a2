"""End-to-end runs of the worked examples and the case study.

Each ``run_*`` function builds its sample, fits the hedges and returns a
plain result object; :mod:`twostep.report` turns those into CSV files.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from twostep.dynamic import StatePaths, ValuationPath, backward_valuate
from twostep.hedging import AssetPanel, HedgeStrategy, expectile_hedge, ols_hedge, quantile_hedge, residual_hedge
from twostep.losses import LossKind, LossSpec
from twostep.regressors import RegressorSpec
from twostep.risk import dtvar, var
from twostep.scenarios import (
    GaussianModel,
    GridSpec,
    MarketParams,
    MortalityParams,
    ScenarioSet,
    one_period_lognormal_binomial,
    regulatory_arbitrage_payoffs,
    regulatory_arbitrage_var,
    simulate_joint,
)
from twostep.valuation import FairValue, ValuationParams, phi_valuation, two_step_valuation


@dataclass
class Example1Result:
    liability: np.ndarray
    panel: AssetPanel
    strategy_a: HedgeStrategy
    strategy_b: HedgeStrategy
    var_s: float
    alpha: float
    seconds: float

    def residual(self, which: str) -> np.ndarray:
        strat = self.strategy_a if which == "A" else self.strategy_b
        return strat.residual(self.liability, self.panel)


def run_example1(n_paths: int = 200_000, seed: int = 12345, alpha: float = 0.9) -> Example1Result:
    """Regulatory-arbitrage comparison: all-in-derivative strategy A against the quantile hedge B."""
    start = time.perf_counter()
    s, y1 = regulatory_arbitrage_payoffs(n_paths, seed)
    panel = AssetPanel.one_risky(1.0, y1)
    v = regulatory_arbitrage_var()
    units_a = np.array([0.0, v / 1.5])
    a = HedgeStrategy(units_a, float(units_a @ panel.prices_now), LossSpec.koenker_bassett(alpha), info={"name": "A"})
    b = quantile_hedge(s, panel, alpha)
    return Example1Result(s, panel, a, b, v, alpha, time.perf_counter() - start)


@dataclass
class Example2Result:
    liability: np.ndarray
    panel: AssetPanel
    params: ValuationParams
    strategies: dict  # name -> HedgeStrategy, in TABLE1_ORDER
    fair_values: list  # FairValue for buffer, quantile, expectile
    residuals: dict  # name -> residual sample for the three second-step strategies
    seconds: float

    def dtvar_triple(self) -> dict:
        return {k: dtvar(r, self.params.alpha) for k, r in self.residuals.items()}

    def sd_pair(self) -> dict:
        return {k: float(np.std(r)) for k, r in self.residuals.items()}


TABLE1_ORDER = ("theta", "xi", "xi_tau", "var_buffer", "eta", "eta_tau")


def run_example2(
    n_paths: int = 200_000,
    seed: int = 12345,
    params: ValuationParams | None = None,
    meanlog: float = 0.1,
    sdlog: float = 0.2,
    n_pol: int = 1000,
    p_survive: float = 0.9,
    guarantee: float = 1.0,
) -> Example2Result:
    """Unit-linked contract with guarantee: the six strategies and the three fair values."""
    start = time.perf_counter()
    if params is None:
        params = ValuationParams(coc_rate=0.1, alpha=0.99, tau=0.998)
    if params.tau is None:
        raise ValueError("example 2 needs an expectile level tau")
    n, y1 = one_period_lognormal_binomial(meanlog, sdlog, n_pol, p_survive, n_paths, seed)
    s = n * np.maximum(y1, guarantee)
    panel = AssetPanel.one_risky(1.0, y1, r=params.r)
    theta = ols_hedge(s, panel)
    xi = quantile_hedge(s, panel, params.alpha)
    xi_tau = expectile_hedge(s, panel, params.tau)
    resid = theta.residual(s, panel)
    buffer = var(resid, params.alpha)
    buf_units = np.array([buffer * math.exp(-params.r), 0.0])
    buf = HedgeStrategy(buf_units, float(buf_units @ panel.prices_now), LossSpec.koenker_bassett(params.alpha))
    eta = residual_hedge(s, panel, theta, LossSpec.koenker_bassett(params.alpha))
    eta_tau = residual_hedge(s, panel, theta, LossSpec.expectile(params.tau))
    strategies = dict(theta=theta, xi=xi, xi_tau=xi_tau, var_buffer=buf, eta=eta, eta_tau=eta_tau)
    fair = [
        phi_valuation(s, panel, params),
        two_step_valuation(s, panel, params, params.second_loss(LossKind.KOENKER_BASSETT)),
        two_step_valuation(s, panel, params, params.second_loss(LossKind.EXPECTILE)),
    ]
    residuals = {
        "var_buffer": resid - buffer,
        "eta": eta.residual(resid, panel),
        "eta_tau": eta_tau.residual(resid, panel),
    }
    return Example2Result(s, panel, params, strategies, fair, residuals, time.perf_counter() - start)


@dataclass
class DynamicResult:
    path: ValuationPath
    liability: np.ndarray
    scenarios: ScenarioSet | None = None
    closed_form: float | None = None
    standard_error: float | None = None
    seconds: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.path.value

    @property
    def expected_liability(self) -> float:
        return float(np.mean(self.liability))


def section5_liability(scen: ScenarioSet, guarantee: float = 1.0) -> np.ndarray:
    """``S = N(T) max(Y1(T), K)``."""
    return scen.survivors[:, -1] * np.maximum(scen.asset_prices[:, -1], guarantee)


def run_section5(
    market: MarketParams | None = None,
    mortality: MortalityParams | None = None,
    grid: GridSpec | None = None,
    params: ValuationParams | None = None,
    regressor: RegressorSpec | None = None,
    workers: int = 1,
) -> DynamicResult:
    start = time.perf_counter()
    market = market or MarketParams()
    mortality = mortality or MortalityParams()
    grid = grid or GridSpec(seed=12345)
    params = params or ValuationParams(coc_rate=0.06, alpha=0.95)
    regressor = regressor or RegressorSpec.mlp()
    scen = simulate_joint(market, mortality, grid, workers=workers)
    liab = section5_liability(scen)
    path = backward_valuate(StatePaths.from_scenarios(scen), liab, params, regressor)
    return DynamicResult(path, liab, scenarios=scen, seconds=time.perf_counter() - start)


def example3_standard_error(path: ValuationPath) -> float:
    """Monte Carlo standard error of the time-0 value.

    Uses the pathwise spread of the discounted liability after removing the
    fitted hedge gains of every period, which is the noise left in ``rho_0``.
    """
    T = path.horizon
    x = path.fair_values[:, T].copy()
    for t in range(T):
        nxt = path.paths.prices[:, t + 1]
        now = path.paths.prices[:, t]
        x -= np.einsum("ij,ij->i", path.theta_units[:, t], nxt - now)
    return float(np.std(x, ddof=1) / math.sqrt(x.size))


def run_example3(
    model: GaussianModel | None = None,
    n_paths: int = 100_000,
    seed: int = 12345,
    params: ValuationParams | None = None,
    regressor: RegressorSpec | None = None,
) -> DynamicResult:
    """Gaussian toy model with a closed-form time-0 value."""
    start = time.perf_counter()
    model = model or GaussianModel()
    params = params or ValuationParams(coc_rate=0.06, alpha=0.95)
    regressor = regressor or RegressorSpec.linear(((0, 0), (-1, 0), (0, 1)))
    prices, feats, liab = model.simulate(n_paths, seed)
    path = backward_valuate(StatePaths(prices, feats), liab, params, regressor)
    return DynamicResult(
        path,
        liab,
        closed_form=model.closed_form_value(params.alpha, params.coc_rate),
        standard_error=example3_standard_error(path),
        seconds=time.perf_counter() - start,
    )


__all__ = [
    "Example1Result",
    "Example2Result",
    "DynamicResult",
    "FairValue",
    "TABLE1_ORDER",
    "run_example1",
    "run_example2",
    "run_example3",
    "run_section5",
    "section5_liability",
    "example3_standard_error",
]
