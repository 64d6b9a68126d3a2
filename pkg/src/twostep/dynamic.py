"""Multi-period fair valuation by backward recursion over simulated paths.

For ``t = T-1, ..., 0`` two state-dependent strategies are fit on the
period ``(t, t+1]``: ``g`` (quadratic loss) and ``h`` (Koenker-Bassett loss,
the full quantile hedge).  The residual hedge is ``h - g`` and

    rho_t = g(Z_t) . Y_t + i (h(Z_t) - g(Z_t)) . Y_t

pathwise, starting from ``rho_T = S``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from twostep import regressors
from twostep.errors import NonConvergenceError
from twostep.losses import LossSpec
from twostep.regressors import RegressorSpec, StatePanel
from twostep.risk import dtvar, kb_error, var
from twostep.scenarios import ScenarioSet
from twostep.valuation import ValuationParams

logger = logging.getLogger(__name__)

N_BUCKETS = 10


@dataclass(frozen=True)
class StatePaths:
    """Traded asset prices ``(M, T+1, n+1)`` and Markov state ``(M, T+1, m)`` per path."""

    prices: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.prices, dtype=np.float64)
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim == 2:
            f = f[:, :, None]
        if p.ndim != 3 or f.ndim != 3 or p.shape[:2] != f.shape[:2]:
            raise ValueError("prices and features must be (M, T+1, .) arrays with matching M and T")
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "features", f)

    @classmethod
    def from_scenarios(cls, scen: ScenarioSet) -> "StatePaths":
        return cls(scen.prices(), scen.features())

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def horizon(self) -> int:
        return self.prices.shape[1] - 1


@dataclass
class PeriodDiagnostics:
    period: int  # the period (t, t+1] is reported under t+1
    var: float
    kb_error: float
    dtvar: float
    coverage: float
    mean_residual: float
    bucket_var: list = field(default_factory=list)


@dataclass
class ValuationPath:
    fair_values: np.ndarray  # (M, T+1); column T is the liability
    theta_units: np.ndarray  # (M, T, n+1); [:, t] is the strategy held over (t, t+1]
    xi_units: np.ndarray
    diagnostics: list
    paths: StatePaths
    params: ValuationParams
    g_models: list = field(default_factory=list)
    h_models: list = field(default_factory=list)
    time0_spread: float = 0.0
    rebal_costs: np.ndarray | None = None

    @property
    def eta_units(self) -> np.ndarray:
        return self.xi_units - self.theta_units

    @property
    def value(self) -> float:
        return float(self.fair_values[0, 0])

    @property
    def horizon(self) -> int:
        return self.fair_values.shape[1] - 1

    def residuals(self, t: int) -> np.ndarray:
        """``rho_{t+1} - xi(t+1) . Y(t+1)`` for the period (t, t+1]."""
        nxt = self.paths.prices[:, t + 1, :]
        return self.fair_values[:, t + 1] - np.einsum("ij,ij->i", self.xi_units[:, t], nxt)

    def final_loss(self) -> np.ndarray:
        return self.residuals(self.horizon - 1)


def _dot(a, b):
    return np.einsum("ij,ij->i", a, b)


def backward_step(paths: StatePaths, t: int, target, params: ValuationParams, spec: RegressorSpec):
    """One period of the recursion: fit on ``(t, t+1]`` against ``target = rho_{t+1}``.

    Returns ``(rho_t, theta, xi, g, h)``.
    """
    panel = StatePanel(
        features=paths.features[:, t, :],
        next_payoffs=paths.prices[:, t + 1, :],
        now_prices=paths.prices[:, t, :],
        targets=target,
    )
    try:
        g = regressors.fit(spec, panel, LossSpec.quadratic())
        h = regressors.fit(spec, panel, LossSpec.koenker_bassett(params.alpha), init=g)
    except NonConvergenceError as exc:
        raise NonConvergenceError(f"period {t}->{t + 1}: {exc}", period=t) from exc
    theta = g.predict(panel.features)
    xi = h.predict(panel.features)
    now = panel.now_prices
    rho = _dot(theta, now) + params.coc_rate * _dot(xi - theta, now)
    return rho, theta, xi, g, h


def _diagnostics(period, resid, alpha, first_feature):
    bucket_var = []
    if np.ptp(first_feature) > 0:
        order = np.argsort(first_feature, kind="stable")
        for chunk in np.array_split(order, N_BUCKETS):
            if chunk.size:
                bucket_var.append(var(resid[chunk], alpha))
    return PeriodDiagnostics(
        period=period,
        var=var(resid, alpha),
        kb_error=kb_error(resid, alpha),
        dtvar=dtvar(resid, alpha),
        coverage=float(np.mean(resid <= 0.0)),
        mean_residual=float(np.mean(resid)),
        bucket_var=bucket_var,
    )


def backward_valuate(paths, liability, params: ValuationParams, regressor: RegressorSpec) -> ValuationPath:
    """Roll fair values back from the terminal liability to time 0."""
    if isinstance(paths, ScenarioSet):
        paths = StatePaths.from_scenarios(paths)
    liability = np.asarray(liability, dtype=np.float64).ravel()
    M, T = paths.n_paths, paths.horizon
    if liability.size != M:
        raise ValueError(f"liability has {liability.size} values for {M} paths")
    n1 = paths.prices.shape[2]
    fair = np.empty((M, T + 1))
    fair[:, T] = liability
    theta_units = np.empty((M, T, n1))
    xi_units = np.empty((M, T, n1))
    g_models = [None] * T
    h_models = [None] * T
    spread = 0.0
    for t in range(T - 1, -1, -1):
        rho, theta, xi, g, h = backward_step(paths, t, fair[:, t + 1], params, regressor)
        if t == 0:
            # every path shares Z(0): collapse to one strategy
            scale = max(1.0, float(np.max(np.abs(theta))), float(np.max(np.abs(xi))))
            spread = float(max(np.ptp(theta, axis=0).max(), np.ptp(xi, axis=0).max()))
            if np.ptp(paths.features[:, 0, :], axis=0).max() > 0:
                logger.warning("time-0 state differs across paths; averaging strategies anyway")
            if spread > 1e-6 * scale:
                logger.warning("time-0 strategies spread by %.3g across paths", spread)
            theta = np.broadcast_to(theta.mean(axis=0), theta.shape).copy()
            xi = np.broadcast_to(xi.mean(axis=0), xi.shape).copy()
            now = paths.prices[:, 0, :]
            rho = _dot(theta, now) + params.coc_rate * _dot(xi - theta, now)
        fair[:, t] = rho
        theta_units[:, t] = theta
        xi_units[:, t] = xi
        g_models[t], h_models[t] = g, h
        logger.info("period %d->%d fitted: mean rho_t = %.4f", t, t + 1, float(np.mean(rho)))
    diagnostics = []
    for t in range(T):
        nxt = paths.prices[:, t + 1, :]
        resid = fair[:, t + 1] - _dot(xi_units[:, t], nxt)
        diagnostics.append(_diagnostics(t + 1, resid, params.alpha, paths.features[:, t, 0]))
    path = ValuationPath(
        fair_values=fair,
        theta_units=theta_units,
        xi_units=xi_units,
        diagnostics=diagnostics,
        paths=paths,
        params=params,
        g_models=g_models,
        h_models=h_models,
        time0_spread=spread,
    )
    path.rebal_costs = rebalancing_costs(path, r=None)["per_period"]
    return path


def _rate_from_prices(paths: StatePaths) -> float:
    bank = paths.prices[0, :, 0]
    if bank.size > 1 and bank[0] > 0 and bank[1] > 0:
        return math.log(bank[1] / bank[0])
    return 0.0


def rebalancing_costs(path: ValuationPath, r: float | None = None) -> dict:
    """``RB(t) = xi(t+1) . Y(t) - xi(t) . Y(t)`` for ``t = 1..T-1`` and the discounted total.

    Also reports, per rebalancing date, the share of paths with
    ``(1 - i) eta(t+1) . Y(t) >= RB(t)`` and a per-path breach flag when the
    capital needed cannot be covered that way.
    """
    if r is None:
        r = _rate_from_prices(path.paths)
    T = path.horizon
    M = path.fair_values.shape[0]
    i = path.params.coc_rate
    per = np.zeros((M, max(T - 1, 0)))
    covered = []
    breach = np.zeros(M, dtype=bool)
    eta = path.eta_units
    for t in range(1, T):
        now = path.paths.prices[:, t, :]
        rb = _dot(path.xi_units[:, t], now) - _dot(path.xi_units[:, t - 1], now)
        per[:, t - 1] = rb
        capacity = (1.0 - i) * _dot(eta[:, t], now)
        ok = capacity >= rb
        covered.append(float(np.mean(ok)))
        breach |= ~ok
    disc = np.exp(-r * np.arange(1, T))
    total = per @ disc if T > 1 else np.zeros(M)
    return {"per_period": per, "total": total, "coverage": covered, "breach": breach}


def constraint_report(path: ValuationPath, alpha: float | None = None) -> list:
    """Pooled residual VaR, Koenker-Bassett error and TVaR deviation per period."""
    if alpha is None or alpha == path.params.alpha:
        return list(path.diagnostics)
    out = []
    for t in range(path.horizon):
        out.append(_diagnostics(t + 1, path.residuals(t), alpha, path.paths.features[:, t, 0]))
    return out


def strategy_grid(path: ValuationPath, t: int, feature_index: int = 0, n_points: int = 41, which: str = "xi"):
    """Fitted strategy for ``(t, t+1]`` over a grid of one state variable, others at their mean.

    The grid spans the 1%-99% range of that variable at ``t``.
    Returns ``(grid, units)`` with ``units`` of shape ``(n_points, n+1)``.
    """
    model = path.h_models[t] if which == "xi" else path.g_models[t]
    feats = path.paths.features[:, t, :]
    lo, hi = np.quantile(feats[:, feature_index], [0.01, 0.99])
    grid = np.linspace(lo, hi, n_points)
    states = np.tile(feats.mean(axis=0), (n_points, 1))
    states[:, feature_index] = grid
    return grid, model.predict(states)
