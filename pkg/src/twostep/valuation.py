"""One-period fair values.

* ``coc_premium``: cost-of-capital premium for liabilities independent of the market;
* ``phi_valuation``: quadratic hedge cost plus cost of capital on the residual VaR;
* ``two_step_valuation``: quadratic hedge cost plus ``i`` times the cost of the
  second-step (quantile or expectile) hedge of the residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from twostep.hedging import AssetPanel, HedgeStrategy, ols_hedge, residual_hedge
from twostep.losses import LossKind, LossSpec
from twostep.risk import Sample, var


@dataclass(frozen=True)
class ValuationParams:
    coc_rate: float = 0.06
    alpha: float = 0.995
    tau: float | None = None
    r: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.coc_rate < 1.0:
            raise ValueError(f"ValuationParams.coc_rate must lie in (0, 1), got {self.coc_rate}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"ValuationParams.alpha must lie in (0, 1), got {self.alpha}")
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise ValueError(f"ValuationParams.tau must lie in (0, 1), got {self.tau}")
        if not math.isfinite(self.r):
            raise ValueError("ValuationParams.r must be finite")

    def second_loss(self, kind: LossKind | str = LossKind.KOENKER_BASSETT) -> LossSpec:
        kind = LossKind(kind)
        if kind is LossKind.EXPECTILE:
            if self.tau is None:
                raise ValueError("expectile valuation needs ValuationParams.tau")
            return LossSpec.expectile(self.tau)
        if kind is LossKind.KOENKER_BASSETT:
            return LossSpec.koenker_bassett(self.alpha)
        raise ValueError("the second step needs a Koenker-Bassett or expectile loss")


@dataclass(frozen=True)
class FairValue:
    value: float
    hedge_cost: float
    capital_cost: float
    method: str = ""
    components: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "method": self.method,
            "value": self.value,
            "hedge_cost": self.hedge_cost,
            "capital_cost": self.capital_cost,
        }


def _values(liability) -> np.ndarray:
    return np.asarray(getattr(liability, "values", liability), dtype=np.float64).ravel()


def coc_premium(liability, params: ValuationParams) -> float:
    """``e^-r E[S] + e^-r i (VaR_alpha(S) - E[S])``.

    Only meaningful for liabilities independent of traded assets; that is
    left to the caller.
    """
    s = Sample(_values(liability))
    mean = s.mean()
    disc = math.exp(-params.r)
    return disc * mean + disc * params.coc_rate * (var(s, params.alpha) - mean)


def phi_valuation(liability, panel: AssetPanel, params: ValuationParams) -> FairValue:
    s = _values(liability)
    theta = ols_hedge(s, panel)
    buffer = var(theta.residual(s, panel), params.alpha)
    capital = math.exp(-params.r) * params.coc_rate * buffer
    return FairValue(
        value=theta.cost + capital,
        hedge_cost=theta.cost,
        capital_cost=capital,
        method="quadratic+var_buffer",
        components={"theta": theta, "var_buffer": buffer},
    )


def two_step_valuation(
    liability, panel: AssetPanel, params: ValuationParams, second_loss: LossSpec | None = None
) -> FairValue:
    """``theta . y + i eta . y`` with ``eta`` hedging the quadratic-hedge residual."""
    s = _values(liability)
    if second_loss is None:
        second_loss = params.second_loss()
    if second_loss.kind is LossKind.QUADRATIC:
        raise ValueError("the second step needs a Koenker-Bassett or expectile loss")
    theta: HedgeStrategy = ols_hedge(s, panel)
    eta = residual_hedge(s, panel, theta, second_loss)
    capital = params.coc_rate * eta.cost
    method = "mean-quantile" if second_loss.kind is LossKind.KOENKER_BASSETT else "mean-expectile"
    return FairValue(
        value=theta.cost + capital,
        hedge_cost=theta.cost,
        capital_cost=capital,
        method=method,
        components={"theta": theta, "eta": eta},
    )
