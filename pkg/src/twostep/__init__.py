"""Two-step (quadratic + quantile/expectile) hedging valuation of hybrid insurance liabilities."""

from twostep.losses import LossKind, LossSpec
from twostep.risk import Sample, dtvar, expectile, kb_error, tvar, var
from twostep.hedging import (
    AssetPanel,
    HedgeStrategy,
    expectile_hedge,
    ols_hedge,
    quantile_hedge,
    residual_hedge,
)
from twostep.valuation import (
    FairValue,
    ValuationParams,
    coc_premium,
    phi_valuation,
    two_step_valuation,
)

__version__ = "0.1.0"

__all__ = [
    "AssetPanel",
    "FairValue",
    "HedgeStrategy",
    "LossKind",
    "LossSpec",
    "Sample",
    "ValuationParams",
    "coc_premium",
    "dtvar",
    "expectile",
    "expectile_hedge",
    "kb_error",
    "ols_hedge",
    "phi_valuation",
    "quantile_hedge",
    "residual_hedge",
    "tvar",
    "two_step_valuation",
    "var",
]
