"""Monte Carlo risk-driver generation.

Joint equity / stochastic-mortality paths for the multi-period case study,
the two one-period examples, and the Gaussian multi-period toy model whose
fair value is known in closed form.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import binom, norm

from twostep import rng

# driver ids of the counter-based streams
MORTALITY = 0
EQUITY = 1
DEATHS = 2


def _check_finite(obj) -> None:
    for name, value in asdict(obj).items():
        if not math.isfinite(float(value)):
            raise ValueError(f"{type(obj).__name__}.{name} must be finite, got {value}")


@dataclass(frozen=True)
class MarketParams:
    r: float = 0.01
    mu: float = 0.02
    sigma: float = 0.1
    y1_0: float = 1.0
    delta: float = -0.5

    def __post_init__(self):
        _check_finite(self)
        if self.sigma < 0:
            raise ValueError(f"MarketParams.sigma must be >= 0, got {self.sigma}")
        if not -1.0 <= self.delta <= 1.0:
            raise ValueError(f"MarketParams.delta must lie in [-1, 1], got {self.delta}")
        if self.y1_0 <= 0:
            raise ValueError(f"MarketParams.y1_0 must be > 0, got {self.y1_0}")


@dataclass(frozen=True)
class MortalityParams:
    lambda0: float = 0.0087
    c: float = 0.075
    eta_mort: float = 0.000597
    age_x: float = 55.0
    l_x: int = 1000

    def __post_init__(self):
        _check_finite(self)
        if self.lambda0 <= 0:
            raise ValueError(f"MortalityParams.lambda0 must be > 0, got {self.lambda0}")
        if self.eta_mort < 0:
            raise ValueError(f"MortalityParams.eta_mort must be >= 0, got {self.eta_mort}")
        if int(self.l_x) != self.l_x or self.l_x < 1:
            raise ValueError(f"MortalityParams.l_x must be a positive integer, got {self.l_x}")


@dataclass(frozen=True)
class GridSpec:
    horizon_T: int = 10
    substeps: int = 12
    n_paths: int = 200_000
    seed: int = 0

    def __post_init__(self):
        for name in ("horizon_T", "substeps", "n_paths", "seed"):
            value = getattr(self, name)
            if int(value) != value:
                raise ValueError(f"GridSpec.{name} must be an integer, got {value}")
        if self.horizon_T < 1:
            raise ValueError(f"GridSpec.horizon_T must be >= 1, got {self.horizon_T}")
        if self.substeps < 1:
            raise ValueError(f"GridSpec.substeps must be >= 1, got {self.substeps}")
        if self.n_paths < 2:
            raise ValueError(f"GridSpec.n_paths must be >= 2, got {self.n_paths}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"GridSpec.seed must be a 64-bit non-negative integer, got {self.seed}")


@dataclass(frozen=True)
class ScenarioSet:
    """Simulated paths on the annual grid ``0, 1, ..., T``.

    ``asset_prices`` holds the risky asset, ``riskfree_prices`` the bank
    account ``exp(r t)``; ``forces`` is the raw (unclamped) force of mortality.
    """

    times: np.ndarray
    asset_prices: np.ndarray
    riskfree_prices: np.ndarray
    survivors: np.ndarray
    forces: np.ndarray
    market: MarketParams | None = None
    mortality: MortalityParams | None = None
    grid: GridSpec | None = None

    @property
    def n_paths(self) -> int:
        return self.asset_prices.shape[0]

    @property
    def horizon(self) -> int:
        return len(self.times) - 1

    def prices(self) -> np.ndarray:
        """Per-path traded asset prices, shape ``(M, T+1, 2)``: bank account and risky asset."""
        bank = np.broadcast_to(self.riskfree_prices, self.asset_prices.shape)
        return np.stack([bank, self.asset_prices], axis=-1)

    def features(self) -> np.ndarray:
        """Markov state ``(Y1(t), N(t))`` per path and date, shape ``(M, T+1, 2)``."""
        return np.stack([self.asset_prices, self.survivors.astype(np.float64)], axis=-1)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.times, self.asset_prices, self.riskfree_prices, self.survivors, self.forces):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _simulate_chunk(market, mort, grid, start, count):
    T, k = grid.horizon_T, grid.substeps
    dt = 1.0 / k
    seed = grid.seed

    lam_decay = math.exp(mort.c * dt)
    if mort.c != 0.0:
        lam_sd = mort.eta_mort * math.sqrt((math.exp(2.0 * mort.c * dt) - 1.0) / (2.0 * mort.c))
    else:
        lam_sd = mort.eta_mort * math.sqrt(dt)
    eq_drift = (market.mu - 0.5 * market.sigma**2) * dt
    eq_vol = market.sigma * math.sqrt(dt)
    rho_c = math.sqrt(max(0.0, 1.0 - market.delta**2))

    asset = np.empty((count, T + 1))
    forces = np.empty((count, T + 1))
    survivors = np.empty((count, T + 1), dtype=np.int64)
    asset[:, 0] = market.y1_0
    forces[:, 0] = mort.lambda0
    survivors[:, 0] = int(mort.l_x)

    lam = np.full(count, float(mort.lambda0))
    log_y = np.full(count, math.log(market.y1_0))
    for year in range(T):
        integral = np.zeros(count)
        lam_pos_prev = np.maximum(lam, 0.0)
        for j in range(k):
            step = year * k + j
            z_mort = rng.normals(seed, step, MORTALITY, start, count)
            x_eq = rng.normals(seed, step, EQUITY, start, count)
            lam = lam * lam_decay + lam_sd * z_mort
            z_eq = market.delta * z_mort + rho_c * x_eq
            log_y = log_y + eq_drift + eq_vol * z_eq
            lam_pos = np.maximum(lam, 0.0)
            integral += 0.5 * dt * (lam_pos_prev + lam_pos)
            lam_pos_prev = lam_pos
        # q = 1 - S(t+1)/S(t) = 1 - exp(-int_t^{t+1} lambda)
        q = np.clip(-np.expm1(-integral), 0.0, 1.0)
        u = rng.uniforms(seed, year, DEATHS, start, count)
        alive = survivors[:, year]
        deaths = binom.ppf(u, alive, q)
        deaths = np.where(alive > 0, np.nan_to_num(deaths, nan=0.0), 0.0).astype(np.int64)
        survivors[:, year + 1] = alive - np.minimum(deaths, alive)
        asset[:, year + 1] = np.exp(log_y)
        forces[:, year + 1] = lam
    return asset, forces, survivors


def simulate_joint(
    market: MarketParams, mort: MortalityParams, grid: GridSpec, workers: int = 1
) -> ScenarioSet:
    """Simulate equity prices, force of mortality and survivor counts.

    Equity is log-normal and exact on the sub-step grid; the force of
    mortality follows its exact Gaussian transition; yearly deaths are
    binomial given survivors and the pathwise one-year death probability.
    The output does not depend on ``workers``.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    M = grid.n_paths
    bounds = np.linspace(0, M, min(workers, M) + 1).astype(int)
    chunks = [(int(a), int(b - a)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if len(chunks) == 1:
        parts = [_simulate_chunk(market, mort, grid, 0, M)]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda c: _simulate_chunk(market, mort, grid, *c), chunks))
    asset = np.concatenate([p[0] for p in parts])
    forces = np.concatenate([p[1] for p in parts])
    survivors = np.concatenate([p[2] for p in parts])
    times = np.arange(grid.horizon_T + 1, dtype=np.float64)
    return ScenarioSet(
        times=times,
        asset_prices=asset,
        riskfree_prices=np.exp(market.r * times),
        survivors=survivors,
        forces=forces,
        market=market,
        mortality=mort,
        grid=grid,
    )


def write_scenarios(scen: ScenarioSet, path: str | Path) -> dict:
    """Write ``path`` as CSV plus a ``.meta.json`` sidecar; returns the sidecar content."""
    path = Path(path)
    M, T1 = scen.asset_prices.shape
    cols = np.column_stack(
        [
            np.repeat(np.arange(M), T1),
            np.tile(scen.times, M),
            scen.asset_prices.ravel(),
            scen.forces.ravel(),
            scen.survivors.ravel(),
        ]
    )
    with open(path, "w", newline="") as fh:
        fh.write("path,time,y1,lambda,survivors\n")
        np.savetxt(fh, cols, fmt=["%d", "%g", "%.17g", "%.17g", "%d"], delimiter=",")
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    meta = {
        "format": "twostep-scenarios",
        "version": 1,
        "n_paths": M,
        "horizon_T": T1 - 1,
        "seed": scen.grid.seed if scen.grid else None,
        "market": asdict(scen.market) if scen.market else None,
        "mortality": asdict(scen.mortality) if scen.mortality else None,
        "grid": asdict(scen.grid) if scen.grid else None,
        "sha256": digest,
    }
    sidecar = path.with_name(path.stem + ".meta.json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return meta


def read_scenarios(path: str | Path) -> ScenarioSet:
    path = Path(path)
    sidecar = path.with_name(path.stem + ".meta.json")
    meta = json.loads(sidecar.read_text())
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    M, T1 = int(meta["n_paths"]), int(meta["horizon_T"]) + 1
    if data.shape[0] != M * T1:
        raise ValueError(f"{path}: expected {M * T1} rows, found {data.shape[0]}")
    market = MarketParams(**meta["market"]) if meta.get("market") else None
    mortality = MortalityParams(**meta["mortality"]) if meta.get("mortality") else None
    grid = GridSpec(**meta["grid"]) if meta.get("grid") else None
    times = data[:T1, 1].copy()
    r = market.r if market else 0.0
    return ScenarioSet(
        times=times,
        asset_prices=data[:, 2].reshape(M, T1),
        riskfree_prices=np.exp(r * times),
        survivors=data[:, 4].reshape(M, T1).astype(np.int64),
        forces=data[:, 3].reshape(M, T1),
        market=market,
        mortality=mortality,
        grid=grid,
    )


def one_period_lognormal_binomial(
    meanlog: float = 0.1,
    sdlog: float = 0.2,
    n_pol: int = 1000,
    p_survive: float = 0.9,
    n_paths: int = 200_000,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Independent survivor counts ``N ~ Bin(n_pol, p)`` and asset values ``Y1 ~ LN(meanlog, sdlog^2)``.

    The liability is assembled by the caller, typically ``N * max(Y1, K)``.
    """
    if not sdlog > 0:
        raise ValueError(f"sdlog must be > 0, got {sdlog}")
    if not 0.0 <= p_survive <= 1.0:
        raise ValueError(f"p_survive must lie in [0, 1], got {p_survive}")
    if n_paths < 2:
        raise ValueError(f"n_paths must be >= 2, got {n_paths}")
    z = rng.normals(seed, 0, EQUITY, 0, n_paths)
    u = rng.uniforms(seed, 0, DEATHS, 0, n_paths)
    y1 = np.exp(meanlog + sdlog * z)
    n = binom.ppf(u, n_pol, p_survive).astype(np.int64)
    return n, y1


REG_ARB_MEANLOG = 0.1
REG_ARB_SDLOG = 0.3
REG_ARB_ALPHA = 0.9


def regulatory_arbitrage_var() -> float:
    """Analytic ``VaR_0.9`` of the LN(0.1, 0.3^2) liability."""
    return math.exp(REG_ARB_MEANLOG + REG_ARB_SDLOG * norm.ppf(REG_ARB_ALPHA))


def regulatory_arbitrage_payoffs(n_paths: int = 200_000, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Liability ``S`` and the tail-shifting derivative payoff ``Y1``.

    ``Y1`` pays 1.5 when ``S`` is at or below its 90% quantile and -3 above it.
    """
    if n_paths < 2:
        raise ValueError(f"n_paths must be >= 2, got {n_paths}")
    z = rng.normals(seed, 0, EQUITY, 0, n_paths)
    s = np.exp(REG_ARB_MEANLOG + REG_ARB_SDLOG * z)
    y1 = np.where(s <= regulatory_arbitrage_var(), 1.5, -3.0)
    return s, y1


@dataclass(frozen=True)
class GaussianModel:
    """Multi-period toy model with i.i.d. normal asset returns and normal liability increments.

    ``Y1(t) = Y1(t-1) R_t`` with ``R_t ~ N(1 + kappa*sigma_r, sigma_r^2)``;
    ``S = s0 + S_1 + ... + S_T`` with ``sd(S_t) = gammas[t-1]`` and
    ``corr(R_t, S_t) = c``.  The bank account is flat (zero rate).
    """

    s0: float = 100.0
    gammas: tuple[float, ...] = (10.0, 10.0, 10.0)
    c: float = 0.5
    kappa: float = 0.1
    sigma_r: float = 0.2
    y1_0: float = 1.0

    def __post_init__(self):
        if not -1.0 <= self.c <= 1.0:
            raise ValueError(f"GaussianModel.c must lie in [-1, 1], got {self.c}")
        if self.sigma_r <= 0:
            raise ValueError(f"GaussianModel.sigma_r must be > 0, got {self.sigma_r}")
        if any(g < 0 for g in self.gammas):
            raise ValueError("GaussianModel.gammas must be non-negative")

    @property
    def horizon(self) -> int:
        return len(self.gammas)

    def closed_form_value(self, alpha: float, coc_rate: float) -> float:
        """Time-0 mean-quantile fair value ``s0 - kappa c G + i z_alpha sqrt(1-c^2) G``, ``G = sum(gammas)``."""
        total = float(sum(self.gammas))
        lam = float(norm.ppf(alpha))
        return self.s0 - self.kappa * self.c * total + coc_rate * lam * math.sqrt(1.0 - self.c**2) * total

    def simulate(self, n_paths: int, seed: int = 0):
        """Return ``(prices, features, liability)``.

        ``prices`` has shape ``(M, T+1, 2)`` (bank account, risky asset);
        ``features`` holds ``(Y1(t), s0 + S_1 + ... + S_t)``.
        """
        if n_paths < 2:
            raise ValueError(f"n_paths must be >= 2, got {n_paths}")
        T = self.horizon
        y = np.empty((n_paths, T + 1))
        cum = np.empty((n_paths, T + 1))
        y[:, 0] = self.y1_0
        cum[:, 0] = self.s0
        rc = math.sqrt(max(0.0, 1.0 - self.c**2))
        for t in range(1, T + 1):
            z_r = rng.normals(seed, t, EQUITY, 0, n_paths)
            z_s = rng.normals(seed, t, MORTALITY, 0, n_paths)
            ret = 1.0 + self.sigma_r * (self.kappa + z_r)
            y[:, t] = y[:, t - 1] * ret
            cum[:, t] = cum[:, t - 1] + self.gammas[t - 1] * (self.c * z_r + rc * z_s)
        prices = np.stack([np.ones_like(y), y], axis=-1)
        features = np.stack([y, cum], axis=-1)
        return prices, features, cum[:, T].copy()
