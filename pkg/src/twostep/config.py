"""Run configuration files.

A config is an INI file read with :mod:`configparser`.  Section ``[run]``
selects the example; the other sections fill the matching parameter
objects.  Parsing is strict: unknown sections or keys are errors.

Grammar (``;`` and ``#`` start comments)::

    [run]
    example = section5            ; section5 | example1 | example2 | example3
    out = results/section5        ; optional, overridden by --out
    workers = 4                   ; optional, scenario threads
    strategy_time = 5             ; optional, period for strategy_t.csv

    [market]     r, mu, sigma, y1_0, delta                 (section5)
    [mortality]  lambda0, c, eta_mort, age_x, l_x          (section5)
    [grid]       horizon_T, substeps, n_paths, seed        (section5)
    [sample]     n_paths, seed, and for example2 also
                 meanlog, sdlog, n_pol, p_survive, guarantee
    [gaussian]   s0, gammas, c, kappa, sigma_r, y1_0       (example3)
    [valuation]  coc_rate, alpha, tau, second_loss
    [regressor]  kind, basis, hidden, epochs, batch_size, step_size,
                 decay, seed, patience, smoothing          (section5, example3)

Lists are comma separated; a basis is a ``;``-separated list of exponent
tuples, e.g. ``basis = 0,0; -1,0; 0,1``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from twostep.errors import ConfigError
from twostep.losses import LossKind
from twostep.regressors import RegressorKind, RegressorSpec, TrainingSpec
from twostep.scenarios import GaussianModel, GridSpec, MarketParams, MortalityParams
from twostep.valuation import ValuationParams

EXAMPLES = ("section5", "example1", "example2", "example3")

SECTIONS = {
    "section5": {"run", "market", "mortality", "grid", "valuation", "regressor"},
    "example1": {"run", "sample", "valuation"},
    "example2": {"run", "sample", "valuation"},
    "example3": {"run", "sample", "gaussian", "valuation", "regressor"},
}

RUN_KEYS = {"example", "out", "workers", "strategy_time"}
SAMPLE_KEYS = {
    "example1": {"n_paths", "seed"},
    "example2": {"n_paths", "seed", "meanlog", "sdlog", "n_pol", "p_survive", "guarantee"},
    "example3": {"n_paths", "seed"},
}

DEFAULT_SEED = 12345

# per-example defaults, matching the published worked examples where they state a value
VALUATION_DEFAULTS = {
    "section5": dict(coc_rate=0.06, alpha=0.95),
    "example1": dict(coc_rate=0.06, alpha=0.9),
    "example2": dict(coc_rate=0.1, alpha=0.99, tau=0.998),
    "example3": dict(coc_rate=0.06, alpha=0.95),
}
SAMPLE_DEFAULTS = {
    "example1": dict(n_paths=200_000, seed=DEFAULT_SEED),
    "example2": dict(
        n_paths=200_000, seed=DEFAULT_SEED, meanlog=0.1, sdlog=0.2, n_pol=1000, p_survive=0.9, guarantee=1.0
    ),
    "example3": dict(n_paths=100_000, seed=DEFAULT_SEED),
}
EXAMPLE3_BASIS = ((0, 0), (-1, 0), (0, 1))


@dataclass(frozen=True)
class RunConfig:
    example: str
    out: Path | None = None
    workers: int = 1
    strategy_time: int | None = None
    market: MarketParams | None = None
    mortality: MortalityParams | None = None
    grid: GridSpec | None = None
    sample: dict = field(default_factory=dict)
    gaussian: GaussianModel | None = None
    valuation: ValuationParams = field(default_factory=ValuationParams)
    second_loss: LossKind = LossKind.KOENKER_BASSETT
    regressor: RegressorSpec | None = None

    @property
    def seed(self) -> int:
        return self.grid.seed if self.grid is not None else int(self.sample["seed"])

    @property
    def n_paths(self) -> int:
        return self.grid.n_paths if self.grid is not None else int(self.sample["n_paths"])


def _coerce(section, key, raw, typ):
    text = raw.strip()
    try:
        if typ is bool:
            return {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}[text.lower()]
        if typ is int:
            value = float(text)
            if value != int(value):
                raise ValueError
            return int(value)
        if typ is float:
            return float(text)
        return text
    except (ValueError, KeyError):
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {typ.__name__}") from None


def _field_types(cls):
    hints = {"int": int, "float": float, "str": str, "bool": bool}
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "str")
        out[f.name] = hints.get(t.split(" ")[0].split("|")[0].strip(), float)
    return out


def _build(cls, section, items, overrides=None):
    types = _field_types(cls)
    kwargs = {}
    for key, raw in items.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        kwargs[key] = _coerce(section, key, raw, types[key])
    kwargs.update(overrides or {})
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _check_keys(section, items, allowed):
    for key in items:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")


def _int_list(section, key, raw):
    try:
        return tuple(int(p) for p in raw.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} must be a comma-separated list of integers") from None


def _parse_basis(raw):
    return tuple(_int_list("regressor", "basis", term) for term in raw.split(";") if term.strip())


def _parse_regressor(items, default_kind, default_basis=None):
    items = dict(items)
    allowed = {"kind", "basis", "hidden"} | {f.name for f in dataclasses.fields(TrainingSpec)}
    _check_keys("regressor", items, allowed)
    try:
        kind = RegressorKind(items.pop("kind", default_kind).strip())
    except ValueError:
        raise ConfigError("[regressor] kind must be 'linear' or 'mlp'") from None
    basis = _parse_basis(items.pop("basis")) if "basis" in items else default_basis
    hidden = _int_list("regressor", "hidden", items.pop("hidden")) if "hidden" in items else (10, 10, 10)
    training = _build(TrainingSpec, "regressor", items)
    try:
        return RegressorSpec(kind, basis=basis if kind is RegressorKind.LINEAR else None, hidden=hidden, training=training)
    except ValueError as exc:
        raise ConfigError(f"[regressor] {exc}") from None


def _parse_gaussian(items):
    items = dict(items)
    gammas = None
    if "gammas" in items:
        try:
            gammas = tuple(float(g) for g in items.pop("gammas").split(",") if g.strip())
        except ValueError:
            raise ConfigError("[gaussian] gammas must be a comma-separated list of numbers") from None
    return _build(GaussianModel, "gaussian", items, {"gammas": gammas} if gammas else None)


def load_config(path: str | Path, seed: int | None = None, n_paths: int | None = None) -> RunConfig:
    """Parse ``path``; ``seed`` and ``n_paths`` override the file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str  # keys are case sensitive (horizon_T)
    path = Path(path)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return parse_sections({s: dict(parser[s]) for s in parser.sections()}, seed=seed, n_paths=n_paths)


def parse_sections(sections: dict, seed: int | None = None, n_paths: int | None = None) -> RunConfig:
    run = dict(sections.get("run", {}))
    if "example" not in run:
        raise ConfigError("[run] example is required (one of " + ", ".join(EXAMPLES) + ")")
    example = run["example"].strip()
    if example not in EXAMPLES:
        raise ConfigError(f"[run] example = {example!r} is not one of " + ", ".join(EXAMPLES))
    for name in sections:
        if name not in SECTIONS[example]:
            raise ConfigError(f"unknown section [{name}] for example {example}")
    _check_keys("run", run, RUN_KEYS)
    out = Path(run["out"].strip()) if run.get("out") else None
    workers = _coerce("run", "workers", run["workers"], int) if "workers" in run else 1
    if workers < 1:
        raise ConfigError("[run] workers must be >= 1")
    strategy_time = _coerce("run", "strategy_time", run["strategy_time"], int) if "strategy_time" in run else None

    val_items = dict(sections.get("valuation", {}))
    second = val_items.pop("second_loss", "koenker_bassett").strip()
    try:
        second_loss = LossKind(second)
    except ValueError:
        raise ConfigError(f"[valuation] second_loss = {second!r} must be koenker_bassett or expectile") from None
    if second_loss is LossKind.QUADRATIC:
        raise ConfigError("[valuation] second_loss must be koenker_bassett or expectile")
    defaults = dict(VALUATION_DEFAULTS[example])
    types = _field_types(ValuationParams)
    _check_keys("valuation", val_items, set(types))
    for key, raw in val_items.items():
        defaults[key] = _coerce("valuation", key, raw, float)
    try:
        valuation = ValuationParams(**defaults)
        if second_loss is LossKind.EXPECTILE:
            valuation.second_loss(second_loss)
    except ValueError as exc:
        raise ConfigError(f"[valuation] {exc}") from None

    cfg = dict(example=example, out=out, workers=workers, strategy_time=strategy_time,
               valuation=valuation, second_loss=second_loss)
    if example == "section5":
        over = {}
        if seed is not None:
            over["seed"] = seed
        if n_paths is not None:
            over["n_paths"] = n_paths
        grid_items = dict(sections.get("grid", {}))
        grid_items.setdefault("seed", str(DEFAULT_SEED))
        cfg["market"] = _build(MarketParams, "market", sections.get("market", {}))
        cfg["mortality"] = _build(MortalityParams, "mortality", sections.get("mortality", {}))
        cfg["grid"] = _build(GridSpec, "grid", grid_items, over)
        cfg["regressor"] = _parse_regressor(sections.get("regressor", {}), "mlp")
        T = cfg["grid"].horizon_T
        if strategy_time is not None and not 0 <= strategy_time < T:
            raise ConfigError(f"[run] strategy_time must lie in [0, {T - 1}]")
    else:
        sample_items = dict(sections.get("sample", {}))
        _check_keys("sample", sample_items, SAMPLE_KEYS[example])
        sample = dict(SAMPLE_DEFAULTS[example])
        for key, raw in sample_items.items():
            typ = int if key in ("n_paths", "seed", "n_pol") else float
            sample[key] = _coerce("sample", key, raw, typ)
        if seed is not None:
            sample["seed"] = seed
        if n_paths is not None:
            sample["n_paths"] = n_paths
        if sample["n_paths"] < 2:
            raise ConfigError("[sample] n_paths must be >= 2")
        if not 0 <= sample["seed"] < 2**64:
            raise ConfigError("[sample] seed must be a 64-bit non-negative integer")
        cfg["sample"] = sample
        if example == "example3":
            cfg["gaussian"] = _parse_gaussian(sections.get("gaussian", {}))
            cfg["regressor"] = _parse_regressor(sections.get("regressor", {}), "linear", EXAMPLE3_BASIS)
            T = cfg["gaussian"].horizon
            if strategy_time is not None and not 0 <= strategy_time < T:
                raise ConfigError(f"[run] strategy_time must lie in [0, {T - 1}]")
    return RunConfig(**cfg)
