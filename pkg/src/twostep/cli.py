"""Command-line front end.

    twostep simulate          --config section5.cfg [--out DIR] [--seed N] [--paths M]
    twostep value-one-period  --config example2.cfg ...
    twostep value-dynamic     --config example3.cfg ...
    twostep report            --out DIR

Exit codes: 0 success, 2 configuration or usage error, 3 numerical
nonconvergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from twostep import pipelines, report
from twostep.config import RunConfig, load_config
from twostep.errors import ConfigError, NonConvergenceError, RedundancyError
from twostep.scenarios import simulate_joint, write_scenarios

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

logger = logging.getLogger("twostep")


def _out_dir(args, cfg: RunConfig | None) -> Path:
    out = args.out or (cfg.out if cfg is not None else None) or Path("out") / (cfg.example if cfg else "report")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    probe = out / ".write-test"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc.strerror}") from None
    return out


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    return load_config(args.config, seed=args.seed, n_paths=args.paths)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if cfg.example != "section5":
        raise ConfigError(f"simulate exports joint equity/mortality scenarios; example {cfg.example} has none")
    out = _out_dir(args, cfg)
    scen = simulate_joint(cfg.market, cfg.mortality, cfg.grid, workers=cfg.workers)
    meta = write_scenarios(scen, out / "scenarios.csv")
    print(f"paths     {scen.n_paths}")
    print(f"seed      {cfg.grid.seed}")
    print(f"checksum  {scen.checksum()}")
    print(f"file      {out / 'scenarios.csv'} (sha256 {meta['sha256']})")
    return EXIT_OK


def cmd_value_one_period(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    print(f"paths {cfg.n_paths}  seed {cfg.seed}")
    if cfg.example == "example1":
        res = pipelines.run_example1(cfg.n_paths, cfg.seed, cfg.valuation.alpha)
        report.write_example1(res, out)
        print(report.format_example1(res))
    elif cfg.example == "example2":
        s = cfg.sample
        res = pipelines.run_example2(
            s["n_paths"], s["seed"], cfg.valuation, s["meanlog"], s["sdlog"], s["n_pol"], s["p_survive"], s["guarantee"]
        )
        report.write_example2(res, out)
        print(report.format_example2(res))
    else:
        raise ConfigError(f"value-one-period needs example1 or example2, got {cfg.example}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_value_dynamic(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    if cfg.example == "section5":
        res = pipelines.run_section5(cfg.market, cfg.mortality, cfg.grid, cfg.valuation, cfg.regressor, cfg.workers)
        print(f"paths {res.scenarios.n_paths}  seed {cfg.grid.seed}  checksum {res.scenarios.checksum()}")
    elif cfg.example == "example3":
        res = pipelines.run_example3(cfg.gaussian, cfg.n_paths, cfg.seed, cfg.valuation, cfg.regressor)
        print(f"paths {cfg.n_paths}  seed {cfg.seed}")
    else:
        raise ConfigError(f"value-dynamic needs section5 or example3, got {cfg.example}")
    report.write_dynamic(res, out, cfg.strategy_time)
    summary = report.dynamic_summary(res)
    print(report.format_dynamic(summary, report.table2_rows(res.path)))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    if args.out is None:
        raise ConfigError("report needs --out DIR pointing at a finished run")
    try:
        print(report.format_report(Path(args.out)))
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostep", description="Two-step fair valuation of insurance liabilities.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log fitting progress")
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "simulate": (cmd_simulate, "simulate the case-study scenarios and export them"),
        "value-one-period": (cmd_value_one_period, "one-period examples: strategy tables and fair values"),
        "value-dynamic": (cmd_value_dynamic, "multi-period valuation with full diagnostic exports"),
        "report": (cmd_report, "print a summary of a finished run directory"),
    }
    for name, (fn, help_text) in handlers.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="run configuration (INI)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--paths", type=int, help="override the number of paths")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        where = f" (period {exc.period})" if exc.period is not None else ""
        print(f"nonconvergence{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RedundancyError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
