"""CSV exports and plain-text summaries.

Every file has a header row and a deterministic row order.  Figures are
emitted as data: quantile bands for fan charts, histogram bins for
densities and empirical cdf points for distribution plots.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from twostep.dynamic import ValuationPath, rebalancing_costs, strategy_grid
from twostep.pipelines import TABLE1_ORDER, DynamicResult, Example1Result, Example2Result
from twostep.risk import var

FAN_LEVELS = (2.5, 10.0, 25.0, 50.0, 75.0, 90.0, 97.5)
FAN_HEADER = ["q2.5", "q10", "q25", "q50", "q75", "q90", "q97.5"]
HIST_BINS = 100


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def histogram_rows(samples: dict, bins: int = HIST_BINS):
    """Shared-bin density histogram for one or more samples."""
    allv = np.concatenate([np.asarray(v, dtype=float) for v in samples.values()])
    lo, hi = float(allv.min()), float(allv.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    dens = [np.histogram(v, bins=edges, density=True)[0] for v in samples.values()]
    return [[edges[k], edges[k + 1], *[d[k] for d in dens]] for k in range(bins)]


def ecdf_rows(samples: dict, n_points: int = 401):
    allv = np.concatenate([np.asarray(v, dtype=float) for v in samples.values()])
    grid = np.linspace(np.quantile(allv, 0.001), np.quantile(allv, 0.999), n_points)
    cdfs = []
    for v in samples.values():
        srt = np.sort(np.asarray(v, dtype=float))
        cdfs.append(np.searchsorted(srt, grid, side="right") / srt.size)
    return [[grid[k], *[c[k] for c in cdfs]] for k in range(n_points)]


# ---------------------------------------------------------------- one period


def write_example1(res: Example1Result, out: Path) -> list[Path]:
    out = Path(out)
    rows = []
    for name, strat in (("A", res.strategy_a), ("B", res.strategy_b)):
        r = strat.residual(res.liability, res.panel)
        rows.append([name, strat.units[0], strat.units[1], strat.cost, var(r, res.alpha), strat.non_unique])
    files = [
        write_csv(out / "strategies.csv", ["strategy", "risk_free", "risky", "cost", "residual_var", "non_unique"], rows),
        write_csv(
            out / "residual_cdf.csv",
            ["x", "cdf_A", "cdf_B"],
            ecdf_rows({"A": res.residual("A"), "B": res.residual("B")}),
        ),
    ]
    return files


def table1_rows(res: Example2Result):
    return [[k, res.strategies[k].units[0], res.strategies[k].units[1], res.strategies[k].cost] for k in TABLE1_ORDER]


def write_example2(res: Example2Result, out: Path) -> list[Path]:
    out = Path(out)
    d, sd = res.dtvar_triple(), res.sd_pair()
    files = [
        write_csv(out / "table1.csv", ["strategy", "risk_free", "risky", "cost"], table1_rows(res)),
        write_csv(out / "fair_values.csv", ["method", "value", "hedge_cost", "capital_cost"],
                  [list(fv.row().values()) for fv in res.fair_values]),
        write_csv(out / "residual_stats.csv", ["strategy", "dtvar", "sd"], [[k, d[k], sd[k]] for k in res.residuals]),
        write_csv(out / "residual_density.csv", ["bin_left", "bin_right", *[f"density_{k}" for k in res.residuals]],
                  histogram_rows(res.residuals)),
    ]
    for k in TABLE1_ORDER:
        res.strategies[k].to_csv(out / f"strategy_{k}.csv")
    return files


# ---------------------------------------------------------------- dynamic


def fanchart_rows(path: ValuationPath):
    q = np.percentile(path.fair_values, FAN_LEVELS, axis=0)
    return [[t, float(path.fair_values[:, t].mean()), *q[:, t]] for t in range(path.horizon + 1)]


def table2_rows(path: ValuationPath):
    return [[d.period, d.var, d.kb_error, d.dtvar, d.coverage] for d in path.diagnostics]


def rebal_rows(path: ValuationPath):
    rb = rebalancing_costs(path)
    rows = []
    per = rb["per_period"]
    for k in range(per.shape[1]):
        q = np.percentile(per[:, k], FAN_LEVELS)
        rows.append([str(k + 1), float(per[:, k].mean()), *q, rb["coverage"][k]])
    if per.shape[1]:
        q = np.percentile(rb["total"], FAN_LEVELS)
        rows.append(["total", float(rb["total"].mean()), *q, float(1.0 - rb["breach"].mean())])
    return rows, rb


def strategy_rows(path: ValuationPath, t: int, feature_index: int = 0, n_points: int = 41):
    grid, xi = strategy_grid(path, t, feature_index, n_points, which="xi")
    _, theta = strategy_grid(path, t, feature_index, n_points, which="theta")
    n1 = xi.shape[1]
    header = ["feature_value", *[f"xi_{j}" for j in range(n1)], *[f"theta_{j}" for j in range(n1)]]
    return header, [[grid[k], *xi[k], *theta[k]] for k in range(n_points)]


def write_dynamic(res: DynamicResult, out: Path, strategy_time: int | None = None) -> list[Path]:
    out = Path(out)
    path = res.path
    T = path.horizon
    if strategy_time is None:
        strategy_time = min(5, T - 1)
    rows, rb = rebal_rows(path)
    header, srows = strategy_rows(path, strategy_time)
    final = path.final_loss()
    files = [
        write_csv(out / "fanchart.csv", ["t", "mean", *FAN_HEADER], fanchart_rows(path)),
        write_csv(out / "table2.csv", ["period", "var", "kb_error", "dtvar", "coverage"], table2_rows(path)),
        write_csv(out / "rebal.csv", ["t", "mean", *FAN_HEADER, "coverage"], rows),
        write_csv(out / f"strategy_t{strategy_time}.csv", header, srows),
        write_csv(out / "final_loss.csv", ["bin_left", "bin_right", "density"], histogram_rows({"final": final})),
        write_csv(out / "liability.csv", ["bin_left", "bin_right", "density"],
                  histogram_rows({"liability": res.liability})),
    ]
    summary = dynamic_summary(res, rb)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    files.append(out / "summary.json")
    return files


def dynamic_summary(res: DynamicResult, rb: dict | None = None) -> dict:
    path = res.path
    if rb is None:
        rb = rebalancing_costs(path)
    es = res.expected_liability
    total = rb["total"]
    out = {
        "kind": "dynamic",
        "rho0": path.value,
        "expected_liability": es,
        "n_paths": int(path.fair_values.shape[0]),
        "horizon": path.horizon,
        "max_abs_var": max(abs(d.var) for d in path.diagnostics),
        "max_kb_gap": max(abs(d.kb_error - d.dtvar) / d.dtvar if d.dtvar > 0 else 0.0 for d in path.diagnostics),
        "total_rebal_q95": float(np.percentile(total, 95)) if total.size else 0.0,
        "breach_share": float(rb["breach"].mean()),
        "final_loss_coverage": float(np.mean(path.final_loss() <= 0)),
        "seconds": res.seconds,
    }
    if res.closed_form is not None:
        out["closed_form"] = res.closed_form
        out["standard_error"] = res.standard_error
    if res.scenarios is not None:
        out["seed"] = res.scenarios.grid.seed if res.scenarios.grid else None
        out["checksum"] = res.scenarios.checksum()
    return out


# ---------------------------------------------------------------- text


def format_example1(res: Example1Result) -> str:
    a, b = res.strategy_a, res.strategy_b
    ra, rb = res.residual("A"), res.residual("B")
    return "\n".join(
        [
            f"VaR_{res.alpha}(S) analytic      {res.var_s:.4f}",
            f"strategy A units ({a.units[0]:.4f}, {a.units[1]:.4f})  cost {a.cost:.4f}  residual VaR {var(ra, res.alpha):.4f}",
            f"strategy B units ({b.units[0]:.4f}, {b.units[1]:.4f})  cost {b.cost:.4f}  residual VaR {var(rb, res.alpha):.4f}",
            f"worst residual: A {ra.max():.4f}   B {rb.max():.4f}",
        ]
    )


def format_example2(res: Example2Result) -> str:
    lines = [f"{'strategy':<12}{'risk-free':>12}{'risky':>12}{'cost':>12}"]
    for name, u0, u1, cost in table1_rows(res):
        lines.append(f"{name:<12}{u0:>12.2f}{u1:>12.2f}{cost:>12.2f}")
    lines.append("")
    for fv in res.fair_values:
        lines.append(f"{fv.method:<22} value {fv.value:9.2f}  hedge {fv.hedge_cost:9.2f}  capital {fv.capital_cost:7.2f}")
    d, sd = res.dtvar_triple(), res.sd_pair()
    lines.append("")
    for k in res.residuals:
        lines.append(f"residual {k:<11} dTVaR {d[k]:8.2f}   sd {sd[k]:7.2f}")
    return "\n".join(lines)


def format_dynamic(summary: dict, table2: list | None = None) -> str:
    lines = [f"rho0 = {summary['rho0']:.4f}"]
    if "closed_form" in summary:
        cf = summary["closed_form"]
        lines[0] += f"   closed form = {cf:.4f}   rel. diff = {(summary['rho0'] - cf) / cf:+.4%}"
        lines.append(f"Monte Carlo standard error ~ {summary['standard_error']:.4f}")
    lines.append(f"E[S] = {summary['expected_liability']:.2f}")
    if table2:
        lines.append(f"{'period':>6}{'VaR':>12}{'K-B error':>12}{'dTVaR':>12}")
        for p, v, kb, dt, *_ in table2:
            lines.append(f"{int(p):>6}{float(v):>12.3f}{float(kb):>12.3f}{float(dt):>12.3f}")
    lines.append(
        f"total rebalancing cost q95 = {summary['total_rebal_q95']:.2f} "
        f"({summary['total_rebal_q95'] / summary['expected_liability']:.2%} of E[S])"
    )
    lines.append(f"final-loss coverage = {summary['final_loss_coverage']:.4f}")
    return "\n".join(lines)


def format_report(out: Path) -> str:
    """Human-readable summary of a finished run directory."""
    out = Path(out)
    parts = []
    summary_file = out / "summary.json"
    if summary_file.exists():
        summary = json.loads(summary_file.read_text())
        table2 = read_csv(out / "table2.csv")[1] if (out / "table2.csv").exists() else None
        if summary.get("kind") == "dynamic":
            parts.append(format_dynamic(summary, table2))
    for name in ("table1.csv", "fair_values.csv", "residual_stats.csv", "strategies.csv"):
        f = out / name
        if f.exists():
            header, rows = read_csv(f)
            parts.append(name)
            parts.append("  " + ", ".join(header))
            for row in rows:
                parts.append("  " + ", ".join(_short(v) for v in row))
    if not parts:
        raise FileNotFoundError(f"no report files found in {out}")
    return "\n".join(parts)


def _short(v: str) -> str:
    try:
        x = float(v)
    except ValueError:
        return v
    return f"{x:.4f}" if math.isfinite(x) else v
