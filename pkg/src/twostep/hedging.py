"""One-period hedging: minimise the empirical mean of a loss of ``S - beta . Y``.

Three solvers share the same design-matrix interface:

* quadratic loss: least squares on the empirical moments;
* Koenker-Bassett loss: Huber-smoothed L-BFGS warm start, then an exact
  linear programme on an active set of small residuals (HiGHS).  Points
  outside the active set enter linearly with the sign they have at the warm
  start; the set grows until every sign is confirmed at the LP solution,
  which makes the result an exact minimiser of the unsmoothed objective;
* expectile loss: iteratively reweighted least squares on the sign pattern.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog, minimize

from twostep.errors import NonConvergenceError, RedundancyError
from twostep.losses import LossKind, LossSpec
from twostep.risk import var

logger = logging.getLogger(__name__)

COND_LIMIT = 1e12
SMOOTHING_SCHEDULE = (1e-1, 1e-2, 1e-3)


@dataclass(frozen=True)
class AssetPanel:
    """Current prices ``y`` (length n+1) and end-of-period payoffs ``Y`` (M x (n+1))."""

    prices_now: np.ndarray
    payoffs: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.prices_now, dtype=np.float64).ravel()
        Y = np.asarray(self.payoffs, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.shape[1] != y.size:
            raise ValueError(f"payoffs have {Y.shape[1]} columns but {y.size} prices were given")
        if Y.shape[0] <= Y.shape[1]:
            raise ValueError(f"need more scenarios than assets, got M={Y.shape[0]}, n+1={Y.shape[1]}")
        if not (np.isfinite(Y).all() and np.isfinite(y).all()):
            raise ValueError("asset panel contains non-finite values")
        check_rank(Y)
        object.__setattr__(self, "prices_now", y)
        object.__setattr__(self, "payoffs", Y)

    @property
    def n_assets(self) -> int:
        return self.payoffs.shape[1]

    @property
    def n_scenarios(self) -> int:
        return self.payoffs.shape[0]

    @classmethod
    def one_risky(cls, y1_now: float, y1_payoff, r: float = 0.0) -> "AssetPanel":
        """Bank account (price 1, payoff ``e^r``) plus one risky asset."""
        y1_payoff = np.asarray(y1_payoff, dtype=np.float64)
        Y = np.column_stack([np.full(y1_payoff.size, np.exp(r)), y1_payoff])
        return cls(np.array([1.0, y1_now]), Y)


@dataclass(frozen=True)
class HedgeStrategy:
    units: np.ndarray
    cost: float
    loss_spec: LossSpec
    converged: bool = True
    non_unique: bool = False
    objective: float = float("nan")
    info: dict = field(default_factory=dict)

    def payoff(self, panel: AssetPanel) -> np.ndarray:
        return panel.payoffs @ self.units

    def residual(self, liability, panel: AssetPanel) -> np.ndarray:
        return np.asarray(liability, dtype=np.float64) - self.payoff(panel)

    def to_csv(self, path: str | Path) -> None:
        """Write ``asset_index,units`` rows and a ``.meta.json`` sidecar."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["asset_index", "units"])
            for i, u in enumerate(self.units):
                w.writerow([i, repr(float(u))])
        meta = {
            "loss": self.loss_spec.to_dict(),
            "cost": self.cost,
            "converged": self.converged,
            "non_unique": self.non_unique,
            "objective": self.objective,
        }
        path.with_name(path.stem + ".meta.json").write_text(json.dumps(meta, indent=2))


def check_rank(X: np.ndarray, names=None) -> None:
    """Raise :class:`RedundancyError` if the equilibrated Gram matrix is near singular."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.sqrt(np.mean(X * X, axis=0))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        j = int(zero[0])
        raise RedundancyError(f"asset column {_name(j, names)} is identically zero", column=j)
    Xn = X / norms
    _, svals, vt = np.linalg.svd(Xn, full_matrices=False)
    cond = (svals[0] / svals[-1]) ** 2 if svals[-1] > 0 else np.inf
    if cond > COND_LIMIT:
        j = int(np.argmax(np.abs(vt[-1])))
        raise RedundancyError(
            f"redundant assets: Gram condition number {cond:.3g} exceeds {COND_LIMIT:g}; "
            f"column {_name(j, names)} is (nearly) spanned by the others",
            column=j,
        )


def _name(j, names):
    return f"{j} ({names[j]})" if names is not None else str(j)


# ---------------------------------------------------------------------------
# design-level solvers (X: M x p, s: length M)


def _normalise(X, s):
    colscale = np.sqrt(np.mean(X * X, axis=0))
    colscale[colscale == 0] = 1.0
    scale = float(max(np.std(s), np.mean(np.abs(s))))
    return colscale, scale


def fit_ols(X: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Least-squares coefficients ``(E[X'X])^-1 E[X's]`` (solved via an orthogonal factorisation)."""
    colscale, _ = _normalise(X, s)
    coef, *_ = np.linalg.lstsq(X / colscale, s, rcond=None)
    return coef / colscale


def _constant_column(X):
    for j in range(X.shape[1]):
        col = X[:, j]
        if col[0] != 0 and np.all(col == col[0]):
            return j
    return None


def _kb_smoothed(b, Xn, sn, a, eps):
    r = sn - Xn @ b
    absr = np.abs(r)
    inner = absr < eps
    val = np.where(r > 0, a * r, -r)
    grad_r = np.where(r > 0, a, -1.0)
    if eps > 0:
        val = np.where(inner, (a + 1.0) / (4.0 * eps) * r * r + 0.5 * (a - 1.0) * r + 0.25 * (a + 1.0) * eps, val)
        grad_r = np.where(inner, (a + 1.0) / (2.0 * eps) * r + 0.5 * (a - 1.0), grad_r)
    m = sn.size
    return val.sum() / m, -(Xn.T @ grad_r) / m


def _kb_objective(b, Xn, sn, a):
    r = sn - Xn @ b
    return float(np.mean(np.where(r > 0, a * r, -r)))


@dataclass
class _LPProblem:
    """Koenker-Bassett objective restricted to an active set; other points enter linearly."""

    Xn: np.ndarray
    sn: np.ndarray
    a: float
    active: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        M, p = self.Xn.shape
        XA = self.Xn[self.active]
        nA = XA.shape[0]
        self.p, self.nA = p, nA
        self.c_beta = (-self.a * self.Xn[self.pos].sum(axis=0) + self.Xn[self.neg].sum(axis=0)) / M
        self.const = (self.a * self.sn[self.pos].sum() - self.sn[self.neg].sum()) / M
        self.c = np.concatenate([self.c_beta, np.full(nA, self.a / M), np.full(nA, 1.0 / M)])
        eye = sp.identity(nA, format="csr")
        self.A_eq = sp.hstack([sp.csr_matrix(XA), eye, -eye], format="csr")
        self.b_eq = self.sn[self.active]

    def solve(self, bounds_beta, extra_ub=None, objective=None):
        bounds = list(bounds_beta) + [(0, None)] * (2 * self.nA)
        c = self.c if objective is None else objective
        A_ub = b_ub = None
        if extra_ub is not None:
            A_ub, b_ub = extra_ub
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=self.A_eq, b_eq=self.b_eq, bounds=bounds, method="highs")
        return res

    def objective_row(self):
        return np.concatenate([self.c_beta, np.full(self.nA, self.a / self.Xn.shape[0]), np.full(self.nA, 1.0 / self.Xn.shape[0])])


def _lp_polish(Xn, sn, a, b, max_rounds=30):
    M, p = Xn.shape
    r = sn - Xn @ b
    k = min(M, max(2000, 50 * p))
    force = np.zeros(M, dtype=bool)
    for _ in range(max_rounds):
        absr = np.abs(r)
        thr = np.partition(absr, k - 1)[k - 1] if k < M else np.inf
        active = (absr <= thr) | force
        pos = ~active & (r > 0)
        neg = ~active & (r < 0)
        prob = _LPProblem(Xn, sn, a, active, pos, neg)
        radius = 10.0 * (np.abs(b) + 1.0)
        box = list(zip(b - radius, b + radius))
        res = prob.solve(box)
        if res.status != 0:
            raise NonConvergenceError(f"quantile LP failed: {res.message}")
        bn = res.x[:p]
        rn = sn - Xn @ bn
        tol = 1e-10 * (1.0 + np.abs(sn))
        viol = (pos & (rn < -tol)) | (neg & (rn > tol))
        box_hit = np.any(np.abs(bn - b) >= radius * (1 - 1e-9))
        if not viol.any() and not box_hit:
            return bn, prob, res
        force |= viol
        b, r = bn, rn
        k = min(M, 4 * k)
    raise NonConvergenceError("quantile LP active set did not stabilise")


def _vertex_certificate(bn, Xn, sn, a) -> bool | None:
    """Uniqueness certificate at a nondegenerate vertex.

    With exactly p zero residuals, let ``u`` solve
    ``sum_{r>0} a x_i - sum_{r<0} x_i + X_B' u = 0``.  Optimality puts every
    ``u_i`` in ``[-1, a]``.  Along the edge that releases zero residual i the
    objective is linear with slope ``a - u_i`` or ``1 + u_i``, so the optimum
    is unique exactly when all ``u_i`` lie strictly inside.  Returns True
    (unique), False (flat) or None when the vertex is degenerate.
    """
    p = Xn.shape[1]
    r = sn - Xn @ bn
    tol = 1e-9 * (1.0 + np.abs(sn))
    zero = np.abs(r) <= tol
    if zero.sum() != p:
        return None
    g = a * Xn[r > tol].sum(axis=0) - Xn[r < -tol].sum(axis=0)
    try:
        u = np.linalg.solve(Xn[zero].T, -g)
    except np.linalg.LinAlgError:
        return None
    margin = 1e-7 * (1.0 + a)
    return bool(np.all(u > -1.0 + margin) and np.all(u < a - margin))


def _flatness(prob: _LPProblem, bn, fstar, Xn, sn, a, known_flat=False):
    """Detect a non-unique minimiser; return (non_unique, minimum-L1 minimiser).

    Without ``known_flat`` the optimal face is probed coordinate by
    coordinate with 2p small LPs.
    """
    p, nA = prob.p, prob.nA
    slack = 1e-11 * (1.0 + abs(fstar))
    row = prob.objective_row()
    ub = (row[None, :], np.array([fstar - prob.const + slack]))
    radius = 10.0 * (np.abs(bn) + 1.0)
    box = list(zip(bn - radius, bn + radius))
    flat = known_flat
    for j in range(0 if known_flat else p):
        for sign in (1.0, -1.0):
            obj = np.zeros(p + 2 * nA)
            obj[j] = sign
            res = prob.solve(box, extra_ub=ub, objective=obj)
            if res.status == 0 and abs(res.x[j] - bn[j]) > 1e-7 * (1.0 + abs(bn[j])):
                flat = True
                break
        if flat:
            break
    if not flat:
        return False, bn
    # minimum-L1 optimiser: beta = w_plus - w_minus
    A_eq = sp.hstack([prob.A_eq[:, :p], -prob.A_eq[:, :p], prob.A_eq[:, p:]], format="csr")
    c = np.concatenate([np.ones(2 * p), np.zeros(2 * nA)])
    ub_row = np.concatenate([row[:p], -row[:p], row[p:]])[None, :]
    res = linprog(
        c,
        A_ub=ub_row,
        b_ub=ub[1],
        A_eq=A_eq,
        b_eq=prob.b_eq,
        bounds=[(0, None)] * (2 * p + 2 * nA),
        method="highs",
    )
    if res.status != 0:
        return True, bn
    cand = res.x[:p] - res.x[p : 2 * p]
    if _kb_objective(cand, Xn, sn, a) <= fstar + 10 * slack:
        return True, cand
    return True, bn


def fit_quantile(X: np.ndarray, s: np.ndarray, alpha: float, check_unique: bool = True):
    """Exact minimiser of the mean normalised Koenker-Bassett loss of ``s - X b``.

    Returns ``(coef, objective, non_unique)``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    X = np.asarray(X, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    colscale, scale = _normalise(X, s)
    if scale == 0.0:
        return np.zeros(X.shape[1]), 0.0, False
    Xn, sn = X / colscale, s / scale
    a = alpha / (1.0 - alpha)

    b, *_ = np.linalg.lstsq(Xn, sn, rcond=None)
    j = _constant_column(Xn)
    if j is not None:
        b[j] += var(sn - Xn @ b, alpha) / Xn[0, j]
    for eps in SMOOTHING_SCHEDULE:
        res = minimize(
            _kb_smoothed, b, args=(Xn, sn, a, eps), jac=True, method="L-BFGS-B",
            options={"maxiter": 1000, "gtol": 1e-12, "ftol": 1e-15},
        )
        b = res.x
    bn, prob, _ = _lp_polish(Xn, sn, a, b)
    fstar = _kb_objective(bn, Xn, sn, a)
    non_unique = False
    if check_unique:
        unique = _vertex_certificate(bn, Xn, sn, a)
        if unique is not True:
            non_unique, bn = _flatness(prob, bn, fstar, Xn, sn, a, known_flat=unique is False)
    coef = bn * scale / colscale
    return coef, fstar * scale, non_unique


def fit_expectile(X: np.ndarray, s: np.ndarray, tau: float, max_iter: int = 500):
    """Minimiser of the mean expectile loss by IRLS; returns ``(coef, objective, iterations)``."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    X = np.asarray(X, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    colscale, scale = _normalise(X, s)
    if scale == 0.0:
        return np.zeros(X.shape[1]), 0.0, 0
    Xn, sn = X / colscale, s / scale
    b, *_ = np.linalg.lstsq(Xn, sn, rcond=None)
    seen = set()
    for it in range(1, max_iter + 1):
        r = sn - Xn @ b
        pos = r > 0
        sw = np.sqrt(np.where(pos, tau, 1.0 - tau))
        bn, *_ = np.linalg.lstsq(Xn * sw[:, None], sn * sw, rcond=None)
        if np.max(np.abs(bn - b)) <= 1e-8 * max(1.0, np.max(np.abs(b))):
            b = bn
            break
        key = np.packbits(pos).tobytes()
        if key in seen:
            raise NonConvergenceError("expectile IRLS entered a cycle of sign patterns")
        seen.add(key)
        b = bn
    else:
        raise NonConvergenceError(f"expectile IRLS did not converge in {max_iter} iterations")
    r = sn - Xn @ b
    obj = float(np.mean(np.where(r > 0, tau, 1.0 - tau) * r * r))
    return b * scale / colscale, obj * scale**2, it


# ---------------------------------------------------------------------------
# panel-level API


def _liability(liability, panel):
    s = np.asarray(getattr(liability, "values", liability), dtype=np.float64).ravel()
    if s.size != panel.n_scenarios:
        raise ValueError(f"liability has {s.size} scenarios, panel has {panel.n_scenarios}")
    return s


def _strategy(units, panel, loss, **kw):
    units = np.asarray(units, dtype=np.float64)
    return HedgeStrategy(units=units, cost=float(units @ panel.prices_now), loss_spec=loss, **kw)


def ols_hedge(liability, panel: AssetPanel) -> HedgeStrategy:
    """Quadratic hedge; its residual has zero sample mean."""
    s = _liability(liability, panel)
    units = fit_ols(panel.payoffs, s)
    r = s - panel.payoffs @ units
    return _strategy(units, panel, LossSpec.quadratic(), objective=float(np.mean(r * r)))


def quantile_hedge(liability, panel: AssetPanel, alpha: float) -> HedgeStrategy:
    """Quantile hedge: minimises the mean Koenker-Bassett loss; the residual has zero VaR_alpha."""
    s = _liability(liability, panel)
    units, obj, non_unique = fit_quantile(panel.payoffs, s, alpha)
    return _strategy(units, panel, LossSpec.koenker_bassett(alpha), objective=obj, non_unique=non_unique)


def expectile_hedge(liability, panel: AssetPanel, tau: float) -> HedgeStrategy:
    s = _liability(liability, panel)
    units, obj, iters = fit_expectile(panel.payoffs, s, tau)
    return _strategy(units, panel, LossSpec.expectile(tau), objective=obj, info={"iterations": iters})


def hedge(liability, panel: AssetPanel, loss: LossSpec) -> HedgeStrategy:
    if loss.kind is LossKind.QUADRATIC:
        return ols_hedge(liability, panel)
    if loss.kind is LossKind.KOENKER_BASSETT:
        return quantile_hedge(liability, panel, loss.level)
    return expectile_hedge(liability, panel, loss.level)


def residual_hedge(liability, panel: AssetPanel, base: HedgeStrategy, loss: LossSpec) -> HedgeStrategy:
    """Hedge the residual ``S - base . Y`` under ``loss``."""
    s = _liability(liability, panel)
    if base.units.size != panel.n_assets:
        raise ValueError("base strategy was fit on a panel with a different number of assets")
    return hedge(s - panel.payoffs @ base.units, panel, loss)
