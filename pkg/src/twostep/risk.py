"""Empirical risk measures: VaR, TVaR, TVaR deviation, expectile and the Koenker-Bassett error.

All estimators work on the empirical distribution of a (possibly weighted)
sample.  ``var`` is the generalised inverse of the empirical cdf, so on an
``M``-point uniform sample it returns the ``ceil(alpha*M)``-th order
statistic.  ``tvar`` integrates that quantile function over ``(alpha, 1]``
exactly, splitting the atom that straddles ``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Sample:
    """Outcomes with optional probability weights (uniform when omitted)."""

    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if values.size == 0:
            raise ValueError("sample is empty")
        if not np.all(np.isfinite(values)):
            raise ValueError("sample contains non-finite values")
        object.__setattr__(self, "values", values)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).ravel()
            if w.shape != values.shape:
                raise ValueError("weights must match values in length")
            if np.any(w < 0) or not np.isfinite(w).all():
                raise ValueError("weights must be finite and non-negative")
            total = w.sum()
            if not total > 0:
                raise ValueError("weights must not all be zero")
            object.__setattr__(self, "weights", w / total)

    def __len__(self):
        return self.values.size

    def mean(self) -> float:
        if self.weights is None:
            return float(np.mean(self.values))
        return float(np.dot(self.weights, self.values))

    def sorted(self) -> tuple[np.ndarray, np.ndarray | None]:
        order = np.argsort(self.values, kind="stable")
        w = None if self.weights is None else self.weights[order]
        return self.values[order], w


def _as_sample(x) -> Sample:
    return x if isinstance(x, Sample) else Sample(x)


def _check_level(level: float, name: str = "alpha") -> None:
    if not 0.0 < level < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {level}")


def _order_index(alpha: float, m: int) -> int:
    # 1-based ceil(alpha*m); rounding guards products like 0.95*100 -> 95.00000000000001
    return max(1, math.ceil(round(alpha * m, 9)))


def var(sample, alpha: float) -> float:
    """Value-at-Risk ``inf{x : P(X <= x) >= alpha}`` of the empirical distribution."""
    _check_level(alpha)
    s = _as_sample(sample)
    x, w = s.sorted()
    if w is None:
        return float(x[_order_index(alpha, x.size) - 1])
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, alpha - 1e-12, side="left"))
    return float(x[min(idx, x.size - 1)])


def tvar(sample, alpha: float) -> float:
    """Tail Value-at-Risk ``(1/(1-alpha)) * integral_alpha^1 VaR_u du`` on the empirical distribution."""
    _check_level(alpha)
    s = _as_sample(sample)
    x, w = s.sorted()
    if w is None:
        m = x.size
        upper = np.arange(1, m + 1) / m
        lower = np.arange(0, m) / m
    else:
        upper = np.cumsum(w)
        upper[-1] = 1.0
        lower = np.concatenate([[0.0], upper[:-1]])
    mass = np.clip(upper - np.maximum(lower, alpha), 0.0, None)
    return float(np.dot(mass, x) / (1.0 - alpha))


def dtvar(sample, alpha: float) -> float:
    """TVaR deviation, ``TVaR_alpha(X) - E[X]``."""
    s = _as_sample(sample)
    return tvar(s, alpha) - s.mean()


def expectile(sample, tau: float) -> float:
    """The ``tau``-expectile: root ``c`` of ``tau E[(X-c)+] = (1-tau) E[(c-X)+]``.

    The first-order condition is piecewise linear and decreasing in ``c``
    between order statistics, so the root is located on the sorted sample
    and solved exactly on its segment.
    """
    _check_level(tau, "tau")
    s = _as_sample(sample)
    x, w = s.sorted()
    m = x.size
    if w is None:
        w = np.full(m, 1.0 / m)
    if x[0] == x[-1]:
        return float(x[0])
    cw = np.cumsum(w)  # weight of points <= x_k
    cwx = np.cumsum(w * x)
    total_wx = cwx[-1]
    # f(c) = tau * sum_{x>c} w (x - c) - (1 - tau) * sum_{x<=c} w (c - x), evaluated at c = x_k
    below_w, below_wx = cw, cwx
    above_w, above_wx = 1.0 - cw, total_wx - cwx
    f = tau * (above_wx - x * above_w) - (1.0 - tau) * (x * below_w - below_wx)
    k = int(np.searchsorted(-f, 0.0, side="left"))  # first k with f(x_k) <= 0
    if k == 0:
        return float(x[0])
    # root lies in [x_{k-1}, x_k], where the point sets on either side match those at x_{k-1}
    aw, awx = above_w[k - 1], above_wx[k - 1]
    bw, bwx = below_w[k - 1], below_wx[k - 1]
    denom = tau * aw + (1.0 - tau) * bw
    c = (tau * awx + (1.0 - tau) * bwx) / denom
    if not np.isfinite(c):
        raise ArithmeticError("expectile root finding failed on pathological input")
    return float(np.clip(c, x[k - 1], x[k]))


def kb_error(sample, alpha: float) -> float:
    """Mean normalised Koenker-Bassett loss ``alpha/(1-alpha) x+ + x-``."""
    _check_level(alpha)
    s = _as_sample(sample)
    x = s.values
    loss = np.where(x > 0, alpha / (1.0 - alpha) * x, -x)
    if s.weights is None:
        return float(loss.mean())
    return float(np.dot(s.weights, loss))
