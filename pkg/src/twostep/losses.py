"""Hedging loss functions and their subgradients."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class LossKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    KOENKER_BASSETT = "koenker_bassett"
    EXPECTILE = "expectile"


@dataclass(frozen=True)
class LossSpec:
    """A convex loss vanishing only at zero.

    ``level`` is the confidence level alpha for Koenker-Bassett and tau for
    the expectile loss; it is ignored for the quadratic loss.  ``smoothing``
    replaces the Koenker-Bassett kink on ``|x| < smoothing`` by a quadratic
    matching value and slope at both ends.
    """

    kind: LossKind = LossKind.QUADRATIC
    level: float | None = None
    smoothing: float = 0.0

    def __post_init__(self):
        kind = LossKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is not LossKind.QUADRATIC:
            if self.level is None or not 0.0 < self.level < 1.0:
                raise ValueError(f"{kind.value} loss needs a level in (0, 1), got {self.level}")
        if not self.smoothing >= 0:
            raise ValueError(f"smoothing must be >= 0, got {self.smoothing}")

    @classmethod
    def quadratic(cls) -> "LossSpec":
        return cls(LossKind.QUADRATIC)

    @classmethod
    def koenker_bassett(cls, alpha: float, smoothing: float = 0.0) -> "LossSpec":
        return cls(LossKind.KOENKER_BASSETT, alpha, smoothing)

    @classmethod
    def expectile(cls, tau: float) -> "LossSpec":
        return cls(LossKind.EXPECTILE, tau)

    def with_smoothing(self, smoothing: float) -> "LossSpec":
        return LossSpec(self.kind, self.level, smoothing)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "level": self.level, "smoothing": self.smoothing}

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        return cls(LossKind(d["kind"]), d.get("level"), float(d.get("smoothing", 0.0)))

    @property
    def label(self) -> str:
        if self.kind is LossKind.QUADRATIC:
            return "quadratic"
        return f"{self.kind.value}({self.level:g})"

    # pointwise evaluation -------------------------------------------------

    def eval(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind is LossKind.QUADRATIC:
            return x * x
        if self.kind is LossKind.EXPECTILE:
            tau = self.level
            return np.where(x > 0, tau * x * x, (1.0 - tau) * x * x)
        a = self.level / (1.0 - self.level)
        out = np.where(x > 0, a * x, -x)
        eps = self.smoothing
        if eps > 0:
            inner = np.abs(x) < eps
            quad = (a + 1.0) / (4.0 * eps) * x * x + 0.5 * (a - 1.0) * x + 0.25 * (a + 1.0) * eps
            out = np.where(inner, quad, out)
        return out

    def subgradient(self, x):
        """An element of the subdifferential; 0 at the Koenker-Bassett kink."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind is LossKind.QUADRATIC:
            return 2.0 * x
        if self.kind is LossKind.EXPECTILE:
            tau = self.level
            return np.where(x > 0, 2.0 * tau * x, 2.0 * (1.0 - tau) * x)
        a = self.level / (1.0 - self.level)
        out = np.where(x > 0, a, np.where(x < 0, -1.0, 0.0))
        eps = self.smoothing
        if eps > 0:
            inner = np.abs(x) < eps
            out = np.where(inner, (a + 1.0) / (2.0 * eps) * x + 0.5 * (a - 1.0), out)
        return out

    def mean(self, x) -> float:
        return float(np.mean(self.eval(x)))


def eval_loss(loss: LossSpec, x):
    return loss.eval(x)


def subgradient(loss: LossSpec, x):
    return loss.subgradient(x)
