"""State-to-strategy function approximators.

A regressor maps the Markov state ``Z(t)`` (M x m) to a strategy
(M x (n+1) asset units) and is fit by minimising the mean loss of
``target - strategy(Z) . Y(t+1)``.

``LINEAR`` uses a monomial basis ``phi_k(Z)``; the problem is then a linear
hedge on the expanded design ``phi_k(Z) * Y_j(t+1)`` and is handed to the
exact solvers in :mod:`twostep.hedging`.  ``MLP`` is a ReLU feed-forward
network trained with Adam:

    m_t = b1 m_{t-1} + (1 - b1) g_t
    v_t = b2 v_{t-1} + (1 - b2) g_t^2
    w_t = w_{t-1} - lr_t * (m_t / (1 - b1^t)) / (sqrt(v_t / (1 - b2^t)) + eps)

with ``b1 = 0.9``, ``b2 = 0.999``, ``eps = 1e-8`` and a cosine decay of
``lr_t`` over the epochs.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from twostep.errors import NonConvergenceError
from twostep.hedging import check_rank, fit_expectile, fit_ols, fit_quantile
from twostep.losses import LossKind, LossSpec
from twostep.risk import expectile, var

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DIVERGENCE_EPOCHS = 5


class RegressorKind(str, enum.Enum):
    LINEAR = "linear"
    MLP = "mlp"


@dataclass(frozen=True)
class TrainingSpec:
    epochs: int = 200
    batch_size: int = 1024
    step_size: float = 1e-3
    decay: str = "cosine"
    seed: int = 0
    patience: int = 20
    smoothing: float = 1e-3  # Koenker-Bassett smoothing, relative to the target scale

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"TrainingSpec.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"TrainingSpec.batch_size must be >= 1, got {self.batch_size}")
        if not self.step_size > 0:
            raise ValueError(f"TrainingSpec.step_size must be > 0, got {self.step_size}")
        if self.decay not in ("cosine", "none"):
            raise ValueError(f"TrainingSpec.decay must be 'cosine' or 'none', got {self.decay!r}")
        if self.patience < 1:
            raise ValueError(f"TrainingSpec.patience must be >= 1, got {self.patience}")


@dataclass(frozen=True)
class RegressorSpec:
    """``basis`` lists exponent tuples, one entry per state variable (negative powers allowed).

    ``None`` means the constant plus each state variable.
    """

    kind: RegressorKind = RegressorKind.MLP
    basis: tuple[tuple[int, ...], ...] | None = None
    hidden: tuple[int, ...] = (10, 10, 10)
    training: TrainingSpec = field(default_factory=TrainingSpec)

    def __post_init__(self):
        object.__setattr__(self, "kind", RegressorKind(self.kind))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden layer sizes must be >= 1, got {self.hidden}")
        if self.basis is not None:
            object.__setattr__(self, "basis", tuple(tuple(int(e) for e in term) for term in self.basis))

    @classmethod
    def linear(cls, basis=None) -> "RegressorSpec":
        return cls(RegressorKind.LINEAR, basis=basis)

    @classmethod
    def mlp(cls, hidden=(10, 10, 10), **training) -> "RegressorSpec":
        return cls(RegressorKind.MLP, hidden=hidden, training=TrainingSpec(**training))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "basis": [list(t) for t in self.basis] if self.basis is not None else None,
            "hidden": list(self.hidden),
            "training": asdict(self.training),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorSpec":
        basis = d.get("basis")
        return cls(
            RegressorKind(d["kind"]),
            basis=tuple(tuple(t) for t in basis) if basis is not None else None,
            hidden=tuple(d.get("hidden", (10, 10, 10))),
            training=TrainingSpec(**d.get("training", {})),
        )


@dataclass(frozen=True)
class StatePanel:
    """One period of the backward recursion: states at t, prices at t and t+1, targets at t+1."""

    features: np.ndarray
    next_payoffs: np.ndarray
    now_prices: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        nxt = np.asarray(self.next_payoffs, dtype=np.float64)
        now = np.asarray(self.now_prices, dtype=np.float64)
        tgt = np.asarray(self.targets, dtype=np.float64).ravel()
        M = f.shape[0]
        if not (nxt.shape[0] == now.shape[0] == tgt.size == M):
            raise ValueError("state panel row counts disagree")
        if nxt.shape != now.shape:
            raise ValueError("next_payoffs and now_prices must have the same shape")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "next_payoffs", nxt)
        object.__setattr__(self, "now_prices", now)
        object.__setattr__(self, "targets", tgt)

    @property
    def n_outputs(self) -> int:
        return self.next_payoffs.shape[1]


@dataclass
class TrainingTrace:
    final_objective: float = float("nan")
    epochs_run: int = 0
    converged: bool = True
    history: list = field(default_factory=list)  # best-so-far objective after each epoch


# ---------------------------------------------------------------------------
# linear-in-features


def default_basis(m: int) -> tuple[tuple[int, ...], ...]:
    terms = [tuple([0] * m)]
    for j in range(m):
        e = [0] * m
        e[j] = 1
        terms.append(tuple(e))
    return tuple(terms)


def basis_values(features: np.ndarray, basis) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[None, :]
    cols = []
    for term in basis:
        if len(term) != features.shape[1]:
            raise ValueError(f"basis term {term} does not match state dimension {features.shape[1]}")
        col = np.ones(features.shape[0])
        for j, e in enumerate(term):
            if e:
                col = col * features[:, j] ** e
        cols.append(col)
    return np.column_stack(cols)


@dataclass
class FittedLinear:
    basis: tuple
    coef: np.ndarray  # K x (n+1)
    loss: LossSpec
    n_features: int
    trace: TrainingTrace = field(default_factory=TrainingTrace)
    non_unique: bool = False

    kind = RegressorKind.LINEAR

    def predict(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        single = features.ndim == 1
        if single:
            features = features[None, :]
        if features.shape[1] != self.n_features:
            raise ValueError(f"state dimension {features.shape[1]} != fitted dimension {self.n_features}")
        out = basis_values(features, self.basis) @ self.coef
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {
            "kind": "linear",
            "basis": [list(t) for t in self.basis],
            "coef": self.coef.tolist(),
            "loss": self.loss.to_dict(),
            "n_features": self.n_features,
            "trace": asdict(self.trace),
            "non_unique": self.non_unique,
        }


def _fit_linear(spec: RegressorSpec, panel: StatePanel, loss: LossSpec) -> FittedLinear:
    M, m = panel.features.shape
    basis = spec.basis if spec.basis is not None else default_basis(m)
    phi = basis_values(panel.features, basis)
    keep = []
    for k, term in enumerate(basis):
        if any(term) and np.ptp(phi[:, k]) == 0.0:
            logger.info("dropping basis term %s: zero variance on this panel", term)
            continue
        keep.append(k)
    basis = tuple(basis[k] for k in keep)
    phi = phi[:, keep]
    Y = panel.next_payoffs
    K, n1 = phi.shape[1], Y.shape[1]
    design = (phi[:, :, None] * Y[:, None, :]).reshape(M, K * n1)
    names = [f"{basis[k]}*Y{j}" for k in range(K) for j in range(n1)]
    check_rank(design, names)
    s = panel.targets
    non_unique = False
    if loss.kind is LossKind.QUADRATIC:
        coef = fit_ols(design, s)
        r = s - design @ coef
        obj = float(np.mean(r * r))
    elif loss.kind is LossKind.KOENKER_BASSETT:
        coef, obj, non_unique = fit_quantile(design, s, loss.level)
    else:
        coef, obj, _ = fit_expectile(design, s, loss.level)
    trace = TrainingTrace(final_objective=obj, epochs_run=1, converged=True, history=[obj])
    return FittedLinear(basis, coef.reshape(K, n1), loss, m, trace, non_unique)


# ---------------------------------------------------------------------------
# feed-forward network


@dataclass
class FittedMLP:
    weights: list  # per layer, fan_in x fan_out
    biases: list
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_scale: np.ndarray
    target_scale: float
    loss: LossSpec
    spec: RegressorSpec
    trace: TrainingTrace = field(default_factory=TrainingTrace)

    kind = RegressorKind.MLP

    @property
    def n_features(self) -> int:
        return self.in_mean.size

    def _hidden(self, x):
        h = (x - self.in_mean) / self.in_scale
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        return h

    def predict(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        single = features.ndim == 1
        if single:
            features = features[None, :]
        if features.shape[1] != self.n_features:
            raise ValueError(f"state dimension {features.shape[1]} != fitted dimension {self.n_features}")
        out = (self._hidden(features) @ self.weights[-1] + self.biases[-1]) * self.out_scale
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "in_mean": self.in_mean.tolist(),
            "in_scale": self.in_scale.tolist(),
            "out_scale": self.out_scale.tolist(),
            "target_scale": self.target_scale,
            "loss": self.loss.to_dict(),
            "spec": self.spec.to_dict(),
            "trace": asdict(self.trace),
        }


def mlp_objective(params, x, Y, target, out_scale, target_scale, loss: LossSpec, with_grad=True):
    """Mean loss of ``(target - (net(x) * out_scale) . Y) / target_scale`` and its parameter gradient.

    ``params`` is ``[W1, b1, ..., WL, bL]``; ``x`` is already standardised.
    """
    n_layers = len(params) // 2
    acts = [x]
    pre = []
    h = x
    for layer in range(n_layers):
        W, b = params[2 * layer], params[2 * layer + 1]
        z = h @ W + b
        if layer < n_layers - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            out = z
    r = (target - np.einsum("ij,ij->i", out * out_scale, Y)) / target_scale
    value = float(np.mean(loss.eval(r)))
    if not with_grad:
        return value, None
    B = x.shape[0]
    g = -(loss.subgradient(r) / B)[:, None] * Y * (out_scale / target_scale)
    grads = [None] * len(params)
    for layer in range(n_layers - 1, -1, -1):
        W = params[2 * layer]
        grads[2 * layer] = acts[layer].T @ g
        grads[2 * layer + 1] = g.sum(axis=0)
        if layer > 0:
            g = (g @ W.T) * (pre[layer - 1] > 0)
    return value, grads


def _const_payoff_column(Y):
    for j in range(Y.shape[1]):
        col = Y[:, j]
        if col[0] != 0 and np.all(col == col[0]):
            return j
    return None


def _polish_bias(model: FittedMLP, panel: StatePanel, loss: LossSpec) -> None:
    """Exact one-dimensional minimisation over the output bias of a constant-payoff asset."""
    j = _const_payoff_column(panel.next_payoffs)
    if j is None:
        return
    y0 = panel.next_payoffs[0, j]
    resid = panel.targets - np.einsum("ij,ij->i", model.predict(panel.features), panel.next_payoffs)
    if loss.kind is LossKind.QUADRATIC:
        shift = float(np.mean(resid))
    elif loss.kind is LossKind.KOENKER_BASSETT:
        shift = var(resid, loss.level)
    else:
        shift = expectile(resid, loss.level)
    model.biases[-1][j] += shift / y0 / model.out_scale[j]


def _init_from_linear(panel, loss, n_out):
    """Constant-strategy solution used as warm start (exact when the state carries no information)."""
    const = StatePanel(np.zeros((panel.features.shape[0], 1)), panel.next_payoffs, panel.now_prices, panel.targets)
    fit = _fit_linear(RegressorSpec.linear(basis=((0,),)), const, loss.with_smoothing(0.0))
    return fit.coef[0]


def _fit_mlp(spec: RegressorSpec, panel: StatePanel, loss: LossSpec, init: FittedMLP | None = None) -> FittedMLP:
    tr = spec.training
    x_raw, Y, tgt = panel.features, panel.next_payoffs, panel.targets
    M, m = x_raw.shape
    n_out = Y.shape[1]
    rng = np.random.default_rng(tr.seed)

    in_mean = x_raw.mean(axis=0)
    in_scale = x_raw.std(axis=0)
    flat = in_scale == 0.0
    if flat.any() and not flat.all():
        logger.warning("state variables %s have zero variance; they carry no information", np.flatnonzero(flat).tolist())
    in_scale = np.where(flat, 1.0, in_scale)
    target_scale = float(np.sqrt(np.mean(tgt * tgt))) or 1.0
    y_rms = np.sqrt(np.mean(Y * Y, axis=0))
    out_scale = target_scale / np.where(y_rms > 0, y_rms, 1.0)
    eval_loss = loss.with_smoothing(0.0)
    train_loss = loss.with_smoothing(tr.smoothing) if loss.kind is LossKind.KOENKER_BASSETT else loss

    sizes = [m, *spec.hidden, n_out]
    beta0 = _init_from_linear(panel, eval_loss, n_out)
    if flat.all():
        # no informative input: the optimum is a constant strategy, solved exactly
        weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) for b in sizes[1:]]
        biases[-1] = beta0 / out_scale
        model = FittedMLP(weights, biases, in_mean, in_scale, out_scale, target_scale, eval_loss, spec)
        r = (tgt - np.einsum("ij,ij->i", model.predict(x_raw), Y)) / target_scale
        obj = float(np.mean(eval_loss.eval(r)))
        model.trace = TrainingTrace(obj, 0, True, [obj])
        return model

    if init is not None:
        weights = [w.copy() for w in init.weights]
        biases = [b.copy() for b in init.biases]
        # re-express the initial network under this panel's output scaling
        weights[-1] = weights[-1] * (init.out_scale / out_scale)
        biases[-1] = biases[-1] * (init.out_scale / out_scale)
        in_mean, in_scale = init.in_mean.copy(), init.in_scale.copy()
    else:
        weights, biases = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)))
            biases.append(np.zeros(b))
        weights[-1] *= 0.1
        h = (x_raw - in_mean) / in_scale
        for W, b in zip(weights[:-1], biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        biases[-1] = beta0 / out_scale - h.mean(axis=0) @ weights[-1]

    x = (x_raw - in_mean) / in_scale
    params = []
    for W, b in zip(weights, biases):
        params += [W, b]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]

    def full_objective(ps):
        return mlp_objective(ps, x, Y, tgt, out_scale, target_scale, eval_loss, with_grad=False)[0]

    start = full_objective(params)
    best, best_params = start, [p.copy() for p in params]
    history = []
    last = start
    rising = 0
    stale = 0
    step = 0
    epochs_run = 0
    bs = min(tr.batch_size, M)
    for epoch in range(tr.epochs):
        if tr.decay == "cosine":
            lr = tr.step_size * 0.5 * (1.0 + math.cos(math.pi * epoch / tr.epochs))
        else:
            lr = tr.step_size
        perm = rng.permutation(M)
        for lo in range(0, M, bs):
            idx = perm[lo : lo + bs]
            _, grads = mlp_objective(params, x[idx], Y[idx], tgt[idx], out_scale, target_scale, train_loss)
            step += 1
            c1 = 1.0 - ADAM_BETA1**step
            c2 = 1.0 - ADAM_BETA2**step
            for k, g in enumerate(grads):
                m1[k] = ADAM_BETA1 * m1[k] + (1.0 - ADAM_BETA1) * g
                m2[k] = ADAM_BETA2 * m2[k] + (1.0 - ADAM_BETA2) * g * g
                params[k] = params[k] - lr * (m1[k] / c1) / (np.sqrt(m2[k] / c2) + ADAM_EPS)
        epochs_run = epoch + 1
        obj = full_objective(params)
        if not math.isfinite(obj):
            raise NonConvergenceError("network training produced a non-finite objective")
        rising = rising + 1 if obj > last else 0
        last = obj
        if rising >= DIVERGENCE_EPOCHS and obj > start:
            raise NonConvergenceError(f"network training diverged: objective rose for {rising} epochs past its start")
        if obj < best:
            best, best_params, stale = obj, [p.copy() for p in params], 0
        else:
            stale += 1
        history.append(best)
        if stale >= tr.patience:
            break

    model = FittedMLP(
        weights=best_params[0::2],
        biases=best_params[1::2],
        in_mean=in_mean,
        in_scale=in_scale,
        out_scale=out_scale,
        target_scale=target_scale,
        loss=eval_loss,
        spec=spec,
    )
    _polish_bias(model, panel, eval_loss)
    final = full_objective([a for pair in zip(model.weights, model.biases) for a in pair])
    history.append(min(final, history[-1] if history else final))
    model.trace = TrainingTrace(final, epochs_run, True, history)
    return model


# ---------------------------------------------------------------------------


def fit(spec: RegressorSpec, panel: StatePanel, loss: LossSpec, init=None):
    """Fit a state-to-strategy map minimising the mean ``loss`` of the hedging residual.

    ``init`` optionally warm-starts an MLP from a previously fitted network.
    """
    if spec.kind is RegressorKind.LINEAR:
        return _fit_linear(spec, panel, loss)
    return _fit_mlp(spec, panel, loss, init=init)


def predict(model, state) -> np.ndarray:
    return model.predict(state)


def model_from_dict(d: dict):
    if d["kind"] == "linear":
        return FittedLinear(
            basis=tuple(tuple(t) for t in d["basis"]),
            coef=np.asarray(d["coef"], dtype=np.float64),
            loss=LossSpec.from_dict(d["loss"]),
            n_features=int(d["n_features"]),
            trace=TrainingTrace(**d["trace"]),
            non_unique=bool(d.get("non_unique", False)),
        )
    return FittedMLP(
        weights=[np.asarray(w, dtype=np.float64) for w in d["weights"]],
        biases=[np.asarray(b, dtype=np.float64) for b in d["biases"]],
        in_mean=np.asarray(d["in_mean"], dtype=np.float64),
        in_scale=np.asarray(d["in_scale"], dtype=np.float64),
        out_scale=np.asarray(d["out_scale"], dtype=np.float64),
        target_scale=float(d["target_scale"]),
        loss=LossSpec.from_dict(d["loss"]),
        spec=RegressorSpec.from_dict(d["spec"]),
        trace=TrainingTrace(**d["trace"]),
    )


def save_model(model, path: str | Path) -> None:
    """JSON parameter dump with a versioned header."""
    doc = {"format": "twostep-regressor", "version": FORMAT_VERSION, "model": model.to_dict()}
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "twostep-regressor":
        raise ValueError(f"{path} is not a saved regressor")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported regressor format version {doc.get('version')}")
    return model_from_dict(doc["model"])
