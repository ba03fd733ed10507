"""Desk-scale training: linear or one-hidden-layer models with per-class
sigmoid heads, closed-form backpropagation through any supported loss,
SGD/Adam updates, and the epoch loop that freezes schedule values at epoch
start and runs ranking-based relabeling passes between epochs.

There is no autodiff anywhere: every per-entry loss exposes its own logit
gradient, and this module chains it through the model by hand. Quantities
with stop-gradient semantics (pseudo-labels, instance weights, frozen soft
targets, step indicators) are computed once per evaluation point and passed
around explicitly, which is also what makes the finite-difference oracles
in the test suite possible.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .adapters import (
    AdaptiveThresholds,
    FrameworkLoss,
    apl_relabel,
    ema_update,
    en_relabel,
    framework_grad_wrt_logit,
    framework_per_label_loss,
    to_framework,
)
from .data import LabeledDataset
from .errors import ConfigError, ShapeError
from .evaluation import mean_average_precision
from .numerics import col_sums, make_rng, matmul, sigmoid
from .robust_loss import GrLossParams, RobustnessParams

ARCHS = ("linear", "mlp")
OPTIMIZERS = ("adam", "sgd")


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass
class ModelParams:
    """Weight matrices and bias vectors; `arch` selects the forward rule."""

    arch: str
    weights: list
    biases: list

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def flat_parameters(self):
        """All parameter arrays in a fixed order (for optimizers and tests)."""
        return list(self.weights) + list(self.biases)


def init_model(arch: str, n_features: int, n_classes: int, hidden: int = 32, seed: int = 0) -> ModelParams:
    """Zero-initialized linear model (all confidences start at 0.5) or a
    seeded one-hidden-layer tanh network with 1/sqrt(fan-in) scaling."""
    if arch == "linear":
        return ModelParams(
            "linear", [np.zeros((n_features, n_classes))], [np.zeros(n_classes)]
        )
    if arch == "mlp":
        rng = make_rng(seed, stream=11)
        w1 = rng.normal(size=(n_features, hidden)) / np.sqrt(n_features)
        w2 = rng.normal(size=(hidden, n_classes)) / np.sqrt(hidden)
        return ModelParams("mlp", [w1, w2], [np.zeros(hidden), np.zeros(n_classes)])
    raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHS}")


def forward(model: ModelParams, x):
    """Logits for a batch; returns (logits, hidden activations or None)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ShapeError(f"batch of shape {x.shape} does not match model input width")
    if model.arch == "linear":
        return matmul(x, model.weights[0]) + model.biases[0], None
    hidden = np.tanh(matmul(x, model.weights[0]) + model.biases[0])
    return matmul(hidden, model.weights[1]) + model.biases[1], hidden


def predict_confidences(model: ModelParams, x) -> np.ndarray:
    logits, _ = forward(model, x)
    return sigmoid(logits)


def backward(model: ModelParams, x, grad_logits, hidden):
    """Parameter gradients from d(loss)/d(logits), chained by hand."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(grad_logits, dtype=float)
    if model.arch == "linear":
        return [matmul(x.T, g)], [col_sums(g)]
    d_hidden = matmul(g, model.weights[1].T) * (1.0 - hidden**2)
    return (
        [matmul(x.T, d_hidden), matmul(hidden.T, g)],
        [col_sums(d_hidden), col_sums(g)],
    )


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    slot_m: list = field(default_factory=list)
    slot_v: list = field(default_factory=list)


def make_optimizer(kind: str, learning_rate: float, momentum: float = 0.0) -> OptimizerState:
    if kind not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZERS}")
    if learning_rate < 0.0 or not 0.0 <= momentum < 1.0:
        raise ConfigError("learning rate must be >= 0 and momentum in [0, 1)")
    return OptimizerState(kind=kind, learning_rate=learning_rate, momentum=momentum)


def optimizer_step(state: OptimizerState, model: ModelParams, grads) -> None:
    """Apply one update in place; Adam uses the standard bias correction."""
    weight_grads, bias_grads = grads
    params = model.flat_parameters()
    gradients = list(weight_grads) + list(bias_grads)
    if not state.slot_m:
        state.slot_m = [np.zeros_like(p) for p in params]
        state.slot_v = [np.zeros_like(p) for p in params]
    if state.kind == "sgd":
        for p, g, m in zip(params, gradients, state.slot_m):
            if state.momentum > 0.0:
                m *= state.momentum
                m += g
                p -= state.learning_rate * m
            else:
                p -= state.learning_rate * g
        return
    state.step_count += 1
    bias1 = 1.0 - state.beta1**state.step_count
    bias2 = 1.0 - state.beta2**state.step_count
    for p, g, m, v in zip(params, gradients, state.slot_m, state.slot_v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g**2
        p -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


# ---------------------------------------------------------------------------
# Method runtime (per-run loss state)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationToggles:
    """Component switches: a disabled piece collapses to the
    assumed-negative default (pseudo-label 0, weight 1, exponents 0.01)."""

    use_pseudo_labels: bool = True
    use_instance_weights: bool = True
    use_robust_losses: bool = True


@dataclass(frozen=True)
class FrozenAux:
    """Stop-gradient quantities captured at one evaluation point."""

    pseudo: np.ndarray
    weight: np.ndarray
    target: Optional[np.ndarray] = None


_HYPER_DEFAULTS = {
    "epsilon": 0.1,
    "gamma": 2.0,
    "lam": 1.5,
    "margin": 1.0,
    "tau": 0.6,
    "theta_percentile": 10.0,
    "ema_decay": 0.9,
    "entropy_weight": 1.0,
    "negative_weight": 1.0,
    "splc_start_epoch": 0,
    "en_expected_positives": None,
}


class MethodRuntime:
    """Mutable loss state for one training run: the epoch-frozen bundle,
    relabel codes, EMA confidences, and frozen soft targets."""

    def __init__(
        self,
        method_id: str,
        observed,
        *,
        epochs: int,
        hyper: dict | None = None,
        gr_params: GrLossParams | None = None,
        toggles: AblationToggles | None = None,
    ):
        self.method_id = method_id
        self.observed = np.asarray(observed, dtype=np.int8)
        self.codes = np.where(self.observed == 1, 1, 0).astype(np.int8)
        unknown = set(hyper or ()) - set(_HYPER_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown hyperparameters {sorted(unknown)}")
        self.hyper = {**_HYPER_DEFAULTS, **(hyper or {})}
        self.toggles = toggles or AblationToggles()
        self.gr_params = gr_params
        self.ema = None
        self.targets = None
        self.epoch_params = None
        self._bundle: FrameworkLoss | None = None

        if method_id == "GR":
            if gr_params is None:
                raise ConfigError("method GR needs schedule parameters")
            if not self.toggles.use_robust_losses:
                self.gr_params = replace(
                    gr_params, robust=RobustnessParams(0.01, 0.01, 0.01)
                )
            if epochs > 0 and self.gr_params.horizon < epochs - 1:
                raise ConfigError("schedule horizon is shorter than the training run")
        elif method_id == "EN":
            if self.hyper["en_expected_positives"] is None:
                raise ConfigError("method EN needs per-class expected positive counts")
        elif method_id not in ("AN", "AN-LS", "Focal", "EM", "EM+APL", "Hill", "SPLC"):
            raise ConfigError(f"unknown method id {method_id!r}")
        if method_id != "GR" and toggles is not None and toggles != AblationToggles():
            raise ConfigError("ablation toggles only apply to method GR")

    @property
    def needs_train_confidences(self) -> bool:
        return self.method_id in ("EN", "EM+APL")

    def epoch_begin(self, t: int, train_confidences=None) -> None:
        """Freeze schedule values for epoch t and run the relabeling pass."""
        h = self.hyper
        if self.method_id == "GR":
            self.epoch_params = self.gr_params.at_epoch(t)
            self._bundle = to_framework("GR", gr_params=self.epoch_params)
        elif self.method_id == "SPLC":
            self._bundle = to_framework(
                "SPLC",
                tau=h["tau"],
                margin=h["margin"],
                gamma=h["gamma"],
                lam=h["lam"],
                splc_active=t >= h["splc_start_epoch"],
            )
        elif self.method_id == "EN":
            if train_confidences is None:
                raise ConfigError("EN relabeling needs full-train confidences")
            self.ema = ema_update(self.ema, train_confidences, h["ema_decay"])
            self.codes = en_relabel(self.ema, self.observed, h["en_expected_positives"])
            self._bundle = to_framework("AN")  # BCE branches; codes drive the rest
        elif self.method_id == "EM+APL":
            if train_confidences is None:
                raise ConfigError("APL relabeling needs full-train confidences")
            self.codes = apl_relabel(
                train_confidences, self.observed, h["theta_percentile"]
            )
            self.targets = np.asarray(train_confidences, dtype=float).copy()
            # The bundle only supplies the branch losses here; pseudo-labels
            # and weights come from the relabel codes via aux().
            self._bundle = to_framework("EM+APL", thresholds=AdaptiveThresholds(tau1=0.0))
        elif self.method_id == "AN-LS":
            self._bundle = to_framework("AN-LS", epsilon=h["epsilon"])
        elif self.method_id == "Focal":
            self._bundle = to_framework("Focal", gamma=h["gamma"])
        elif self.method_id == "Hill":
            self._bundle = to_framework("Hill", lam=h["lam"])
        elif self.method_id == "EM":
            self._bundle = to_framework("EM", entropy_weight=h["entropy_weight"])
        else:
            self._bundle = to_framework("AN")

    def _require_bundle(self) -> FrameworkLoss:
        if self._bundle is None:
            raise ConfigError("epoch_begin must run before evaluating the loss")
        return self._bundle

    def aux(self, p, z, rows) -> FrozenAux:
        """Stop-gradient quantities at the current confidences."""
        bundle = self._require_bundle()
        codes = self.codes[rows]
        s01 = (codes == 1).astype(np.int8)
        h = self.hyper
        if self.method_id == "EN":
            pseudo = np.where(codes == -1, 0.0, np.nan)
            pseudo = np.where(codes == 1, 0.0, pseudo)
            weight = np.where(codes == 0, 0.0, 1.0)
            return FrozenAux(pseudo, weight)
        if self.method_id == "EM+APL":
            pseudo = np.where(codes == -1, 0.0, 1.0)
            weight = np.where(
                codes == 1,
                1.0,
                np.where(codes == 0, h["entropy_weight"], h["negative_weight"]),
            )
            return FrozenAux(pseudo, weight, self.targets[rows])
        pseudo = np.asarray(bundle.pseudo_fn(np.asarray(p, dtype=float)), dtype=float)
        weight = np.asarray(bundle.weight_fn(np.asarray(p, dtype=float), s01), dtype=float)
        if self.method_id == "GR":
            if not self.toggles.use_pseudo_labels:
                pseudo = np.zeros_like(pseudo)
            if not self.toggles.use_instance_weights:
                weight = np.ones_like(weight)
        return FrozenAux(pseudo, weight)

    def loss_matrix(self, p, z, rows, aux: FrozenAux) -> np.ndarray:
        s01 = (self.codes[rows] == 1).astype(np.int8)
        return framework_per_label_loss(
            self._require_bundle(), p, s01, z=z,
            target=aux.target, pseudo=aux.pseudo, weight=aux.weight,
        )

    def grad_matrix(self, p, z, rows, aux: FrozenAux) -> np.ndarray:
        s01 = (self.codes[rows] == 1).astype(np.int8)
        return framework_grad_wrt_logit(
            self._require_bundle(), p, s01, z=z,
            target=aux.target, pseudo=aux.pseudo, weight=aux.weight,
        )

    def loss_and_grad(self, p, z, rows):
        aux = self.aux(p, z, rows)
        return self.loss_matrix(p, z, rows, aux), self.grad_matrix(p, z, rows, aux)


def frozen_batch_objective(model, x, rows, runtime: MethodRuntime, aux: FrozenAux) -> float:
    """Batch objective with stop-gradient quantities held at `aux`; this is
    the function the finite-difference oracles differentiate."""
    logits, _ = forward(model, np.asarray(x)[rows])
    p = sigmoid(logits)
    lm = runtime.loss_matrix(p, logits, rows, aux)
    return float(np.sum(lm) / len(rows))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSettings:
    epochs: int
    arch: str = "linear"
    hidden: int = 32
    learning_rate: float = 0.05
    batch_size: int = 64
    optimizer: str = "adam"
    momentum: float = 0.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.hidden < 1 or self.batch_size < 1:
            raise ConfigError("hidden width and batch size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")


@dataclass
class TrainedRun:
    method_id: str
    seed: int
    final_model: ModelParams
    best_model: ModelParams
    best_epoch: int
    best_val_map: Optional[float]
    history: list
    epoch_seconds: list


def train_run(
    method_id: str,
    train_ds: LabeledDataset,
    val_ds: LabeledDataset,
    settings: TrainSettings,
    seed: int,
    *,
    hyper: dict | None = None,
    gr_params: GrLossParams | None = None,
    toggles: AblationToggles | None = None,
) -> TrainedRun:
    """Train one seeded run; deterministic down to the final weight bits."""
    if not train_ds.is_single_positive:
        raise ConfigError("the train split must carry exactly one positive per row")
    if not val_ds.is_fully_labeled:
        raise ConfigError("the validation split must be fully labeled")
    if train_ds.n_features != val_ds.n_features or train_ds.n_classes != val_ds.n_classes:
        raise ConfigError("train and validation splits must share feature/class widths")

    model = init_model(
        settings.arch, train_ds.n_features, train_ds.n_classes, settings.hidden, seed
    )
    optimizer = make_optimizer(settings.optimizer, settings.learning_rate, settings.momentum)
    runtime = MethodRuntime(
        method_id,
        train_ds.observed,
        epochs=settings.epochs,
        hyper=hyper,
        gr_params=gr_params,
        toggles=toggles,
    )
    shuffle_rng = make_rng(seed, stream=2)
    x = train_ds.features
    n = train_ds.n_instances

    history, epoch_seconds = [], []
    best_map = None
    best_epoch = -1
    best_model = model.copy()
    for t in range(settings.epochs):
        started = time.perf_counter()
        confidences = (
            predict_confidences(model, x) if runtime.needs_train_confidences else None
        )
        runtime.epoch_begin(t, confidences)
        order = shuffle_rng.permutation(n)
        running = 0.0
        for start in range(0, n, settings.batch_size):
            rows = order[start : start + settings.batch_size]
            logits, hidden = forward(model, x[rows])
            p = sigmoid(logits)
            loss_m, grad_m = runtime.loss_and_grad(p, logits, rows)
            grads = backward(model, x[rows], grad_m / rows.size, hidden)
            optimizer_step(optimizer, model, grads)
            running += float(np.sum(loss_m))
        val_map = mean_average_precision(
            predict_confidences(model, val_ds.features), val_ds.labels
        )
        history.append(
            {"epoch": t, "train_loss": running / n, "val_map": float(val_map)}
        )
        epoch_seconds.append(time.perf_counter() - started)
        if best_map is None or val_map > best_map:
            best_map, best_epoch, best_model = float(val_map), t, model.copy()

    return TrainedRun(
        method_id=method_id,
        seed=seed,
        final_model=model,
        best_model=best_model,
        best_epoch=best_epoch,
        best_val_map=best_map,
        history=history,
        epoch_seconds=epoch_seconds,
    )
