"""Cross-entropy loss, Adam, and the mini-batch training loop.

Training follows the reported protocol: Adam at lr 1e-4 (default), up to 100
epochs, early stopping with patience 10 on validation loss, best-epoch
weights restored. Everything is seeded and single-threaded, so two runs with
the same seed and data produce identical histories and parameters.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, UsageError
from .fusion import ModalityVector
from .model import (
    ModelConfig,
    ModelParams,
    backward,
    clone_params,
    forward,
    init_model,
    named_tensors,
    ranked_classes,
    replace_tensors,
)
from .tensor import Vec

Sample = tuple[list[ModalityVector], int]


def cross_entropy(logits: Vec, label: int) -> tuple[float, Vec]:
    """Loss -log softmax(logits)[label] via log-sum-exp, and d loss / d logits."""
    c = logits.shape[0]
    if not 0 <= label < c:
        raise UsageError(f"label {label} out of range for {c} classes")
    m = float(np.max(logits))
    exps = np.exp(logits - m)
    total = float(np.sum(exps))
    loss = math.log(total) + m - float(logits[label])
    dlogits = exps / total
    dlogits[label] -= 1.0
    return loss, dlogits


@dataclass
class AdamState:
    """First/second moments per named tensor, plus the shared step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(tensors: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    state.m = {k: np.zeros_like(a) for k, a in tensors.items()}
    state.v = {k: np.zeros_like(a) for k, a in tensors.items()}
    return state


def adam_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new arrays, mutates the state."""
    state.t += 1
    b1t = 1.0 - state.beta1**state.t
    b2t = 1.0 - state.beta2**state.t
    updated = {}
    for name, theta in tensors.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise UsageError(f"gradient for {name!r} has shape {g.shape}, expected {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in tensor {name!r}")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / b1t
        v_hat = state.v[name] / b2t
        updated[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    seed: int = 0
    fusion: str = "multconcat"
    hidden: int = 512
    rank: int = 16
    lmf_dim: int = 128
    clip_norm: float = 0.0  # 0 disables clipping
    stratify: bool = False
    concat_raw: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_top1: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based epoch number
    stop_reason: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.val_loss)


def _batch_gradients(cfg, params, batch):
    """Mean loss and mean parameter gradients over a batch of samples."""
    grads_sum = None
    loss_sum = 0.0
    for sample, label in batch:
        logits, cache = forward(cfg, params, sample)
        loss, dlogits = cross_entropy(logits, label)
        loss_sum += loss
        g, _ = backward(cfg, params, cache, dlogits)
        if grads_sum is None:
            grads_sum = g
        else:
            for k in grads_sum:
                grads_sum[k] += g[k]
    scale = 1.0 / len(batch)
    for k in grads_sum:
        grads_sum[k] *= scale
    return loss_sum * scale, grads_sum


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for k in grads:
            grads[k] *= scale


def evaluate_loss_top1(cfg: ModelConfig, params: ModelParams, samples: list[Sample]) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy (ties to the lower class index)."""
    if not samples:
        raise UsageError("cannot evaluate on an empty sample list")
    loss_sum = 0.0
    hits = 0
    for sample, label in samples:
        logits, _ = forward(cfg, params, sample)
        loss, _ = cross_entropy(logits, label)
        loss_sum += loss
        if ranked_classes(logits)[0] == label:
            hits += 1
    return loss_sum / len(samples), hits / len(samples)


def train(
    cfg: ModelConfig,
    tcfg: TrainConfig,
    train_samples: list[Sample],
    val_samples: list[Sample],
) -> tuple[ModelParams, TrainHistory]:
    """Mini-batch Adam with early stopping on validation loss.

    Stops after `patience` consecutive epochs without strict val-loss
    improvement (or at `epochs`), and returns the best-epoch parameters.
    """
    if not train_samples or not val_samples:
        raise UsageError("train and val splits must be non-empty")
    for _, label in train_samples + val_samples:
        if not 0 <= label < cfg.classes:
            raise UsageError(f"label {label} outside the {cfg.classes}-class vocabulary")
    params = init_model(cfg)
    tensors = named_tensors(cfg, params)
    state = init_adam(tensors, lr=tcfg.lr)
    history = TrainHistory()
    best_loss = math.inf
    best_tensors = {k: v.copy() for k, v in tensors.items()}
    best_epoch = 0
    bad_epochs = 0
    n = len(train_samples)
    for epoch in range(1, tcfg.epochs + 1):
        # fresh, epoch-derived shuffle keeps runs reproducible
        order = np.random.default_rng((tcfg.seed, epoch)).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, tcfg.batch_size):
            batch = [train_samples[i] for i in order[start : start + tcfg.batch_size]]
            params = replace_tensors(cfg, params, tensors)
            loss, grads = _batch_gradients(cfg, params, batch)
            if not math.isfinite(loss):
                raise NumericError(f"training loss diverged at epoch {epoch}")
            if tcfg.clip_norm > 0:
                _clip(grads, tcfg.clip_norm)
            epoch_loss += loss * len(batch)
            tensors = adam_step(tensors, grads, state)
        params = replace_tensors(cfg, params, tensors)
        val_loss, val_top1 = evaluate_loss_top1(cfg, params, val_samples)
        if not math.isfinite(val_loss):
            raise NumericError(f"validation loss diverged at epoch {epoch}")
        history.train_loss.append(epoch_loss / n)
        history.val_loss.append(val_loss)
        history.val_top1.append(val_top1)
        if val_loss < best_loss:
            best_loss = val_loss
            best_epoch = epoch
            best_tensors = {k: v.copy() for k, v in tensors.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tcfg.patience:
                history.stop_reason = "early_stop"
                break
    if not history.stop_reason:
        history.stop_reason = "max_epochs"
    history.best_epoch = best_epoch
    best_params = replace_tensors(cfg, params, best_tensors)
    return clone_params(cfg, best_params), history
