"""Training: cross-entropy objective, Adagrad, early stopping, regimes.

Two regimes cover the same architecture:

* ``end_to_end``   - every parameter starts fresh and trains jointly.
* ``incremental``  - a previously trained sentence-only checkpoint donates
                     both fragment LSTMs and the merge projection; the visual
                     pathway and the answer head start fresh.

The loop is deterministic for a fixed seed: parameter draws, the per-epoch
shuffles, and batch order all come from one seeded generator, single-threaded.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import data
from .errors import ConfigError, NumericError
from .model import Model, ModelDims, forward, init_model
from .tensor import Tensor, cross_entropy_with_logits, no_grad


def cross_entropy(dist, target: int) -> float:
    """Negative log-likelihood -ln(dist[target]) of a probability vector.

    Plain readout for already-normalized distributions; the training path
    computes the identical quantity fused from logits (log-sum-exp) via
    ``tensor.cross_entropy_with_logits`` so huge logits cannot overflow.
    """
    values = dist.data if isinstance(dist, Tensor) else np.asarray(dist)
    if not 0 <= target < values.shape[0]:
        raise IndexError(f"target {target} out of range for {values.shape[0]} classes")
    p = float(values[target])
    if p <= 0.0:
        return math.inf
    return -math.log(p)


@dataclass
class AdagradState:
    """Per-parameter accumulators of squared gradients."""

    accumulators: dict = field(default_factory=dict)
    epsilon: float = 1e-8

    def accumulator_for(self, name: str, like: np.ndarray) -> np.ndarray:
        acc = self.accumulators.get(name)
        if acc is None:
            acc = np.zeros_like(like)
            self.accumulators[name] = acc
        return acc

    def snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.accumulators.items()}

    def restore(self, snap: dict) -> None:
        self.accumulators = {k: v.copy() for k, v in snap.items()}


def adagrad_step(named_tensors: dict, state: AdagradState, lr: float) -> None:
    """One update: acc += g^2; theta -= lr * g / (sqrt(acc) + epsilon)."""
    for name, tensor in named_tensors.items():
        g = tensor.grad
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        acc = state.accumulator_for(name, tensor.data)
        acc += g * g
        tensor.data -= lr * g / (np.sqrt(acc) + state.epsilon)


def early_stop(val_losses, patience: int):
    """(stop, best_epoch) given the validation losses so far.

    ``best_epoch`` is the first argmin. Training stops once the last
    ``patience`` epochs, counted inclusive of the best one, have produced no
    further strict improvement, i.e. when the most recent strict improvement
    lies ``patience`` or more epochs in the past. Ties never count as
    improvement.
    """
    if patience < 1:
        raise ConfigError("patience must be at least 1")
    if not val_losses:
        return False, 0
    best_epoch = int(np.argmin(val_losses))
    stop = (len(val_losses) - best_epoch) >= patience
    return stop, best_epoch


def build_answer_vocab(samples, min_freq: int = 1) -> tuple:
    """Answer classes from training answers, most frequent first (ties by
    word) so indices are stable for a given train set."""
    counts = Counter(s.answer for s in samples)
    kept = [(w, c) for w, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    return tuple(w for w, _ in kept)


@dataclass
class TrainingConfig:
    mode: str = "full"
    regime: str = "end_to_end"
    lr: float = 0.01
    batch_size: int = 16
    max_epochs: int = 30
    patience: int = 3
    seed: int = 0
    init_checkpoint: str | None = None
    answer_min_freq: int = 1

    def validate(self):
        if self.regime not in ("end_to_end", "incremental"):
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.regime == "incremental" and not self.init_checkpoint:
            raise ConfigError("incremental regime requires an init checkpoint")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")
        if self.lr < 0:
            raise ConfigError("learning rate must be nonnegative")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    updates: int = 0


@dataclass
class TrainResult:
    model: Model
    metrics: list
    best_epoch: int
    best_val_loss: float
    adagrad: AdagradState


# Transferred by the incremental regime: the two fragment encoders plus the
# merge projection, and nothing else.
SHARED_SECTIONS = (
    "lstm_left/in_weights",
    "lstm_left/hid_weights",
    "lstm_left/bias",
    "lstm_right/in_weights",
    "lstm_right/hid_weights",
    "lstm_right/bias",
    "merge/weights",
)


def init_incremental(checkpoint_path, fresh: Model) -> Model:
    """Copy the donor's LSTMs and merge projection into a fresh model.

    Every copied array must match the fresh model's widths exactly; the
    visual pathway, the answer head, and the optimizer state stay fresh.
    """
    tensors, _, meta = data.load_checkpoint(checkpoint_path)
    named = fresh.named_tensors()
    for name in SHARED_SECTIONS:
        if name not in tensors:
            raise ConfigError(f"init checkpoint lacks section {name!r}")
        src, dst = tensors[name], named[name]
        if src.shape != dst.data.shape:
            raise ConfigError(
                f"init checkpoint section {name!r} has shape {src.shape}, "
                f"model expects {dst.data.shape}"
            )
        np.copyto(dst.data, src)
    return fresh


def model_meta(model: Model, cfg: TrainingConfig | None = None) -> dict:
    meta = {
        "mode": model.mode,
        "emb_dim": model.dims.emb_dim,
        "hidden_dim": model.dims.hidden_dim,
        "merge_dim": model.dims.merge_dim,
        "attn_dim": model.dims.attn_dim,
        "channels": model.dims.channels,
        "right_reverse": model.dims.right_reverse,
        "n_answers": model.n_answers,
        "answer_vocab": list(model.answer_vocab),
    }
    if cfg is not None:
        meta["config"] = {
            "mode": cfg.mode,
            "regime": cfg.regime,
            "lr": cfg.lr,
            "batch_size": cfg.batch_size,
            "max_epochs": cfg.max_epochs,
            "patience": cfg.patience,
            "seed": cfg.seed,
            "answer_min_freq": cfg.answer_min_freq,
        }
    return meta


def save_model(path, model: Model, cfg=None, adagrad: AdagradState | None = None) -> None:
    tensors = {k: t.data for k, t in model.named_tensors().items()}
    optimizer = adagrad.accumulators if adagrad is not None else None
    data.save_checkpoint(path, tensors, model_meta(model, cfg), optimizer)


def load_model(path):
    """Rebuild a model (and optimizer state) from a checkpoint."""
    tensors, optimizer, meta = data.load_checkpoint(path)
    dims = ModelDims(
        emb_dim=int(meta["emb_dim"]),
        hidden_dim=int(meta["hidden_dim"]),
        merge_dim=int(meta["merge_dim"]),
        attn_dim=int(meta["attn_dim"]),
        channels=int(meta["channels"]),
        right_reverse=bool(meta["right_reverse"]),
    )
    model = init_model(dims, meta["mode"], int(meta["n_answers"]), meta["answer_vocab"], seed=0)
    named = model.named_tensors()
    unknown = set(tensors) - set(named)
    if unknown:
        raise data.FormatError(f"{path}: unknown section names {sorted(unknown)}")
    missing = set(named) - set(tensors)
    if missing:
        raise data.FormatError(f"{path}: missing sections {sorted(missing)}")
    for name, arr in tensors.items():
        dst = named[name]
        if arr.shape != dst.data.shape:
            raise ConfigError(
                f"{path}: section {name!r} has shape {arr.shape}, "
                f"model expects {dst.data.shape}"
            )
        np.copyto(dst.data, arr)
    state = AdagradState()
    for name, arr in optimizer.items():
        if name not in named:
            raise data.FormatError(f"{path}: optimizer section for unknown {name!r}")
        state.accumulators[name] = arr.copy()
    return model, state, meta


def _sample_loss(model: Model, sample, table, store):
    pooled = store.get(sample.video_id) if model.mode == "full" else None
    logits, _ = forward(model, sample, table, pooled)
    target = model.answer_index[sample.answer]
    return cross_entropy_with_logits(logits, target)


def evaluate(model: Model, dataset, table, store=None) -> float:
    """Accuracy of the arg-max prediction over a dataset, in [0, 1].

    Answers missing from the model's answer vocabulary count as wrong (they
    cannot be predicted). Arg-max ties resolve to the lowest class index.

    Context for calibration: on the LSMDC movie fill-in-the-blank benchmark
    this architecture family is reported at 0.280 accuracy for the
    sentence-only setup, 0.155 for left-fragment-only, 0.317 trained
    end-to-end, and 0.342 with incremental training. Reaching those numbers
    needs the full movie corpus; they are context only and are NOT targets
    or tolerances for this package's test suite, which uses synthetic
    corpora with known structure instead.
    """
    if not dataset:
        raise ConfigError("cannot evaluate an empty dataset")
    loss, acc, _ = evaluate_metrics(model, dataset, table, store)
    return acc


def evaluate_metrics(model: Model, dataset, table, store=None):
    """(mean cross-entropy, accuracy, oov answer rate) without recording."""
    if not dataset:
        raise ConfigError("cannot evaluate an empty dataset")
    total_loss = 0.0
    correct = 0
    oov = 0
    with no_grad():
        for sample in dataset:
            pooled = store.get(sample.video_id) if model.mode == "full" else None
            logits, _ = forward(model, sample, table, pooled)
            target = model.answer_index.get(sample.answer)
            if target is None:
                oov += 1
                total_loss += _worst_case_loss(model.n_answers)
                continue
            total_loss += cross_entropy_with_logits(logits, target).item()
            if int(np.argmax(logits.data)) == target:
                correct += 1
    n = len(dataset)
    return total_loss / n, correct / n, oov / n


def _worst_case_loss(n_answers: int) -> float:
    # An unpredictable answer contributes the chance-level loss so the
    # validation signal stays comparable across vocab coverage.
    return math.log(n_answers)


def train(model: Model, train_set, val_set, table, store, cfg: TrainingConfig) -> TrainResult:
    """Mini-batch training with per-epoch shuffles and early stopping.

    Batches are fixed-size with the last partial batch kept; each batch's
    mean loss drives one Adagrad update. After every epoch the validation
    loss decides whether to keep training; the returned model carries the
    parameters of the best validation epoch.
    """
    cfg.validate()
    if not train_set:
        raise ConfigError("training set is empty")
    if not val_set:
        raise ConfigError("validation set is empty")
    rng = np.random.default_rng(cfg.seed)
    state = AdagradState()
    named = model.named_tensors()
    metrics = []
    val_losses = []
    best_snapshot = None
    best_adagrad = None
    best_epoch = 0
    n = len(train_set)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        updates = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            model.zero_grads()
            total = None
            for idx in batch:
                loss = _sample_loss(model, train_set[idx], table, store)
                total = loss if total is None else total + loss
            mean_loss = total * (1.0 / len(batch))
            mean_loss.backward()
            adagrad_step(named, state, cfg.lr)
            epoch_loss += mean_loss.item() * len(batch)
            updates += 1
        val_loss, val_acc, _ = evaluate_metrics(model, val_set, table, store)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=epoch_loss / n,
                val_loss=val_loss,
                val_acc=val_acc,
                updates=updates,
            )
        )
        val_losses.append(val_loss)
        stop, best_epoch = early_stop(val_losses, cfg.patience)
        if best_epoch == epoch:
            best_snapshot = model.snapshot()
            best_adagrad = state.snapshot()
        if stop:
            break
    model.restore(best_snapshot)
    state.restore(best_adagrad)
    return TrainResult(
        model=model,
        metrics=metrics,
        best_epoch=best_epoch,
        best_val_loss=val_losses[best_epoch],
        adagrad=state,
    )
