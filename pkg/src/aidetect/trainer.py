"""Mini-batch training with early stopping; drives the few-shot experiment.

A run is fully determined by (records, config): the validation carve-out,
parameter init, shuffling, and dropout masks all derive from config.seed, and
the returned parameters are the best-validation-loss snapshot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import NumericalError, TrainingError
from .evaluator import EvalResult, evaluate
from .heads import Head, HeadKind, head_init, load_head, loss_and_gradients, save_head
from .labels import Label
from .nn import Adam, bce_with_logits, sigmoid
from .store import EmbeddingRecord, SplitSpec, cache_digest, few_shot_split


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    min_delta: float = 1e-5
    val_fraction: float = 0.1
    seed: int = 0
    head_kind: HeadKind = HeadKind.MLP
    threshold: float = 0.5

    def __post_init__(self):
        if isinstance(self.head_kind, str):
            self.head_kind = HeadKind(self.head_kind)
        if self.lr <= 0 or self.batch_size <= 0 or self.max_epochs <= 0 \
                or self.patience <= 0 or self.min_delta <= 0:
            raise TrainingError("lr, batch_size, max_epochs, patience, min_delta "
                                "must all be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise TrainingError(f"val_fraction must be in (0,1), got {self.val_fraction}")
        if not 0.0 < self.threshold < 1.0:
            raise TrainingError(f"threshold must be in (0,1), got {self.threshold}")

    def as_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "min_delta": self.min_delta,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
            "head_kind": self.head_kind.value,
            "threshold": self.threshold,
        }


class StopReason(str, Enum):
    EARLY_STOPPED = "early_stopped"
    MAX_EPOCHS = "max_epochs"


@dataclass
class EpochStats:
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats]
    best_epoch: int
    stop_reason: StopReason

    @property
    def best_val_loss(self) -> float:
        return self.epochs[self.best_epoch].val_loss


@dataclass
class TrainedHead:
    head: Head
    kind: HeadKind
    threshold: float
    config: TrainConfig
    dataset_digest: str


@dataclass
class FewShotResult:
    trained: TrainedHead
    history: TrainHistory
    evaluation: EvalResult
    adaptation_ids: list[str]
    test_ids: list[str]


def _matrix(records: list[EmbeddingRecord]) -> tuple[np.ndarray, np.ndarray]:
    z = np.stack([r.vector for r in records]).astype(np.float32)
    y = np.array([r.label.value for r in records], dtype=np.float32)
    return z, y


def _seeds(seed: int) -> tuple[int, int, int]:
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(c.generate_state(1)[0]) for c in children)


def train(records: list[EmbeddingRecord], config: TrainConfig) -> tuple[TrainedHead, TrainHistory]:
    n_real = sum(r.label is Label.REAL for r in records)
    n_fake = sum(r.label is Label.FAKE for r in records)
    if n_real < 2 or n_fake < 2:
        raise TrainingError(
            f"need at least 2 records per class, got {n_real} real / {n_fake} fake"
        )
    val_seed, init_seed, shuffle_seed = _seeds(config.seed)
    val_records, train_records = few_shot_split(
        records, SplitSpec(seed=val_seed, adaptation_fraction=config.val_fraction)
    )
    z_train, y_train = _matrix(train_records)
    z_val, y_val = _matrix(val_records)

    head = head_init(config.head_kind, init_seed)
    optimizer = Adam(lr=config.lr)
    shuffle_rng = np.random.default_rng(shuffle_seed)

    epochs: list[EpochStats] = []
    best_val = np.inf
    best_epoch = -1
    best_snapshot = head.snapshot()
    bad_epochs = 0
    stop_reason = StopReason.MAX_EPOCHS
    params = head.parameters()

    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(len(train_records))
        loss_sum = 0.0
        for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_gradients(head, z_train[idx], y_train[idx], train=True)
            if not np.isfinite(loss):
                raise NumericalError("training loss became non-finite", epoch, batch_index)
            optimizer.step(params, grads)
            loss_sum += loss * len(idx)
        train_loss = loss_sum / len(order)

        val_logits = np.atleast_1d(head.forward(z_val, train=False))
        val_loss = float(np.mean(bce_with_logits(val_logits, y_val)))
        if not np.isfinite(val_loss):
            raise NumericalError("validation loss became non-finite", epoch, -1)
        val_pred = (sigmoid(val_logits) >= config.threshold).astype(np.float32)
        val_accuracy = float(np.mean(val_pred == y_val))
        epochs.append(EpochStats(train_loss, val_loss, val_accuracy))

        if val_loss < best_val - config.min_delta:
            best_val = val_loss
            best_epoch = epoch
            best_snapshot = head.snapshot()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                stop_reason = StopReason.EARLY_STOPPED
                break

    head.set_parameters(best_snapshot)
    history = TrainHistory(epochs=epochs, best_epoch=best_epoch, stop_reason=stop_reason)
    trained = TrainedHead(
        head=head,
        kind=config.head_kind,
        threshold=config.threshold,
        config=config,
        dataset_digest=cache_digest(records),
    )
    return trained, history


def run_few_shot(
    records: list[EmbeddingRecord], split: SplitSpec, config: TrainConfig
) -> FewShotResult:
    """Train on the adaptation subset only; evaluate on the held-out rest."""
    adaptation, test = few_shot_split(records, split)
    adapt_ids = [r.id for r in adaptation]
    test_ids = [r.id for r in test]
    overlap = set(adapt_ids) & set(test_ids)
    if overlap:
        raise TrainingError(f"split leaked {len(overlap)} ids into the test set")
    trained, history = train(adaptation, config)
    evaluation = evaluate(trained.head, test, threshold=trained.threshold)
    return FewShotResult(
        trained=trained,
        history=history,
        evaluation=evaluation,
        adaptation_ids=adapt_ids,
        test_ids=test_ids,
    )


# --- artifacts -------------------------------------------------------------------

HISTORY_TSV_HEADER = "epoch\ttrain_loss\tval_loss\tval_acc"


def write_history(history: TrainHistory, json_path: str | Path, tsv_path: str | Path) -> None:
    payload = {
        "best_epoch": history.best_epoch,
        "stop_reason": history.stop_reason.value,
        "epochs": [
            {"train_loss": e.train_loss, "val_loss": e.val_loss,
             "val_accuracy": e.val_accuracy}
            for e in history.epochs
        ],
    }
    Path(json_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
    lines = [HISTORY_TSV_HEADER]
    for i, e in enumerate(history.epochs):
        lines.append(f"{i}\t{e.train_loss!r}\t{e.val_loss!r}\t{e.val_accuracy!r}")
    Path(tsv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_trained_head(trained: TrainedHead, head_path: str | Path) -> None:
    """AHD1 parameters plus a sidecar JSON with threshold and run metadata."""
    save_head(trained.head, head_path)
    meta = {
        "head_kind": trained.kind.value,
        "threshold": trained.threshold,
        "dataset_digest": trained.dataset_digest,
        "config": trained.config.as_dict(),
    }
    _meta_path(head_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")


def load_trained_head(head_path: str | Path) -> tuple[Head, float]:
    """(head, threshold); threshold falls back to 0.5 without a sidecar."""
    head = load_head(head_path)
    meta_path = _meta_path(head_path)
    threshold = 0.5
    if meta_path.exists():
        threshold = float(json.loads(meta_path.read_text())["threshold"])
    return head, threshold


def _meta_path(head_path: str | Path) -> Path:
    p = Path(head_path)
    return p.with_name(p.name + ".meta.json")
