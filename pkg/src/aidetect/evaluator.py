"""Metrics, confusion matrices, per-category breakdowns, misclassification reports.

Fake is the positive class throughout; undefined precision/recall are reported
as 0.0 with an explicit flag so downstream tables stay numeric.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AidetectError
from .labels import Label

UNTAGGED = "untagged"


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_undefined: bool = False
    recall_undefined: bool = False

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "flags": {
                "precision_undefined": self.precision_undefined,
                "recall_undefined": self.recall_undefined,
            },
            "positive_class": "fake",
        }


@dataclass
class MisclassificationEntry:
    id: str
    true_label: Label
    predicted: Label
    probability: float
    category: str = ""


@dataclass
class EvalResult:
    metrics: Metrics
    confusion: ConfusionMatrix
    misclassified: list[MisclassificationEntry] = field(default_factory=list)


def confusion(pairs: list[tuple[Label, Label]]) -> ConfusionMatrix:
    """Count (true, predicted) pairs; Fake is positive."""
    if not pairs:
        raise AidetectError("cannot build a confusion matrix from no predictions")
    cm = ConfusionMatrix()
    for true_label, predicted in pairs:
        if predicted is Label.FAKE:
            if true_label is Label.FAKE:
                cm.tp += 1
            else:
                cm.fp += 1
        else:
            if true_label is Label.REAL:
                cm.tn += 1
            else:
                cm.fn += 1
    return cm


def metrics_from(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise AidetectError("cannot compute metrics over zero predictions")
    accuracy = (cm.tp + cm.tn) / cm.total
    precision_undefined = cm.tp + cm.fp == 0
    recall_undefined = cm.tp + cm.fn == 0
    precision = 0.0 if precision_undefined else cm.tp / (cm.tp + cm.fp)
    recall = 0.0 if recall_undefined else cm.tp / (cm.tp + cm.fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return Metrics(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        precision_undefined=precision_undefined,
        recall_undefined=recall_undefined,
    )


def evaluate(head, records, threshold: float = 0.5) -> EvalResult:
    """Eval-mode predictions over records; misclassifications sorted by the
    confidence of the wrong answer, descending."""
    from .nn import sigmoid  # local to keep evaluator import-light

    if not records:
        raise AidetectError("cannot evaluate on an empty record list")
    z = np.stack([r.vector for r in records])
    logits = np.atleast_1d(head.forward(z, train=False))
    probs = sigmoid(logits)
    pairs: list[tuple[Label, Label]] = []
    wrong: list[MisclassificationEntry] = []
    for rec, p in zip(records, probs):
        predicted = Label.FAKE if p >= threshold else Label.REAL
        pairs.append((rec.label, predicted))
        if predicted is not rec.label:
            wrong.append(
                MisclassificationEntry(
                    id=rec.id,
                    true_label=rec.label,
                    predicted=predicted,
                    probability=float(p),
                    category=rec.category,
                )
            )
    wrong.sort(key=lambda e: (-_wrong_confidence(e), e.id))
    cm = confusion(pairs)
    return EvalResult(metrics=metrics_from(cm), confusion=cm, misclassified=wrong)


def _wrong_confidence(entry: MisclassificationEntry) -> float:
    return entry.probability if entry.predicted is Label.FAKE else 1.0 - entry.probability


def category_breakdown(
    predictions: list[tuple[Label, Label, str]],
) -> dict[str, tuple[Metrics, int]]:
    """Per-category metrics plus an "overall" row; empty tags group as untagged."""
    groups: dict[str, list[tuple[Label, Label]]] = {}
    for true_label, predicted, category in predictions:
        groups.setdefault(category or UNTAGGED, []).append((true_label, predicted))
    table = {
        name: (metrics_from(confusion(pairs)), len(pairs))
        for name, pairs in sorted(groups.items())
    }
    all_pairs = [(t, p) for t, p, _ in predictions]
    table["overall"] = (metrics_from(confusion(all_pairs)), len(all_pairs))
    return table


# --- report files ----------------------------------------------------------------


def write_metrics_json(metrics: Metrics, path: str | Path) -> None:
    Path(path).write_text(json.dumps(metrics.as_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def write_misclassification_csv(
    entries: list[MisclassificationEntry], path: str | Path
) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "true", "predicted", "probability", "category"])
        for e in entries:
            writer.writerow(
                [e.id, str(e.true_label), str(e.predicted), repr(e.probability), e.category]
            )


def write_category_tsv(table: dict[str, tuple[Metrics, int]], path: str | Path) -> None:
    lines = ["category\tcount\taccuracy\tprecision\trecall\tf1"]
    for name, (m, count) in table.items():
        lines.append(
            f"{name}\t{count}\t{m.accuracy!r}\t{m.precision!r}\t{m.recall!r}\t{m.f1!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
