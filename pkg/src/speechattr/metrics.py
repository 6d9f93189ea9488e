"""Evaluation metrics and report rendering.

Regression error is the mean absolute deviation in years; classification is
scored with accuracy and macro-averaged F1 over a confusion matrix. Reports
mirror the experiment tables: one section per test dataset, one row per
(model, train split), best values bolded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class PredictionSet:
    y: np.ndarray
    y_hat: np.ndarray
    attribute: str
    kind: str  # "regression" | "classification"

    def __post_init__(self):
        y = np.asarray(self.y)
        y_hat = np.asarray(self.y_hat)
        if y.shape != y_hat.shape or y.ndim != 1:
            raise ValueError("y and y_hat must be 1-D arrays of equal length")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_hat", y_hat)

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class EvalResult:
    features_tag: str
    model: str
    train_split: str  # dataset id or "All"
    test_split: str
    attribute: str
    metric: str  # "mae" | "accuracy" | "f1"
    value: float

    def __post_init__(self):
        if self.metric == "mae" and self.attribute != "age":
            raise ValueError("mae applies only to age")
        if self.metric in ("accuracy", "f1") and self.attribute == "age":
            raise ValueError(f"{self.metric} applies only to categorical attributes")


def _require_nonempty(preds: PredictionSet):
    if preds.n == 0:
        raise ValueError("metric undefined on an empty prediction set")


def mae(preds: PredictionSet) -> float:
    """Mean absolute error in the target's units (years for age)."""
    if preds.kind != "regression":
        raise ValueError("mae requires regression predictions")
    _require_nonempty(preds)
    return float(np.mean(np.abs(preds.y.astype(float) - preds.y_hat.astype(float))))


def accuracy(preds: PredictionSet) -> float:
    if preds.kind != "classification":
        raise ValueError("accuracy requires classification predictions")
    _require_nonempty(preds)
    return float(np.mean(preds.y == preds.y_hat))


def confusion(preds: PredictionSet, num_classes: int) -> np.ndarray:
    """num_classes x num_classes counts; rows are true, columns predicted."""
    _require_nonempty(preds)
    y = preds.y.astype(int)
    y_hat = preds.y_hat.astype(int)
    if (y < 0).any() or (y >= num_classes).any() or (y_hat < 0).any() or (y_hat >= num_classes).any():
        raise ValueError(f"class index out of range [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, y_hat), 1)
    return cm


def macro_f1(preds: PredictionSet, num_classes: int) -> float:
    """Unweighted mean of per-class F1.

    Classes with zero support and zero predictions are excluded from the
    mean; a class that appears (in truth or predictions) but has P+R=0
    contributes 0.
    """
    if preds.kind != "classification":
        raise ValueError("macro_f1 requires classification predictions")
    cm = confusion(preds, num_classes)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    f1s = []
    for k in range(num_classes):
        if support[k] == 0 and predicted[k] == 0:
            continue
        tp = cm[k, k]
        precision = tp / predicted[k] if predicted[k] > 0 else 0.0
        recall = tp / support[k] if support[k] > 0 else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0)
    if not f1s:
        raise ValueError("no class has any support or predictions")
    return float(np.mean(f1s))


# --- reports ---------------------------------------------------------------

REPORT_CSV_HEADER = "features,model,train,test,attribute,metric,value"

_METRIC_ORDER = {"mae": 0, "accuracy": 1, "f1": 2}
_ATTR_ORDER = {"age": 0, "gender": 1, "native_language": 2, "country": 3, "education": 4}


def _format_value(metric: str, value: float) -> str:
    # Percent-style metrics are reported on a 0-100 scale, 2 decimals.
    if metric in ("accuracy", "f1"):
        return f"{100 * value:.2f}"
    return f"{value:.2f}"


def _sorted_results(results: Sequence[EvalResult]) -> list[EvalResult]:
    return sorted(
        results,
        key=lambda r: (
            r.test_split,
            r.model,
            r.train_split,
            _ATTR_ORDER.get(r.attribute, 99),
            _METRIC_ORDER.get(r.metric, 99),
        ),
    )


def render_report(results: Sequence[EvalResult], layout: str = "csv") -> str:
    if layout == "csv":
        lines = [REPORT_CSV_HEADER]
        for r in _sorted_results(results):
            lines.append(
                f"{r.features_tag},{r.model},{r.train_split},{r.test_split},"
                f"{r.attribute},{r.metric},{_format_value(r.metric, r.value)}"
            )
        return "\n".join(lines) + "\n"
    if layout == "markdown":
        return _render_markdown(results)
    raise ValueError(f"unknown report layout {layout!r}")


def _better(metric: str, a: float, b: float) -> bool:
    return a < b if metric == "mae" else a > b


def _render_markdown(results: Sequence[EvalResult]) -> str:
    results = _sorted_results(results)
    columns: list[tuple[str, str]] = []
    for r in results:
        if (r.attribute, r.metric) not in columns:
            columns.append((r.attribute, r.metric))
    columns.sort(key=lambda c: (_ATTR_ORDER.get(c[0], 99), _METRIC_ORDER.get(c[1], 99)))
    by_test: dict[str, list[EvalResult]] = {}
    for r in results:
        by_test.setdefault(r.test_split, []).append(r)
    out = []
    for test_split in sorted(by_test):
        section = by_test[test_split]
        rows: dict[tuple[str, str, str], dict[tuple[str, str], float]] = {}
        for r in section:
            rows.setdefault((r.features_tag, r.model, r.train_split), {})[(r.attribute, r.metric)] = r.value
        best: dict[tuple[str, str], float] = {}
        for values in rows.values():
            for col, v in values.items():
                if col not in best or _better(col[1], v, best[col]):
                    best[col] = v
        header = ["Features", "Model", "Train"] + [
            f"{attr} {metric}" for attr, metric in columns
        ]
        out.append(f"## Test: {test_split}")
        out.append("")
        out.append("| " + " | ".join(header) + " |")
        out.append("|" + "---|" * len(header))
        for (features, model, train), values in rows.items():
            cells = [features, model, train]
            for col in columns:
                if col not in values:
                    cells.append("-")
                    continue
                text = _format_value(col[1], values[col])
                if values[col] == best[col]:
                    text = f"**{text}**"
                cells.append(text)
            out.append("| " + " | ".join(cells) + " |")
        out.append("")
    return "\n".join(out) + "\n" if out else ""
