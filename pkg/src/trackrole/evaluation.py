"""Confusion matrices, support-weighted metrics and heatmap rendering."""
from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .midi_io import TrackRole

N_CLASSES = len(TrackRole)
METRICS_HEADER = "model,mode,accuracy,precision,recall,f1"
PER_CLASS_HEADER = "role,precision,recall,f1,support"


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[t, p]: examples of true class t predicted as p (canonical role order)."""
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (N_CLASSES, N_CLASSES) or (counts < 0).any():
            raise ValueError(f"confusion counts must be a non-negative {N_CLASSES}x{N_CLASSES} matrix")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    def row_normalized(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        return np.divide(self.counts, rows, out=np.zeros((N_CLASSES, N_CLASSES)), where=rows > 0)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: dict  # TrackRole -> ClassMetrics
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def csv_row(self, model: str, mode: str) -> str:
        return f"{model},{mode},{self.accuracy:.6f},{self.precision:.6f},{self.recall:.6f},{self.f1:.6f}"

    def per_class_csv(self) -> str:
        lines = [PER_CLASS_HEADER]
        for role, m in self.per_class.items():
            lines.append(f"{role.key},{m.precision:.6f},{m.recall:.6f},{m.f1:.6f},{m.support}")
        lines.append(f"macro,{self.macro_precision:.6f},{self.macro_recall:.6f},{self.macro_f1:.6f},"
                     f"{sum(m.support for m in self.per_class.values())}")
        return "\n".join(lines) + "\n"


def confusion(y_true, y_pred) -> ConfusionMatrix:
    y_true = np.asarray([int(y) for y in y_true], dtype=np.int64)
    y_pred = np.asarray([int(y) for y in y_pred], dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} true vs {y_pred.size} predicted labels")
    if y_true.size == 0:
        raise ValueError("confusion of an empty label list")
    if min(y_true.min(), y_pred.min()) < 0 or max(y_true.max(), y_pred.max()) >= N_CLASSES:
        raise ValueError(f"labels must lie in [0, {N_CLASSES})")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts)


def _safe_div(num, den):
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total < 1:
        raise ValueError("metrics of an empty confusion matrix")
    diag = np.diag(cm.counts)
    support = cm.support
    precision = _safe_div(diag, cm.counts.sum(axis=0))
    recall = _safe_div(diag, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    weights = support / cm.total
    per_class = {role: ClassMetrics(float(precision[i]), float(recall[i]), float(f1[i]), int(support[i]))
                 for i, role in enumerate(TrackRole)}
    return MetricsReport(
        accuracy=cm.accuracy,
        precision=float(weights @ precision),
        # support-weighted recall is trace/total; computed that way so the identity is exact
        recall=cm.accuracy,
        f1=float(weights @ f1),
        per_class=per_class,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
    )


def metrics_csv(rows) -> str:
    """rows: iterable of (model, mode, MetricsReport)."""
    return "\n".join([METRICS_HEADER] + [r.csv_row(m, mode) for m, mode, r in rows]) + "\n"


def _cell_color(v: float) -> str:
    # white -> dark blue, monotone in v
    v = min(max(v, 0.0), 1.0)
    r = round(255 - v * (255 - 8))
    g = round(255 - v * (255 - 48))
    b = round(255 - v * (255 - 107))
    return f"#{r:02x}{g:02x}{b:02x}"


def render_confusion_svg(cm: ConfusionMatrix, normalize_rows: bool = True, title: str = "") -> str:
    """Standalone SVG heatmap; rows are true roles, columns predicted roles."""
    values = cm.row_normalized() if normalize_rows else cm.counts.astype(np.float64)
    scale = 1.0 if normalize_rows else max(float(values.max()), 1.0)
    labels = [r.abbrev for r in TrackRole]
    cell, left, top = 56, 80, 70
    size = left + N_CLASSES * cell + 20
    height = top + N_CLASSES * cell + 60
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{height}" '
        f'viewBox="0 0 {size} {height}" font-family="sans-serif" font-size="12">',
        f'<desc>class order: {", ".join(r.key for r in TrackRole)}; rows true, columns predicted; '
        f'{"row-normalized" if normalize_rows else "counts"}</desc>',
    ]
    if title:
        parts.append(f'<text x="{size / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    parts.append(f'<text x="{left + N_CLASSES * cell / 2}" y="{top - 30}" text-anchor="middle">Predicted</text>')
    parts.append(f'<text x="16" y="{top + N_CLASSES * cell / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {top + N_CLASSES * cell / 2})">True</text>')
    for j, lab in enumerate(labels):
        parts.append(f'<text x="{left + j * cell + cell / 2}" y="{top - 8}" text-anchor="middle">{lab}</text>')
    for i, lab in enumerate(labels):
        y = top + i * cell
        parts.append(f'<text x="{left - 8}" y="{y + cell / 2 + 4}" text-anchor="end">{lab}</text>')
        for j in range(N_CLASSES):
            v = values[i, j]
            x = left + j * cell
            shade = v / scale
            text = f"{v:.3f}" if normalize_rows else f"{int(v)}"
            ink = "#ffffff" if shade > 0.5 else "#000000"
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_cell_color(shade)}" '
                         f'stroke="#999999" data-row="{i}" data-col="{j}" data-value="{v:.12g}"/>')
            parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                         f'fill="{ink}">{text}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
