"""Binary segmentation metrics: confusion counts, mean IoU, mean Dice."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .tensor import Tensor


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def binarize(prob, threshold: float = 0.5) -> np.ndarray:
    """1 where ``prob >= threshold``, else 0, as uint8."""
    if not 0.0 < threshold < 1.0:
        raise DataError(f"threshold must lie in (0, 1), got {threshold}")
    return (_array(prob) >= threshold).astype(np.uint8)


def _masks(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _array(pred), _array(gt)
    if p.shape != g.shape:
        raise DataError(f"prediction shape {p.shape} != ground-truth shape {g.shape}")
    for name, m in (("prediction", p), ("ground truth", g)):
        if not np.isin(m, (0, 1)).all():
            raise DataError(f"{name} mask must be binary")
    return p.astype(np.int64), g.astype(np.int64)


def confusion_matrix(pred, gt, num_classes: int = 2) -> np.ndarray:
    """``cm[i, j]`` = pixels of true class i predicted as class j, pooled over all inputs."""
    p, g = _masks(pred, gt)
    counts = np.bincount((g * num_classes + p).ravel(), minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def per_class_iou(cm: np.ndarray) -> list[float | None]:
    """IoU for each class; None for a class absent from both prediction and truth."""
    out: list[float | None] = []
    for c in range(cm.shape[0]):
        inter = int(cm[c, c])
        union = int(cm[c, :].sum()) + int(cm[:, c].sum()) - inter
        out.append(None if union == 0 else inter / union)
    return out


def miou(pred, gt) -> float:
    """Mean IoU over classes present in prediction or truth, from pooled counts."""
    present = [v for v in per_class_iou(confusion_matrix(pred, gt)) if v is not None]
    return sum(present) / len(present)


def dice_scores(pred, gt, smooth: float = 1e-6) -> list[float]:
    """Per-sample Dice; the first axis indexes samples."""
    p, g = _masks(pred, gt)
    if p.ndim == 0:
        raise DataError("mask set needs a sample axis")
    scores = []
    for pi, gi in zip(p, g):
        inter = int(np.count_nonzero(pi & gi))
        total = int(np.count_nonzero(pi)) + int(np.count_nonzero(gi))
        scores.append((2 * inter + smooth) / (total + smooth))
    return scores


def mean_dice(pred, gt, smooth: float = 1e-6) -> float:
    scores = dice_scores(pred, gt, smooth)
    return sum(scores) / len(scores)


@dataclass
class MetricsReport:
    miou: float
    mdc: float
    per_class_iou: list[float | None]
    n_samples: int
    param_count: int | None = None
    param_mb: float | None = None
    extra: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_masks(cls, pred, gt, **kwargs) -> "MetricsReport":
        cm = confusion_matrix(pred, gt)
        return cls(
            miou=miou(pred, gt),
            mdc=mean_dice(pred, gt),
            per_class_iou=per_class_iou(cm),
            n_samples=len(_array(gt)),
            **kwargs,
        )

    def rows(self) -> list[tuple[str, str]]:
        rows = [("miou", repr(self.miou)), ("mdc", repr(self.mdc)), ("n_samples", str(self.n_samples))]
        for c, v in enumerate(self.per_class_iou):
            rows.append((f"iou_class{c}", "" if v is None else repr(v)))
        if self.param_count is not None:
            rows.append(("param_count", str(self.param_count)))
        if self.param_mb is not None:
            rows.append(("param_mb", repr(self.param_mb)))
        rows.extend((k, repr(v)) for k, v in self.extra.items())
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerows(self.rows())
        return buf.getvalue()

    def __str__(self) -> str:
        text = f"MIoU {self.miou:.4f}  MDC {self.mdc:.4f}  over {self.n_samples} sample(s)"
        if self.param_count is not None:
            text += f"  params {self.param_count} ({self.param_mb:.4f} MB)"
        return text
