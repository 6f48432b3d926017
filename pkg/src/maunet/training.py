"""BCE objective, Adam, and the keep-best training loop."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import ops
from .checkpoint import save_model
from .config import TrainConfig
from .data import SegSample, stack
from .errors import DataError, NumericalError
from .metrics import MetricsReport, binarize
from .model import MAUNet, ParamStore, param_report
from .rng import RngState
from .tensor import Tape, Tensor, backward

__all__ = [
    "TrainConfig",
    "TrainState",
    "EpochRecord",
    "KeepBest",
    "bce_loss",
    "adam_step",
    "evaluate",
    "train",
    "write_log",
]

log = logging.getLogger(__name__)

LOG_HEADER = ("epoch", "loss", "miou", "mdc", "seconds")


def bce_loss(pre: Tensor, gt, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy of probabilities ``pre`` (N,1,H,W) against binary ``gt``.

    ``reduction="sum"`` is the literal double sum over pixels and batch;
    ``"mean"`` divides by N*H*W.  Probabilities are clamped to
    [1e-7, 1 - 1e-7] before the logarithm.
    """
    return ops.binary_cross_entropy(pre, gt, reduction=reduction, clamp=1e-7)


def adam_step(params: ParamStore, grads: Mapping[str, np.ndarray], config: TrainConfig, t: int) -> ParamStore:
    """One bias-corrected Adam update of every entry, moments kept in the store."""
    if t < 1:
        raise ValueError(f"Adam step index starts at 1, got {t}")
    missing = [name for name in params if name not in grads]
    if missing:
        raise KeyError(f"no gradient for parameter(s) {missing}")
    for name, g in grads.items():
        if name in params and not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name!r}")

    lr, b1, b2, eps = config.learning_rate, config.beta1, config.beta2, config.eps
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for entry in params.entries():
        g = grads[entry.name]
        dt = entry.tensor.dtype
        entry.m = (b1 * entry.m + (1.0 - b1) * g).astype(dt)
        entry.v = (b2 * entry.v + (1.0 - b2) * g * g).astype(dt)
        m_hat = entry.m / c1
        v_hat = entry.v / c2
        update = (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(dt)
        params.replace(entry.name, entry.tensor.data - update)
    params.step = t
    return params


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    miou: float
    mdc: float
    seconds: float


@dataclass
class TrainState:
    step: int = 0
    best_metric: float = -math.inf
    best_epoch: int | None = None
    best_checkpoint_path: str | None = None
    checkpoint_writes: list[int] = field(default_factory=list)
    log: list[EpochRecord] = field(default_factory=list)


class KeepBest:
    """Persist only on strict improvement of the monitored metric."""

    def __init__(self, state: TrainState, save: Callable[[], None] | None = None):
        self.state = state
        self.save = save

    def offer(self, epoch: int, metric: float) -> bool:
        if not metric > self.state.best_metric:
            return False
        if self.save is not None:
            self.save()
        self.state.best_metric = metric
        self.state.best_epoch = epoch
        self.state.checkpoint_writes.append(epoch)
        return True


def evaluate(model: MAUNet, samples: Sequence[SegSample], threshold: float = 0.5, batch_size: int = 8) -> MetricsReport:
    """Pooled MIoU and per-sample mean Dice of thresholded predictions."""
    if not samples:
        raise DataError("cannot evaluate an empty sample set")
    images, masks = stack(list(samples), model.dtype)
    pred = binarize(model.predict(images, batch_size), threshold)
    census = param_report(model)
    return MetricsReport.from_masks(
        pred, masks.astype(np.uint8), param_count=census.count, param_mb=census.megabytes
    )


def write_log(path, records: Sequence[EpochRecord]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for r in records:
            writer.writerow([r.epoch, repr(r.loss), repr(r.miou), repr(r.mdc), f"{r.seconds:.3f}"])
    os.replace(tmp, path)


def train_step(model: MAUNet, images: np.ndarray, masks: np.ndarray, config: TrainConfig) -> float:
    """Forward, loss, backward and one Adam update on a single minibatch."""
    params = model.params
    # overflow surfaces as NumericalError from the ops; numpy's own warning is noise
    with Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
        loss = bce_loss(model(Tensor(images)), masks, config.loss_reduction)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss {value} at step {params.step + 1}")
    by_id = backward(tape, loss, wrt=params.values())
    grads = {name: by_id[t.id] for name, t in params.items()}
    adam_step(params, grads, config, params.step + 1)
    return value


def train(
    model: MAUNet,
    samples: Sequence[SegSample],
    config: TrainConfig,
    checkpoint_path=None,
    log_path=None,
    validate: Callable[[MAUNet, int], float] | None = None,
    threshold: float = 0.5,
) -> TrainState:
    """Train with seeded shuffling; checkpoint whenever validation strictly improves.

    ``validate(model, epoch)`` overrides the monitored metric; by default it
    is MDC or MIoU (``config.monitor``) on the ``val`` split, falling back to
    the training split when no validation samples exist.
    """
    config.validate()
    train_set = [s for s in samples if s.split == "train"]
    val_set = [s for s in samples if s.split == "val"]
    if not train_set:
        raise DataError("training split is empty")
    if not val_set:
        log.warning("no validation samples; monitoring the training split")
        val_set = train_set
    images, masks = stack(train_set, model.dtype)
    shuffle = RngState(config.seed).stream("shuffle")

    state = TrainState(step=model.params.step)
    if checkpoint_path is not None:
        state.best_checkpoint_path = str(checkpoint_path)
    keeper = KeepBest(state, None if checkpoint_path is None else lambda: save_model(checkpoint_path, model, config))

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = shuffle.permutation(len(train_set))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            losses.append(train_step(model, images[idx], masks[idx], config))
        state.step = model.params.step

        report = evaluate(model, val_set, threshold)
        metric = validate(model, epoch) if validate is not None else getattr(report, config.monitor)
        saved = keeper.offer(epoch, metric)
        record = EpochRecord(epoch, float(np.mean(losses)), report.miou, report.mdc, time.perf_counter() - start)
        state.log.append(record)
        if log_path is not None:
            write_log(log_path, state.log)
        log.info(
            "epoch %d  loss %.5f  val miou %.4f  mdc %.4f%s",
            epoch, record.loss, record.miou, record.mdc, "  (saved)" if saved else "",
        )
    return state
