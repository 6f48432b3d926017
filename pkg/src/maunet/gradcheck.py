"""Central finite-difference checks against :func:`maunet.tensor.backward`."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import NumericalError, UsageError
from .rng import RngState
from .tensor import Tape, Tensor, backward


@dataclass
class Coordinate:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.analytic), abs(self.numeric), 1e-8)
        return abs(self.analytic - self.numeric) / denom


@dataclass
class GradcheckReport:
    tol: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: list[Coordinate] = field(default_factory=list)
    skipped: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def worst_coordinates(self, k: int = 5) -> list[Coordinate]:
        return sorted(self.checked, key=lambda c: c.rel_error, reverse=True)[:k]

    def raise_if_failed(self) -> None:
        if not self.passed:
            raise NumericalError(str(self))

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"gradcheck {status}: max rel error {self.worst:.3e} (tol {self.tol:.1e}), "
                 f"{len(self.checked)} coordinates, {self.skipped} skipped near kinks"]
        if not self.passed:
            for c in self.worst_coordinates():
                lines.append(f"  {c.name}{list(c.index)}: analytic {c.analytic:.6e} numeric {c.numeric:.6e} "
                             f"rel {c.rel_error:.3e}")
        return "\n".join(lines)


def _run(fn, inputs: dict[str, Tensor]) -> tuple[float, list[np.ndarray]]:
    with Tape() as tape:
        out = fn(inputs)
    return float(out.data), tape.signatures()


def _same_branches(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(
    fn: Callable[[Mapping[str, Tensor]], Tensor],
    inputs: Mapping[str, Tensor],
    h: float = 1e-4,
    tol: float = 1e-4,
    samples: int = 8,
    seed: int = 0,
) -> GradcheckReport:
    """Compare analytic gradients of ``fn(inputs)`` with central differences.

    ``fn`` maps a name->Tensor dict to a scalar Tensor.  For every input, up to
    ``samples`` coordinates are drawn from a seeded stream.  A coordinate is
    skipped when the perturbed evaluations take a different branch of any
    piecewise op than the unperturbed one, since the finite difference there
    straddles a kink.
    """
    inputs = dict(inputs)
    for name, t in inputs.items():
        if t.dtype != np.float64:
            raise UsageError(f"gradcheck input {name!r} must be float64, got {t.dtype}")

    leaves = {name: Tensor(t.data, requires_grad=True, name=name) for name, t in inputs.items()}
    with Tape() as tape:
        out = fn(leaves)
    if out.size != 1:
        raise UsageError(f"gradcheck function must return a scalar, got shape {out.shape}")
    grads = backward(tape, out, wrt=leaves.values())
    base_sig = tape.signatures()

    rng = RngState(seed).stream("check")
    report = GradcheckReport(tol=tol)
    for name, leaf in leaves.items():
        analytic = grads[leaf.id]
        order = rng.permutation(leaf.size)
        worst = 0.0
        taken = 0
        for flat in order:
            if taken == samples:
                break
            idx = np.unravel_index(int(flat), leaf.shape)
            values = []
            crossed = False
            for sign in (1.0, -1.0):
                arr = leaf.data.copy()
                arr[idx] += sign * h
                trial = dict(leaves)
                trial[name] = Tensor(arr, requires_grad=True)
                val, sig = _run(fn, trial)
                if not _same_branches(sig, base_sig):
                    crossed = True
                    break
                values.append(val)
            if crossed:
                report.skipped += 1
                continue
            numeric = (values[0] - values[1]) / (2 * h)
            coord = Coordinate(name, tuple(int(i) for i in idx), float(analytic[idx]), numeric)
            report.checked.append(coord)
            worst = max(worst, coord.rel_error)
            taken += 1
        report.max_rel_error[name] = worst
    return report
