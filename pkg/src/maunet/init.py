"""Parameter initializers."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def kaiming_normal(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float32) -> Tensor:
    """He/Kaiming fan-in normal init for a conv weight shaped (out, in, kh, kw)."""
    fan_in = int(np.prod(shape[1:]))
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.standard_normal(shape) * std, dtype=dtype)


def zeros(shape: tuple[int, ...], dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape), dtype=dtype)


def ones(shape: tuple[int, ...], dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape), dtype=dtype)
