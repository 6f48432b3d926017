"""Seeded gradient checks for each building block, shared by the CLI and tests."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .attention import (
    AttentionGateParams,
    ChannelAttentionParams,
    GlobalContextParams,
    attention_gate,
    channel_attention,
    global_context_attention,
)
from .gradcheck import GradcheckReport, gradcheck
from .model import ModelConfig, build
from .rng import RngState
from .tensor import Tensor

BLOCK_TOL = 1e-4
MODEL_TOL = 1e-3


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar probe <out, weights>; random weights exercise every output element."""
    return ops.sum(ops.mul(out, Tensor(weights)))


def _t(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale)


def check_conv(seed: int) -> GradcheckReport:
    rng = RngState(seed).stream("check")
    inputs = {"x": _t(rng, 2, 3, 6, 6), "weight": _t(rng, 4, 3, 3, 3), "bias": _t(rng, 4)}
    probe = rng.standard_normal((2, 4, 6, 6))
    fn = lambda p: _weighted_sum(ops.conv2d(p["x"], p["weight"], p["bias"], 1, 1), probe)
    return gradcheck(fn, inputs, tol=BLOCK_TOL, seed=seed)


def check_channel(seed: int) -> GradcheckReport:
    rng = RngState(seed).stream("check")
    inputs = {"a": _t(rng, 2, 4, 3, 3, scale=0.5), "beta": Tensor(0.7)}
    probe = rng.standard_normal((2, 4, 3, 3))
    fn = lambda p: _weighted_sum(channel_attention(p["a"], ChannelAttentionParams(p["beta"])), probe)
    return gradcheck(fn, inputs, tol=BLOCK_TOL, seed=seed)


def check_context(seed: int) -> GradcheckReport:
    rng = RngState(seed).stream("check")
    params = GlobalContextParams.init(rng, 8, 2, dtype=np.float64)
    inputs = {"a": _t(rng, 2, 8, 4, 4)}
    # random biases / affine so no coordinate sits at an artificial symmetry point
    for name, t in params.named().items():
        inputs[name] = Tensor(t.data + 0.1 * rng.standard_normal(t.shape))
    probe = rng.standard_normal((2, 8, 4, 4))

    def fn(p):
        gp = GlobalContextParams(**{k: p[k] for k in params.named()})
        return _weighted_sum(global_context_attention(p["a"], gp), probe)

    return gradcheck(fn, inputs, tol=BLOCK_TOL, seed=seed)


def check_gate(seed: int) -> GradcheckReport:
    rng = RngState(seed).stream("check")
    params = AttentionGateParams.init(rng, 4, 8, dtype=np.float64)
    inputs = {"skip": _t(rng, 2, 4, 8, 8), "gate": _t(rng, 2, 8, 4, 4)}
    for name, t in params.named().items():
        inputs[name] = Tensor(t.data + 0.1 * rng.standard_normal(t.shape))
    probe = rng.standard_normal((2, 4, 8, 8))

    def fn(p):
        gp = AttentionGateParams(**{k: p[k] for k in params.named()})
        return _weighted_sum(attention_gate(p["skip"], p["gate"], gp), probe)

    return gradcheck(fn, inputs, tol=BLOCK_TOL, seed=seed)


def model_check_config() -> ModelConfig:
    # Layer norm over two values is +-1 whatever the input, which starves everything
    # upstream of gradient; a 4-wide fused map with ratio 1 keeps it informative.
    return ModelConfig(in_channels=1, base_width=2, depth=1, bottleneck_ratio=1, fused_channels=4)


def check_model(seed: int, samples: int = 3) -> GradcheckReport:
    model = build(model_check_config(), RngState(seed), dtype=np.float64)
    rng = RngState(seed).stream("check")
    inputs = {}
    for name, t in model.params.items():
        # nonzero beta and biases so every branch carries gradient
        inputs[name] = Tensor(t.data + 0.1 * rng.standard_normal(t.shape))
    image = Tensor(rng.uniform(0, 1, size=(2, 1, 8, 8)))
    probe = rng.standard_normal((2, 1, 8, 8))
    fn = lambda p: _weighted_sum(model.forward(image, params=p), probe)
    return gradcheck(fn, inputs, tol=MODEL_TOL, samples=samples, seed=seed)


BLOCKS: dict[str, Callable[[int], GradcheckReport]] = {
    "conv": check_conv,
    "channel": check_channel,
    "context": check_context,
    "gate": check_gate,
    "model": check_model,
}
