"""Attention blocks: skip-connection gate, channel attention, global context.

Each block is a pure function of (input, params).  Parameter groups are small
dataclasses that know their tensor names, so the model can keep everything in
one flat :class:`~maunet.model.ParamStore` and rebuild the groups on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .init import kaiming_normal, ones, zeros
from .tensor import Tensor


class _ParamGroup:
    """Shared name <-> tensor plumbing for the parameter dataclasses below."""

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self) if isinstance(getattr(self, f.name), Tensor)}

    @classmethod
    def from_mapping(cls, params: Mapping[str, Tensor], prefix: str, **extra):
        kwargs = {f.name: params[f"{prefix}.{f.name}"] for f in fields(cls) if f.name not in extra}
        return cls(**kwargs, **extra)


@dataclass
class ChannelAttentionParams(_ParamGroup):
    beta: Tensor  # 0-d residual scale, starts at exactly 0

    @classmethod
    def init(cls, dtype=np.float32) -> "ChannelAttentionParams":
        return cls(beta=Tensor(0.0, dtype=dtype))


@dataclass
class GlobalContextParams(_ParamGroup):
    w_k: Tensor  # no bias: softmax over positions would cancel it
    w_v1: Tensor
    b_v1: Tensor
    ln_gain: Tensor
    ln_offset: Tensor
    w_v2: Tensor
    b_v2: Tensor

    @property
    def ratio(self) -> int:
        return self.w_v2.shape[0] // self.w_v1.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, ratio: int = 4, dtype=np.float32) -> "GlobalContextParams":
        if ratio < 1 or channels % ratio:
            raise ConfigError(f"bottleneck ratio {ratio} must divide channel count {channels}")
        mid = channels // ratio
        return cls(
            w_k=kaiming_normal(rng, (1, channels, 1, 1), dtype),
            w_v1=kaiming_normal(rng, (mid, channels, 1, 1), dtype),
            b_v1=zeros((mid,), dtype),
            ln_gain=ones((mid, 1, 1), dtype),
            ln_offset=zeros((mid, 1, 1), dtype),
            w_v2=kaiming_normal(rng, (channels, mid, 1, 1), dtype),
            b_v2=zeros((channels,), dtype),
        )


@dataclass
class AttentionGateParams(_ParamGroup):
    w_x: Tensor
    w_g: Tensor
    b_g: Tensor
    psi_w: Tensor
    psi_b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, skip_channels: int, gate_channels: int, dtype=np.float32):
        inter = max(skip_channels // 2, 1)
        return cls(
            w_x=kaiming_normal(rng, (inter, skip_channels, 1, 1), dtype),
            w_g=kaiming_normal(rng, (inter, gate_channels, 1, 1), dtype),
            b_g=zeros((inter,), dtype),
            psi_w=kaiming_normal(rng, (1, inter, 1, 1), dtype),
            psi_b=zeros((1,), dtype),
        )


def channel_attention(a: Tensor, params: ChannelAttentionParams, return_map: bool = False):
    """Reweight channels by a softmax over channel-to-channel inner products.

    Output channel j is ``beta * sum_i x[j, i] * a_i + a_j`` where row j of
    ``x`` is the softmax of ``<a_j, a_i>`` over i.  With ``return_map`` the
    (N, C, C) map ``x`` is returned as well.
    """
    if a.ndim != 4:
        raise DimensionError(f"channel attention expects N,C,H,W input, got {a.shape}")
    if params.beta.ndim != 0:
        raise DimensionError(f"beta must be a 0-d scalar, got shape {params.beta.shape}")
    n, c, h, w = a.shape
    flat = ops.reshape(a, (n, c, h * w))
    gram = ops.matmul(flat, ops.transpose(flat, (0, 2, 1)))
    weights = ops.softmax(gram, axis=-1)
    mixed = ops.reshape(ops.matmul(weights, flat), a.shape)
    out = ops.add(ops.mul(params.beta, mixed), a)
    return (out, weights) if return_map else out


def bottleneck_transform(context: Tensor, params: GlobalContextParams) -> Tensor:
    """1x1 conv down, layer norm, ReLU, 1x1 conv up, on an (N, C, 1, 1) vector."""
    t = ops.conv2d(context, params.w_v1, params.b_v1)
    t = ops.layer_norm(t, (1, 2, 3), params.ln_gain, params.ln_offset)
    t = ops.relu(t)
    return ops.conv2d(t, params.w_v2, params.b_v2)


def global_context_attention(a: Tensor, params: GlobalContextParams, return_weights: bool = False):
    """Add one softmax-pooled, bottleneck-transformed context vector to every position.

    With ``return_weights`` the (N, 1, H*W) spatial pooling weights are
    returned as well.
    """
    if a.ndim != 4:
        raise DimensionError(f"global context expects N,C,H,W input, got {a.shape}")
    n, c, h, w = a.shape
    if params.w_k.shape[1] != c or params.w_v2.shape[0] != c:
        raise DimensionError(f"global context params built for {params.w_k.shape[1]} channels, input has {c}")
    if c % params.w_v1.shape[0]:
        raise ConfigError(f"bottleneck width {params.w_v1.shape[0]} does not divide {c} channels")
    logits = ops.reshape(ops.conv2d(a, params.w_k), (n, 1, h * w))
    weights = ops.softmax(logits, axis=-1)
    flat = ops.reshape(a, (n, c, h * w))
    context = ops.reshape(ops.matmul(flat, ops.transpose(weights, (0, 2, 1))), (n, c, 1, 1))
    delta = bottleneck_transform(context, params)
    out = ops.add(a, ops.expand(delta, a.shape))
    return (out, weights) if return_weights else out


def dual_attention(a: Tensor, channel: ChannelAttentionParams, context: GlobalContextParams) -> Tensor:
    """Run both attention branches on ``a`` and sum them."""
    return ops.add(channel_attention(a, channel), global_context_attention(a, context))


def attention_gate(skip: Tensor, gate: Tensor, params: AttentionGateParams, return_alpha: bool = False):
    """Additive attention gate on a skip feature, driven by a half-resolution gating feature.

    alpha = upsample(sigmoid(psi(relu(w_x(skip)[::2, ::2] + w_g(gate))))),
    output = skip * alpha broadcast over channels.
    """
    if skip.ndim != 4 or gate.ndim != 4:
        raise DimensionError(f"attention gate expects 4-D tensors, got {skip.shape} and {gate.shape}")
    n, cs, h, w = skip.shape
    if gate.shape[0] != n or gate.shape[2] * 2 != h or gate.shape[3] * 2 != w:
        raise DimensionError(
            f"gating signal spatial size {gate.shape[2:]} must be half of skip size {(h, w)} (batch {n})"
        )
    theta = ops.conv2d(ops.subsample2d(skip, 2), params.w_x)
    phi = ops.conv2d(gate, params.w_g, params.b_g)
    q = ops.relu(ops.add(theta, phi))
    alpha_small = ops.sigmoid(ops.conv2d(q, params.psi_w, params.psi_b))
    alpha = ops.bilinear_upsample(alpha_small, h, w)
    out = ops.mul(skip, ops.expand(alpha, skip.shape))
    return (out, alpha) if return_alpha else out
