"""MA-UNet assembly: gated U-Net backbone, multi-scale fusion, dual attention head."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import ops
from .attention import (
    AttentionGateParams,
    ChannelAttentionParams,
    GlobalContextParams,
    attention_gate,
    dual_attention,
)
from .errors import ConfigError, DimensionError, IncompatibilityError, UsageError
from .init import kaiming_normal, zeros
from .rng import RngState
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    base_width: int = 64
    depth: int = 4
    bottleneck_ratio: int = 4
    enable_attention_gates: bool = True
    enable_dual_attention: bool = True
    enable_multiscale: bool = True
    # None means "same as base_width"
    fused_channels: int | None = None

    @property
    def fused_width(self) -> int:
        return self.base_width if self.fused_channels is None else self.fused_channels

    @property
    def head_width(self) -> int:
        """Channels entering the attention head and final 1x1 conv."""
        return self.fused_width if self.enable_multiscale else self.base_width

    @property
    def stage_widths(self) -> list[int]:
        return [self.base_width * 2**s for s in range(self.depth)]

    @property
    def bottleneck_width(self) -> int:
        return self.base_width * 2**self.depth

    def problems(self) -> list[str]:
        out = []
        if self.in_channels < 1:
            out.append(f"in_channels must be >= 1 (got {self.in_channels})")
        if self.base_width < 1:
            out.append(f"base_width must be >= 1 (got {self.base_width})")
        if self.depth < 1:
            out.append(f"depth must be >= 1 (got {self.depth})")
        if self.fused_channels is not None and self.fused_channels < 1:
            out.append(f"fused_channels must be >= 1 (got {self.fused_channels})")
        if self.bottleneck_ratio < 1:
            out.append(f"bottleneck_ratio must be >= 1 (got {self.bottleneck_ratio})")
        elif self.enable_dual_attention and self.head_width % self.bottleneck_ratio:
            out.append(f"bottleneck_ratio {self.bottleneck_ratio} must divide attention width {self.head_width}")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError("invalid ModelConfig: " + "; ".join(problems))

    def plain(self) -> "ModelConfig":
        """Same widths with every MA-UNet addition switched off."""
        return replace(self, enable_attention_gates=False, enable_dual_attention=False, enable_multiscale=False)


@dataclass
class ParamEntry:
    name: str
    tensor: Tensor
    m: np.ndarray
    v: np.ndarray


class ParamStore(Mapping[str, Tensor]):
    """Ordered name -> tensor map with Adam moment slots per entry."""

    def __init__(self) -> None:
        self._entries: dict[str, ParamEntry] = {}
        self.step = 0

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._entries:
            raise UsageError(f"duplicate parameter name {name!r}")
        tensor.name = name
        tensor.requires_grad = True
        self._entries[name] = ParamEntry(name, tensor, np.zeros_like(tensor.data), np.zeros_like(tensor.data))
        return tensor

    def add_group(self, prefix: str, named: Mapping[str, Tensor]) -> None:
        for suffix, t in named.items():
            self.add(f"{prefix}.{suffix}", t)

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, name: str) -> ParamEntry:
        return self._entries[name]

    def entries(self) -> Iterator[ParamEntry]:
        return iter(self._entries.values())

    def replace(self, name: str, data: np.ndarray) -> None:
        """Swap in new values for ``name``; tensors themselves stay immutable."""
        entry = self._entries[name]
        entry.tensor = Tensor(data, dtype=entry.tensor.dtype, requires_grad=True, name=name)

    def count(self) -> int:
        return int(sum(e.tensor.size for e in self._entries.values()))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: e.tensor.data for name, e in self._entries.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite every parameter; names and shapes must match exactly."""
        missing = [n for n in self._entries if n not in arrays]
        extra = [n for n in arrays if n not in self._entries]
        if missing or extra:
            raise IncompatibilityError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, arr in arrays.items():
            cur = self._entries[name].tensor
            if arr.shape != cur.shape:
                raise IncompatibilityError(f"tensor {name!r}: stored shape {arr.shape}, model expects {cur.shape}")
        for name, arr in arrays.items():
            self.replace(name, arr)


def _conv(params: Mapping[str, Tensor], prefix: str, x: Tensor, padding: int = 1) -> Tensor:
    return ops.conv2d(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], 1, padding)


def _add_conv(store: ParamStore, rng, prefix: str, cin: int, cout: int, k: int, dtype) -> None:
    store.add(f"{prefix}.weight", kaiming_normal(rng, (cout, cin, k, k), dtype))
    store.add(f"{prefix}.bias", zeros((cout,), dtype))


def _double_conv(params: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    x = ops.relu(_conv(params, f"{prefix}.conv1", x))
    return ops.relu(_conv(params, f"{prefix}.conv2", x))


def multi_scale_fuse(inputs: Sequence[Tensor], weight: Tensor, bias: Tensor) -> Tensor:
    """Upsample every scale to the finest one, concatenate channels, 3x3 conv + ReLU.

    ``inputs`` run coarse to fine; the last entry sets the output resolution.
    """
    if not inputs:
        raise UsageError("multi_scale_fuse needs at least one feature map")
    sizes = [t.shape[2:] for t in inputs]
    for a, b in zip(sizes, sizes[1:]):
        if not (b[0] > a[0] and b[1] > a[1]):
            raise DimensionError(f"scales must grow strictly coarse to fine, got {sizes}")
    out_h, out_w = sizes[-1]
    ups = [t if t.shape[2:] == (out_h, out_w) else ops.bilinear_upsample(t, out_h, out_w) for t in inputs]
    stacked = ops.concat(ups, axis=1)
    return ops.relu(ops.conv2d(stacked, weight, bias, 1, 1))


class MAUNet:
    """A built network: config + parameters + forward pass."""

    def __init__(self, config: ModelConfig, params: ParamStore, dtype=np.float32):
        self.config = config
        self.params = params
        self.dtype = np.dtype(dtype)

    def check_input(self, image: Tensor) -> None:
        cfg = self.config
        if image.ndim != 4 or image.shape[1] != cfg.in_channels:
            raise DimensionError(f"expected input (N,{cfg.in_channels},H,W), got {image.shape}")
        if image.dtype != self.dtype:
            raise DimensionError(f"input dtype {image.dtype} != model dtype {self.dtype}")
        step = 2**cfg.depth
        h, w = image.shape[2:]
        if h % step or w % step:
            raise ConfigError(f"spatial size {h}x{w} is not divisible by 2^depth = {step}")

    def forward(self, image: Tensor, params: Mapping[str, Tensor] | None = None) -> Tensor:
        """Probability map (N,1,H,W).  ``params`` overrides the stored tensors by name."""
        self.check_input(image)
        cfg = self.config
        p = self.params if params is None else params

        x = image
        skips = []
        for s in range(cfg.depth):
            x = _double_conv(p, f"enc{s}", x)
            skips.append(x)
            x = ops.max_pool2d(x, 2, 2)
        x = _double_conv(p, "bottleneck", x)

        stages = []
        for s in reversed(range(cfg.depth)):
            h, w = skips[s].shape[2:]
            up = ops.relu(_conv(p, f"dec{s}.up", ops.bilinear_upsample(x, h, w)))
            skip = skips[s]
            if cfg.enable_attention_gates:
                skip = attention_gate(skip, x, AttentionGateParams.from_mapping(p, f"dec{s}.gate"))
            x = ops.relu(_conv(p, f"dec{s}.conv", ops.concat([skip, up], axis=1)))
            stages.append(x)

        if cfg.enable_multiscale:
            feat = multi_scale_fuse(stages, p["fuse.weight"], p["fuse.bias"])
        else:
            feat = stages[-1]
        if cfg.enable_dual_attention:
            feat = dual_attention(
                feat,
                ChannelAttentionParams.from_mapping(p, "dual.channel"),
                GlobalContextParams.from_mapping(p, "dual.context"),
            )
        return ops.sigmoid(_conv(p, "head", feat, padding=0))

    __call__ = forward

    def predict(self, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
        """Probabilities for an (N,C,H,W) array, evaluated without a tape."""
        images = np.asarray(images, dtype=self.dtype)
        outs = [self.forward(Tensor(images[i : i + batch_size])).data for i in range(0, len(images), batch_size)]
        return np.concatenate(outs, axis=0)


def build(config: ModelConfig, rng: RngState, dtype=np.float32) -> MAUNet:
    """Create parameters for ``config`` in a fixed order from the ``init`` stream."""
    config.validate()
    g = rng.stream("init")
    store = ParamStore()
    widths = config.stage_widths

    cin = config.in_channels
    for s, w in enumerate(widths):
        _add_conv(store, g, f"enc{s}.conv1", cin, w, 3, dtype)
        _add_conv(store, g, f"enc{s}.conv2", w, w, 3, dtype)
        cin = w
    _add_conv(store, g, "bottleneck.conv1", cin, config.bottleneck_width, 3, dtype)
    _add_conv(store, g, "bottleneck.conv2", config.bottleneck_width, config.bottleneck_width, 3, dtype)

    for s in reversed(range(config.depth)):
        w = widths[s]
        _add_conv(store, g, f"dec{s}.up", 2 * w, w, 3, dtype)
        if config.enable_attention_gates:
            store.add_group(f"dec{s}.gate", AttentionGateParams.init(g, w, 2 * w, dtype).named())
        _add_conv(store, g, f"dec{s}.conv", 2 * w, w, 3, dtype)

    if config.enable_multiscale:
        _add_conv(store, g, "fuse", sum(widths), config.fused_width, 3, dtype)
    if config.enable_dual_attention:
        store.add_group("dual.channel", ChannelAttentionParams.init(dtype).named())
        store.add_group(
            "dual.context", GlobalContextParams.init(g, config.head_width, config.bottleneck_ratio, dtype).named()
        )
    _add_conv(store, g, "head", config.head_width, 1, 1, dtype)
    return MAUNet(config, store, dtype)


@dataclass
class ParamReport:
    count: int
    megabytes: float
    per_block: dict[str, int] = field(default_factory=dict)

    def lines(self) -> list[str]:
        rows = [f"{name:<24} {n:>10d}" for name, n in self.per_block.items()]
        rows.append(f"{'total':<24} {self.count:>10d}  ({self.megabytes:.4f} MB at 4 bytes/value)")
        return rows


def param_bytes_to_mb(count: int) -> float:
    return 4 * count / 2**20


def param_report(model: MAUNet) -> ParamReport:
    per_block: dict[str, int] = {}
    for name, t in model.params.items():
        block = name.rsplit(".", 1)[0]
        per_block[block] = per_block.get(block, 0) + t.size
    count = model.params.count()
    return ParamReport(count, param_bytes_to_mb(count), per_block)
