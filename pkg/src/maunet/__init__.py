"""MA-UNet: attention-gated U-Net with dual attention and multi-scale fusion, on numpy."""

from .attention import (
    AttentionGateParams,
    ChannelAttentionParams,
    GlobalContextParams,
    attention_gate,
    channel_attention,
    dual_attention,
    global_context_attention,
)
from .config import TrainConfig
from .model import MAUNet, ModelConfig, ParamStore, build, multi_scale_fuse, param_report
from .rng import RngState
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"
