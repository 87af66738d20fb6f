"""Soft-threshold factorized attention and a three-level encoder, with verification tooling."""

from .attention import (
    AttentionParams,
    ShrinkageParams,
    ThresholdVector,
    TokenSequence,
    compute_thresholds,
    factor_att,
    flop_count,
    project_qkv,
    softmax_attention,
    st_attention,
)
from .encoder import EncoderConfig, EncoderParams, FeatureMap, encoder_forward, init_encoder_params, synth_features
from .tensor import LinearParams, Tensor, grad_check, tensor, vjp

__version__ = "0.1.0"
