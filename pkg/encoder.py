# encoder.py
"""Transformer encoder over covariate tokens.

Each covariate is one token: ``x_j * value_emb[j] + feature_emb[j]``, so the
sequence length is d and attention weights form a feature-by-feature map.
Attention never mixes units of a batch.

Parameter keys::

    enc.value_emb, enc.feature_emb, enc.cls (cls pooling only)
    enc.block{i}.wq / .wk / .wv / .wo / .bo
    enc.block{i}.ln1.gain / .shift, enc.block{i}.ff.l{k}.w / .b, enc.block{i}.ln2.*
    enc.mlp.l{k}.w / .b (dense replacement used by the no_transformer ablation)
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from errors import ConfigError, DimensionError, NumericError
from numeric_core import (DEFAULT_DTYPE, Param, as_tensor, concat, dense, dense_stack, glorot_uniform,
                          init_dense_stack, layer_norm, lift, matmul, parameter_count, reshape,
                          softmax_rows, transpose)

logger = logging.getLogger(__name__)

POOLINGS = ('mean', 'cls')


@dataclass(frozen=True)
class EncoderConfig:
    n_blocks: int = 2
    n_heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    pooling: str = 'mean'

    def __post_init__(self):
        if self.n_blocks < 0:
            raise ConfigError(f"n_blocks must be >= 0, got {self.n_blocks}")
        for name in ('n_heads', 'd_model', 'd_ff'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}, got '{self.pooling}'")

    @property
    def d_k(self):
        return self.d_model // self.n_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: data[k] for k in ('n_blocks', 'n_heads', 'd_model', 'd_ff', 'pooling') if k in data})


def _ones(n, dtype):
    return np.ones(n, dtype=dtype)


def init_encoder_params(rng, d, config: EncoderConfig, dtype=DEFAULT_DTYPE) -> Dict[str, Param]:
    """Glorot-initialized transformer parameters for d covariates."""
    m = config.d_model
    params = {
        'enc.value_emb': Param(glorot_uniform(rng, d, m, dtype=dtype), 'enc.value_emb'),
        'enc.feature_emb': Param(glorot_uniform(rng, d, m, dtype=dtype), 'enc.feature_emb'),
    }
    if config.pooling == 'cls':
        params['enc.cls'] = Param(glorot_uniform(rng, 1, m, dtype=dtype), 'enc.cls')
    for i in range(config.n_blocks):
        prefix = f"enc.block{i}"
        for name in ('wq', 'wk', 'wv', 'wo'):
            params[f"{prefix}.{name}"] = Param(glorot_uniform(rng, m, m, dtype=dtype), f"{prefix}.{name}")
        params[f"{prefix}.bo"] = Param(np.zeros(m, dtype=dtype), f"{prefix}.bo")
        for ln in ('ln1', 'ln2'):
            params[f"{prefix}.{ln}.gain"] = Param(_ones(m, dtype), f"{prefix}.{ln}.gain")
            params[f"{prefix}.{ln}.shift"] = Param(np.zeros(m, dtype=dtype), f"{prefix}.{ln}.shift")
        params.update(init_dense_stack(rng, f"{prefix}.ff", [m, config.d_ff, m], dtype=dtype))
    logger.debug(f"Initialized transformer encoder: d={d}, {config}, {parameter_count(params)} parameters")
    return params


def dense_encoder_width(d, config: EncoderConfig, target_count):
    """Hidden width h for a d -> h -> d_model stack holding about ``target_count`` parameters."""
    return max(1, int(round((target_count - config.d_model) / (d + 1 + config.d_model))))


def init_dense_encoder_params(rng, d, config: EncoderConfig, target_count=None, dtype=DEFAULT_DTYPE):
    """Dense d -> h -> d_model replacement whose size matches the transformer's."""
    if target_count is None:
        target_count = parameter_count(init_encoder_params(np.random.default_rng(0), d, config, dtype))
    hidden = dense_encoder_width(d, config, target_count)
    params = init_dense_stack(rng, 'enc.mlp', [d, hidden, config.d_model], dtype=dtype)
    logger.debug(f"Initialized dense encoder: hidden={hidden}, {parameter_count(params)} parameters "
                 f"(target {target_count})")
    return params


def is_dense_encoder(params):
    return 'enc.mlp.l0.w' in params


# --- forward ---

def tokenize(x, params, config: EncoderConfig):
    """Covariates (d,) or (n, d) to tokens (s, d_model) or (n, s, d_model), s = d (+1 with cls)."""
    x = as_tensor(x)
    value_emb = params['enc.value_emb']
    if x.ndim not in (1, 2) or x.shape[-1] != value_emb.shape[0]:
        raise DimensionError(f"tokenize: covariates {x.shape} do not match embeddings {value_emb.shape}")
    tokens = lift(x, value_emb) + params['enc.feature_emb']
    if config.pooling == 'cls':
        lead = tokens.shape[:-2]
        cls = as_tensor(np.zeros(lead + (1, config.d_model), dtype=tokens.data.dtype)) + params['enc.cls']
        tokens = concat([cls, tokens], axis=tokens.ndim - 2)
    return tokens


def _swap_last(t):
    axes = tuple(range(t.ndim - 2)) + (t.ndim - 1, t.ndim - 2)
    return transpose(t, axes)


def attention(q, k, v, return_weights=False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if (q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]
            or q.shape[:-2] != k.shape[:-2] or k.shape[:-2] != v.shape[:-2]):
        raise DimensionError(f"attention: incompatible shapes Q{q.shape}, K{k.shape}, V{v.shape}")
    d_k = q.shape[-1]
    if d_k < 1:
        raise DimensionError("attention: d_k must be positive")
    weights = softmax_rows(matmul(q, _swap_last(k)) * (1.0 / math.sqrt(d_k)))
    out = matmul(weights, v)
    if return_weights:
        return out, weights.data
    return out


def _split_heads(t, n_heads):
    lead, s, m = t.shape[:-2], t.shape[-2], t.shape[-1]
    L = len(lead)
    t = reshape(t, lead + (s, n_heads, m // n_heads))
    return transpose(t, tuple(range(L)) + (L + 1, L, L + 2))


def _merge_heads(t):
    lead, h, s, dk = t.shape[:-3], t.shape[-3], t.shape[-2], t.shape[-1]
    L = len(lead)
    t = transpose(t, tuple(range(L)) + (L + 1, L, L + 2))
    return reshape(t, lead + (s, h * dk))


def multi_head_attention(tokens, params, prefix, config: EncoderConfig, return_weights=False):
    q = _split_heads(matmul(tokens, params[f"{prefix}.wq"]), config.n_heads)
    k = _split_heads(matmul(tokens, params[f"{prefix}.wk"]), config.n_heads)
    v = _split_heads(matmul(tokens, params[f"{prefix}.wv"]), config.n_heads)
    heads, weights = attention(q, k, v, return_weights=True)
    out = dense(_merge_heads(heads), params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    if return_weights:
        return out, weights
    return out


def transformer_block(tokens, params, index, config: EncoderConfig):
    """Attention and feed-forward sublayers, each with a residual and post layer-norm.

    Returns the new tokens and the attention weights (..., heads, s, s).
    """
    prefix = f"enc.block{index}"
    attended, weights = multi_head_attention(tokens, params, prefix, config, return_weights=True)
    h = layer_norm(tokens + attended, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.shift"])
    out = layer_norm(h + dense_stack(h, params, f"{prefix}.ff"),
                     params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.shift"])
    if not np.all(np.isfinite(out.data)):
        raise NumericError(f"non-finite activations in encoder block {index}")
    return out, weights


def _pool(tokens, config: EncoderConfig):
    if config.pooling == 'cls':
        return tokens[(slice(None),) * (tokens.ndim - 2) + (0,)]
    return tokens.mean(axis=tokens.ndim - 2)


def encode(x, params, config: EncoderConfig, return_attention=False):
    """Embed units (n, d) into X_E (n, d_model).

    With ``return_attention`` also returns one (n, heads, s, s) weight array
    per block. Dense-ablation parameters are accepted and yield no attention.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"encode: expected an (n, d) batch, got shape {x.shape}")
    if is_dense_encoder(params):
        out = dense_stack(x, params, 'enc.mlp')
        if not np.all(np.isfinite(out.data)):
            raise NumericError("non-finite activations in dense encoder")
        return (out, []) if return_attention else out

    tokens = tokenize(x, params, config)
    maps = []
    for i in range(config.n_blocks):
        tokens, weights = transformer_block(tokens, params, i, config)
        maps.append(weights)
    pooled = _pool(tokens, config)
    return (pooled, maps) if return_attention else pooled


def mean_attention_map(maps: List[np.ndarray], block=-1) -> Optional[np.ndarray]:
    """Attention of one block averaged over units and heads: an (s, s) matrix."""
    if not maps:
        return None
    return maps[block].mean(axis=(0, 1))
