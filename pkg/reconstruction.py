# reconstruction.py
"""Decoder reconstructing covariates from embeddings, and its loss."""
import logging

from errors import ConfigError, DimensionError
from numeric_core import DEFAULT_DTYPE, as_tensor, dense_stack, init_dense_stack

logger = logging.getLogger(__name__)


def init_decoder_params(rng, d_model, d, hidden=None, n_layers=2, dtype=DEFAULT_DTYPE):
    """Dense stack ``dec.*`` mapping d_model -> d; two layers use a relu hidden layer of width ``hidden``."""
    if n_layers == 1:
        sizes = [d_model, d]
    elif n_layers == 2:
        sizes = [d_model, hidden or d_model, d]
    else:
        raise ConfigError(f"decoder supports 1 or 2 layers, got {n_layers}")
    return init_dense_stack(rng, 'dec', sizes, dtype=dtype)


def reconstruct(x_e, params):
    return dense_stack(as_tensor(x_e), params, 'dec')


def reco_loss(x, x_hat):
    """Squared Frobenius error divided by the number of units."""
    x_hat = as_tensor(x_hat)
    x = as_tensor(x, x_hat)
    if x.shape != x_hat.shape or x.ndim != 2:
        raise DimensionError(f"reco_loss: incompatible shapes {x.shape} and {x_hat.shape}")
    diff = x - x_hat
    return (diff * diff).sum() * (1.0 / x.shape[0])
