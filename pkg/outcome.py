# outcome.py
"""Two-branch potential-outcome heads and the factual loss."""
import logging

import numpy as np

from errors import DimensionError
from numeric_core import DEFAULT_DTYPE, as_tensor, dense_stack, init_dense_stack, reshape

logger = logging.getLogger(__name__)

BRANCHES = ('head0', 'head1')


def init_head_params(rng, d_model, hidden=None, dtype=DEFAULT_DTYPE):
    """Independent ``head0.*`` (control) and ``head1.*`` (treated) stacks d_model -> hidden -> 1."""
    params = {}
    for prefix in BRANCHES:
        params.update(init_dense_stack(rng, prefix, [d_model, hidden or d_model, 1], dtype=dtype))
    return params


def predict_potential(x_e, params):
    """Both branches for every unit: (y0_hat, y1_hat), each a length-n tensor."""
    x_e = as_tensor(x_e)
    n = x_e.shape[0]
    y0 = reshape(dense_stack(x_e, params, 'head0'), (n,))
    y1 = reshape(dense_stack(x_e, params, 'head1'), (n,))
    return y0, y1


def factual_loss(y0_hat, y1_hat, t, y):
    """Mean squared error of the branch matching each unit's treatment.

    The other branch is multiplied by an exact zero mask, so it receives a
    gradient of exactly 0.
    """
    y0_hat, y1_hat = as_tensor(y0_hat), as_tensor(y1_hat)
    t = np.asarray(t)
    y = np.asarray(y)
    n = y0_hat.shape[0]
    if y0_hat.shape != (n,) or y1_hat.shape != (n,) or t.shape != (n,) or y.shape != (n,):
        raise DimensionError(f"factual_loss: lengths differ: y0_hat {y0_hat.shape}, y1_hat {y1_hat.shape}, "
                             f"t {t.shape}, y {y.shape}")
    dtype = y0_hat.data.dtype
    treated = (t == 1).astype(dtype)
    factual = y0_hat * (1.0 - treated) + y1_hat * treated
    diff = factual - as_tensor(y.astype(dtype))
    return (diff * diff).mean()
