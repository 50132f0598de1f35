# adversary.py
"""Wasserstein critic over embeddings: scores, losses, clipping, gradient penalty.

The critic maximizes mean(D(treated)) - mean(D(control)); the encoder
minimizes the same gap. Scores are unbounded (no sigmoid).
"""
import logging

import numpy as np

from errors import ConfigError, GroupError
from numeric_core import (DEFAULT_DTYPE, as_tensor, dense_stack, init_dense_stack, matmul, mul, sqrt,
                          transpose)

logger = logging.getLogger(__name__)

DEFAULT_CLIP = 0.01
DEFAULT_N_CRITIC = 5
GP_NORM_EPS = 1e-12


def init_critic_params(rng, d_model, hidden=None, dtype=DEFAULT_DTYPE):
    return init_dense_stack(rng, 'critic', [d_model, hidden or d_model, 1], dtype=dtype)


def critic_params(params):
    return [p for name, p in params.items() if name.startswith('critic.')]


def critic_score(x_e, params):
    """Scores (m, 1) for embeddings (m, d_model)."""
    return dense_stack(as_tensor(x_e), params, 'critic')


def _check_groups(scores_treated, scores_control):
    if scores_treated.shape[0] == 0 or scores_control.shape[0] == 0:
        raise GroupError(f"both groups need at least one unit, got {scores_treated.shape[0]} treated "
                         f"and {scores_control.shape[0]} control")


def wasserstein_estimate(scores_treated, scores_control) -> float:
    """mean(treated scores) - mean(control scores)."""
    st, sc = as_tensor(scores_treated), as_tensor(scores_control)
    _check_groups(st, sc)
    return float(st.data.mean() - sc.data.mean())


def critic_loss(scores_treated, scores_control):
    """Negated mean gap, for a minimizing optimizer."""
    st, sc = as_tensor(scores_treated), as_tensor(scores_control)
    _check_groups(st, sc)
    return sc.mean() - st.mean()


def generator_balance_loss(scores_treated, scores_control):
    """Mean gap as seen by the encoder; gradients reach whichever side is attached to the graph."""
    st, sc = as_tensor(scores_treated), as_tensor(scores_control)
    _check_groups(st, sc)
    return st.mean() - sc.mean()


def clip_weights(params, c):
    """Clamp every critic parameter into [-c, c] in place."""
    if c <= 0:
        raise ConfigError(f"clip bound must be positive, got {c}")
    for p in critic_params(params) if isinstance(params, dict) else params:
        np.clip(p.data, -c, c, out=p.data)


def lipschitz_bound(params, prefix='critic') -> float:
    """Product of the layers' spectral norms; relu is 1-Lipschitz."""
    bound = 1.0
    i = 0
    while f"{prefix}.l{i}.w" in params:
        bound *= float(np.linalg.norm(params[f"{prefix}.l{i}.w"].data, 2))
        i += 1
    return bound


def critic_input_gradient(x, params, prefix='critic'):
    """dD/dx for each row of x, built from graph ops so it can itself be differentiated.

    The relu masks come from the forward pass and are held constant.
    """
    x = as_tensor(x)
    _, pre_activations = dense_stack(x, params, prefix, return_pre_activations=True)
    n_layers = len(pre_activations) + 1
    dtype = x.data.dtype
    last = params[f"{prefix}.l{n_layers - 1}.w"]
    grad = matmul(as_tensor(np.ones((x.shape[0], last.shape[1]), dtype=dtype)), transpose(last, (1, 0)))
    for k in range(n_layers - 1, 0, -1):
        mask = as_tensor((pre_activations[k - 1].data > 0).astype(dtype))
        grad = matmul(mul(mask, grad), transpose(params[f"{prefix}.l{k - 1}.w"], (1, 0)))
    return grad


def gradient_penalty(emb_treated, emb_control, params, rng, weight=10.0):
    """weight * mean((||grad D(x~)|| - 1)^2) on random interpolates of treated and control rows.

    Interpolates pair the first m = min(n_t, n_c) rows of each group.
    """
    a = np.asarray(getattr(emb_treated, 'data', emb_treated))
    b = np.asarray(getattr(emb_control, 'data', emb_control))
    m = min(a.shape[0], b.shape[0])
    if m == 0:
        raise GroupError("gradient penalty needs units in both groups")
    eps = rng.uniform(size=(m, 1)).astype(a.dtype)
    mixed = eps * a[:m] + (1.0 - eps) * b[:m]
    grad = critic_input_gradient(mixed, params)
    norms = sqrt((grad * grad).sum(axis=1) + GP_NORM_EPS)
    gap = norms - 1.0
    return (gap * gap).mean() * weight


def critic_step_loss(emb_treated, emb_control, params, critic_reg='clip', rng=None, gp_weight=10.0):
    """Critic objective for one update on detached embeddings."""
    loss = critic_loss(critic_score(emb_treated, params), critic_score(emb_control, params))
    if critic_reg == 'gp':
        loss = loss + gradient_penalty(emb_treated, emb_control, params, rng, gp_weight)
    return loss


def score_groups(x_e, t, params):
    """Critic scores split by arm: (treated, control)."""
    t = np.asarray(t)
    x_e = as_tensor(x_e)
    return critic_score(x_e[np.flatnonzero(t == 1)], params), critic_score(x_e[np.flatnonzero(t == 0)], params)