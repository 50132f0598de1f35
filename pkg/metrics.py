# metrics.py
"""Treatment-effect evaluation: ITE/ATE, sqrt-PEHE, policy risk, group KL."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from dataset import Dataset
from errors import DimensionError, GroundTruthError, GroupError, NumericError, ScalingError, SizingError

logger = logging.getLogger(__name__)

KL_VARIANCE_FLOOR = 1e-6


@dataclass
class EvalReport:
    """Metrics of one method on one split.

    ``sqrt_pehe`` and ``ate_error`` are set only when the data carries ground
    truth; ``policy_risk`` only when factual outcomes lie in [0, 1]; the KL
    fields only for methods that produce embeddings.
    """
    split: str
    method: str
    n: int
    factual_mse: float
    ate_pred: float
    sqrt_pehe: Optional[float] = None
    ate_true: Optional[float] = None
    ate_error: Optional[float] = None
    policy_risk: Optional[float] = None
    group_kl: Optional[float] = None
    group_kl_reverse: Optional[float] = None
    config: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ('factual_mse', 'ate_pred', 'sqrt_pehe', 'ate_true', 'ate_error', 'policy_risk',
                     'group_kl', 'group_kl_reverse'):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise NumericError(f"EvalReport.{name} is not finite: {value}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def metrics(self):
        """The numeric fields, without the config snapshot."""
        return {k: v for k, v in asdict(self).items() if k != 'config'}


def ite_true(ds: Dataset) -> np.ndarray:
    """mu1 - mu0 when available, else the factual/counterfactual difference oriented by t."""
    if ds.mu0 is not None and ds.mu1 is not None:
        return ds.mu1 - ds.mu0
    if ds.y_cf is not None:
        return np.where(ds.treatment == 1, ds.y_factual - ds.y_cf, ds.y_cf - ds.y_factual)
    raise GroundTruthError("dataset has neither mu0/mu1 nor y_cf")


def ate_true(ds: Dataset) -> float:
    return float(ite_true(ds).mean())


def _same_length(a, b, op):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    if a.size == 0:
        raise SizingError(f"{op}: needs at least one unit")
    return a, b


def sqrt_pehe(ite_pred, ite_true_values) -> float:
    pred, truth = _same_length(ite_pred, ite_true_values, 'sqrt_pehe')
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def factual_mse(y0_hat, y1_hat, t, y) -> float:
    y0_hat, y1_hat = _same_length(y0_hat, y1_hat, 'factual_mse')
    y, _ = _same_length(y, y0_hat, 'factual_mse')
    t = np.asarray(t)
    return float(np.mean((np.where(t == 1, y1_hat, y0_hat) - y) ** 2))


def policy_risk(y0_hat, y1_hat, t, y, threshold=0.0) -> float:
    """1 - [E[y | pi=1, t=1] P(pi=1) + E[y | pi=0, t=0] P(pi=0)], pi = 1 iff y1_hat - y0_hat > threshold.

    A term whose subgroup is empty is left out with a warning.
    """
    y0_hat, y1_hat = _same_length(y0_hat, y1_hat, 'policy_risk')
    y, _ = _same_length(y, y0_hat, 'policy_risk')
    t = np.asarray(t)
    if y.min() < 0.0 or y.max() > 1.0:
        raise ScalingError(f"policy risk needs outcomes in [0, 1], got range [{y.min()}, {y.max()}]")
    treat = (y1_hat - y0_hat) > threshold
    value = 0.0
    for arm, chosen in ((1, treat), (0, ~treat)):
        group = chosen & (t == arm)
        if not group.any():
            logger.warning(f"Policy risk: no units with pi={arm} and t={arm}, term skipped")
            continue
        value += float(y[group].mean()) * float(chosen.mean())
    return 1.0 - value


def policy_risk_true(policy, mu0, mu1) -> float:
    """Risk of a policy under the noiseless potential outcomes: 1 - mean(mu_pi)."""
    mu0, mu1 = _same_length(mu0, mu1, 'policy_risk_true')
    policy = np.asarray(policy, dtype=bool)
    return float(1.0 - np.mean(np.where(policy, mu1, mu0)))


def _gaussian_fit(emb, floor):
    return emb.mean(axis=0), np.maximum(emb.var(axis=0), floor)


def group_kl(emb_treated, emb_control, floor=KL_VARIANCE_FLOOR) -> float:
    """KL(treated || control) between diagonal Gaussian fits of the two embedding groups."""
    a = np.asarray(getattr(emb_treated, 'data', emb_treated), dtype=np.float64)
    b = np.asarray(getattr(emb_control, 'data', emb_control), dtype=np.float64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise GroupError(f"group KL needs at least 2 units per group, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"group_kl: incompatible shapes {a.shape} and {b.shape}")
    mu_a, var_a = _gaussian_fit(a, floor)
    mu_b, var_b = _gaussian_fit(b, floor)
    kl = 0.5 * np.sum(np.log(var_b / var_a) + (var_a + (mu_a - mu_b) ** 2) / var_b - 1.0)
    return float(max(kl, 0.0))


def split_group_kl(embeddings, t):
    """(KL(treated || control), KL(control || treated)) for embeddings of one split."""
    t = np.asarray(t)
    treated, control = embeddings[t == 1], embeddings[t == 0]
    return group_kl(treated, control), group_kl(control, treated)


def evaluate_predictions(ds: Dataset, y0_hat, y1_hat, split='all', method='cetransformer',
                         embeddings=None, threshold=0.0, config=None) -> EvalReport:
    """Score potential-outcome predictions for every unit of ``ds``."""
    y0_hat = np.asarray(y0_hat, dtype=np.float64)
    y1_hat = np.asarray(y1_hat, dtype=np.float64)
    ite_pred = y1_hat - y0_hat
    report = EvalReport(split=split, method=method, n=ds.n,
                        factual_mse=factual_mse(y0_hat, y1_hat, ds.treatment, ds.y_factual),
                        ate_pred=float(ite_pred.mean()), config=dict(config or {}))
    if ds.has_ground_truth:
        truth = ite_true(ds)
        report.sqrt_pehe = sqrt_pehe(ite_pred, truth)
        report.ate_true = float(truth.mean())
        report.ate_error = abs(report.ate_pred - report.ate_true)
    if ds.y_factual.min() >= 0.0 and ds.y_factual.max() <= 1.0:
        report.policy_risk = policy_risk(np.clip(y0_hat, 0.0, 1.0), np.clip(y1_hat, 0.0, 1.0),
                                         ds.treatment, ds.y_factual, threshold)
    if embeddings is not None and min(int(ds.treatment.sum()), int((1 - ds.treatment).sum())) >= 2:
        report.group_kl, report.group_kl_reverse = split_group_kl(np.asarray(embeddings), ds.treatment)
    logger.info(f"{method} on {split}: factual_mse={report.factual_mse:.4f}"
                + (f", sqrt_pehe={report.sqrt_pehe:.4f}" if report.sqrt_pehe is not None else "")
                + (f", policy_risk={report.policy_risk:.4f}" if report.policy_risk is not None else ""))
    return report
