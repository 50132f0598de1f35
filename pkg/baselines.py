# baselines.py
"""Classical comparators: OLS with a treatment feature, per-arm OLS, k-NN matching.

Every baseline fits on the train split and returns potential-outcome
predictions for all units of the dataset, so in-sample and out-of-sample
rows come from the same prediction vectors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.linear_model import LinearRegression, Ridge

from dataset import Dataset, SplitIndices, fit_scaler
from errors import GroupError, SizingError

logger = logging.getLogger(__name__)

RIDGE_JITTER = 1e-8
DEFAULT_K = 5


@dataclass(frozen=True)
class LinearModel:
    coef: np.ndarray
    intercept: float

    def predict(self, x):
        return np.asarray(x, dtype=np.float64) @ self.coef + self.intercept


@dataclass(frozen=True)
class BaselinePrediction:
    method: str
    y0: np.ndarray
    y1: np.ndarray

    @property
    def ite(self):
        return self.y1 - self.y0


def fit_linear(x, y, label='ols', ridge=False) -> LinearModel:
    """Least squares with intercept.

    Rank-deficient designs, and callers passing ``ridge=True``, get ridge(1e-8)
    with a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    design = np.column_stack([np.ones(len(x)), x])
    if ridge:
        logger.warning(f"{label}: {design.shape[0]} units for {design.shape[1]} coefficients, "
                       f"falling back to ridge with penalty {RIDGE_JITTER}")
        model = Ridge(alpha=RIDGE_JITTER).fit(x, y)
    elif np.linalg.matrix_rank(design) < design.shape[1]:
        logger.warning(f"{label}: design matrix ({design.shape[0]} x {design.shape[1]}) is rank deficient, "
                       f"falling back to ridge with penalty {RIDGE_JITTER}")
        model = Ridge(alpha=RIDGE_JITTER).fit(x, y)
    else:
        model = LinearRegression().fit(x, y)
    return LinearModel(np.asarray(model.coef_, dtype=np.float64), float(model.intercept_))


def _train_arms(ds: Dataset, splits: SplitIndices):
    train = ds.subset(splits.train)
    treated = np.flatnonzero(train.treatment == 1)
    control = np.flatnonzero(train.treatment == 0)
    if len(treated) == 0 or len(control) == 0:
        raise GroupError(f"train split needs both arms, got {len(treated)} treated and {len(control)} control")
    return train, treated, control


def ols_lr1(ds: Dataset, splits: SplitIndices) -> BaselinePrediction:
    """One regression of y on [x, t]; the effect estimate is the t coefficient for every unit."""
    train, _, _ = _train_arms(ds, splits)
    model = fit_linear(np.column_stack([train.covariates, train.treatment]), train.y_factual, 'OLS/LR1')
    zeros, ones = np.zeros(ds.n), np.ones(ds.n)
    y0 = model.predict(np.column_stack([ds.covariates, zeros]))
    y1 = model.predict(np.column_stack([ds.covariates, ones]))
    logger.info(f"OLS/LR1 treatment coefficient {model.coef[-1]:.4f}")
    return BaselinePrediction('ols_lr1', y0, y1)


def ols_lr2(ds: Dataset, splits: SplitIndices) -> BaselinePrediction:
    """Separate regressions per arm; effects are heterogeneous."""
    train, treated, control = _train_arms(ds, splits)
    models = {}
    for arm, rows in ((0, control), (1, treated)):
        models[arm] = fit_linear(train.covariates[rows], train.y_factual[rows], f"OLS/LR2 arm {arm}",
                                 ridge=len(rows) < ds.d + 2)
    return BaselinePrediction('ols_lr2', models[0].predict(ds.covariates), models[1].predict(ds.covariates))


def knn_ite(ds: Dataset, splits: SplitIndices, k=DEFAULT_K) -> BaselinePrediction:
    """Counterfactual = mean factual outcome of the k nearest opposite-arm train units.

    Distances are Euclidean on covariates standardized with train statistics;
    ties go to the lower train index. The factual branch is the observed outcome.
    """
    if k < 1:
        raise SizingError(f"k must be >= 1, got {k}")
    train, treated, control = _train_arms(ds, splits)
    scaler = fit_scaler(train.covariates)
    x_all = (ds.covariates - scaler.mean) / scaler.sd
    x_train = (train.covariates - scaler.mean) / scaler.sd

    counterfactual = np.empty(ds.n)
    for arm, rows in ((1, treated), (0, control)):
        k_arm = k
        if k > len(rows):
            logger.warning(f"k-NN: k={k} exceeds the {len(rows)} train units with t={arm}, using k={len(rows)}")
            k_arm = len(rows)
        # units of the other arm look up neighbours in this arm
        units = np.flatnonzero(ds.treatment != arm)
        if len(units) == 0:
            continue
        dist = cdist(x_all[units], x_train[rows])
        nearest = np.argsort(dist, axis=1, kind='stable')[:, :k_arm]
        counterfactual[units] = train.y_factual[rows][nearest].mean(axis=1)

    y0 = np.where(ds.treatment == 0, ds.y_factual, counterfactual)
    y1 = np.where(ds.treatment == 1, ds.y_factual, counterfactual)
    return BaselinePrediction("knn", y0, y1)


BASELINES = {
    'ols_lr1': lambda ds, splits, k: ols_lr1(ds, splits),
    'ols_lr2': lambda ds, splits, k: ols_lr2(ds, splits),
    'knn': lambda ds, splits, k: knn_ite(ds, splits, k),
}


def run_baselines(ds: Dataset, splits: SplitIndices, k=DEFAULT_K):
    return [fn(ds, splits, k) for fn in BASELINES.values()]
