# dataset.py
"""Observational datasets: CSV I/O, synthetic generation, standardization, splits.

On-disk format: UTF-8 CSV with a header row, columns ``t``, ``yf``, optional
``ycf``, ``mu0``, ``mu1``, then the covariates ``x0 .. x{d-1}``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.linear_model import LogisticRegression

from errors import GenerationError, ParseError, SchemaError, SizingError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_SCHEMA = {
    'treatment': 't',
    'y_factual': 'yf',
    'y_cf': 'ycf',
    'mu0': 'mu0',
    'mu1': 'mu1',
}
OPTIONAL_FIELDS = ('y_cf', 'mu0', 'mu1')
EFFECT_FUNCTIONS = ('constant', 'linear', 'nonlinear')
CONSTANT_SD_TOLERANCE = 1e-12
MAX_GENERATION_ATTEMPTS = 10


def _frozen(values, dtype=np.float64):
    if values is None:
        return None
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """n units with d covariates, a binary treatment and factual outcomes.

    ``y_cf``, ``mu0`` and ``mu1`` are only present for synthetic or
    semi-synthetic data. Arrays are read-only after construction.
    """
    covariates: np.ndarray
    treatment: np.ndarray
    y_factual: np.ndarray
    y_cf: Optional[np.ndarray] = None
    mu0: Optional[np.ndarray] = None
    mu1: Optional[np.ndarray] = None
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self):
        x = np.array(self.covariates, dtype=np.float64)
        if x.ndim != 2:
            raise ValidationError(f"covariates must be an n x d matrix, got shape {x.shape}")
        n, d = x.shape
        t = np.asarray(self.treatment, dtype=np.float64)
        bad = ~np.isin(t, (0.0, 1.0))
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"treatment values must be 0 or 1, found {t[row]} at row {row}")
        object.__setattr__(self, 'covariates', _frozen(x))
        object.__setattr__(self, 'treatment', _frozen(t, dtype=np.int64))
        for name in ('y_factual',) + OPTIONAL_FIELDS:
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(d))
        object.__setattr__(self, 'feature_names', names)
        self._validate(n, d)

    def _validate(self, n, d):
        if len(self.feature_names) != d:
            raise ValidationError(f"{len(self.feature_names)} feature names for {d} covariates")
        for name in ('treatment', 'y_factual') + OPTIONAL_FIELDS:
            values = getattr(self, name)
            if values is None:
                continue
            if values.shape != (n,):
                raise ValidationError(f"'{name}' has shape {values.shape}, expected ({n},)")
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"'{name}' contains NaN or Inf")
        if not np.all(np.isfinite(self.covariates)):
            raise ValidationError("covariates contain NaN or Inf")

    @property
    def n(self):
        return self.covariates.shape[0]

    @property
    def d(self):
        return self.covariates.shape[1]

    @property
    def has_ground_truth(self):
        return (self.mu0 is not None and self.mu1 is not None) or self.y_cf is not None

    def subset(self, indices) -> 'Dataset':
        idx = np.asarray(indices, dtype=np.int64)
        pick = lambda v: None if v is None else v[idx]
        return Dataset(self.covariates[idx], self.treatment[idx], self.y_factual[idx],
                       pick(self.y_cf), pick(self.mu0), pick(self.mu1), self.feature_names)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def to_dict(self):
        return {'train': self.train.tolist(), 'valid': self.valid.tolist(), 'test': self.test.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(*(np.asarray(data[k], dtype=np.int64) for k in ('train', 'valid', 'test')))

    def named(self):
        return {'train': self.train, 'valid': self.valid, 'test': self.test}


@dataclass(frozen=True)
class SynthConfig:
    n: int = 1000
    d: int = 10
    bias_strength: float = 0.0
    effect_fn: str = 'constant'
    noise_sd: float = 1.0
    seed: int = 0
    tau: float = 3.0

    def __post_init__(self):
        if self.n < 4:
            raise SizingError(f"synthetic data needs n >= 4, got {self.n}")
        if self.d < 1:
            raise SizingError(f"synthetic data needs d >= 1, got {self.d}")
        if self.bias_strength < 0 or self.noise_sd < 0:
            raise ValidationError("bias_strength and noise_sd must be non-negative")
        if self.effect_fn not in EFFECT_FUNCTIONS:
            raise ValidationError(f"effect_fn must be one of {EFFECT_FUNCTIONS}, got '{self.effect_fn}'")


@dataclass(frozen=True)
class FeatureScaler:
    mean: np.ndarray
    sd: np.ndarray

    def to_dict(self):
        return {'mean': self.mean.tolist(), 'sd': self.sd.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data['mean'], dtype=np.float64), np.asarray(data['sd'], dtype=np.float64))


# --- CSV ---

def _parse_cell(cell) -> float:
    """Correctly rounded float of one cell, NaN when it does not parse."""
    try:
        return float(cell.strip())
    except ValueError:
        return np.nan


def load_csv(path, schema: Optional[Dict[str, str]] = None) -> Dataset:
    """Read a dataset CSV.

    Args:
        path: file path
        schema: maps ``treatment``, ``y_factual`` and the optional ``y_cf``,
            ``mu0``, ``mu1`` to column names; an optional ``covariates`` list
            selects feature columns (default: every other column, in file order)

    Returns:
        Dataset: validated dataset
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    logger.info(f"Loaded {len(frame)} rows, {len(frame.columns)} columns from {path}")

    for key in ('treatment', 'y_factual'):
        if schema[key] not in frame.columns:
            raise SchemaError(schema[key])
    outcome_columns = {key: schema[key] for key in OPTIONAL_FIELDS if schema.get(key) in frame.columns}
    reserved = {schema['treatment'], schema['y_factual'], *outcome_columns.values()}
    covariate_columns = list(schema.get('covariates') or [c for c in frame.columns if c not in reserved])
    for column in covariate_columns:
        if column not in frame.columns:
            raise SchemaError(column)
    if not covariate_columns:
        raise SchemaError('x0', "no covariate columns found")

    numeric = {}
    for column in [schema['treatment'], schema['y_factual'], *outcome_columns.values(), *covariate_columns]:
        values = frame[column].map(_parse_cell)
        bad = values.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(row + 1, column, frame[column].iloc[row])
        numeric[column] = values.to_numpy(dtype=np.float64)

    t = numeric[schema['treatment']]
    if not np.all(np.isin(t, (0.0, 1.0))):
        row = int(np.flatnonzero(~np.isin(t, (0.0, 1.0)))[0])
        raise ValidationError(f"treatment value {t[row]} at row {row + 1} is not 0 or 1")

    return Dataset(
        covariates=np.column_stack([numeric[c] for c in covariate_columns]),
        treatment=t.astype(np.int64),
        y_factual=numeric[schema['y_factual']],
        feature_names=tuple(covariate_columns),
        **{key: numeric[column] for key, column in outcome_columns.items()},
    )


def write_csv(ds: Dataset, path):
    """Write ``ds`` in the on-disk format; floats are written round-trip exact."""
    columns = {'t': ds.treatment, 'yf': ds.y_factual}
    for key in OPTIONAL_FIELDS:
        values = getattr(ds, key)
        if values is not None:
            columns[DEFAULT_SCHEMA[key]] = values
    for j, name in enumerate(ds.feature_names):
        columns[name] = ds.covariates[:, j]
    frame = pd.DataFrame(columns)
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n', encoding='utf-8')
    logger.info(f"Wrote {ds.n} units x {len(columns)} columns to {path}")


# --- standardization ---

def fit_scaler(x: np.ndarray) -> FeatureScaler:
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd < CONSTANT_SD_TOLERANCE, 1.0, sd)
    return FeatureScaler(mean, sd)


def apply_standardization(ds: Dataset, scaler: FeatureScaler) -> Dataset:
    """Transform covariates with parameters fitted elsewhere (held-out splits)."""
    return replace(ds, covariates=(ds.covariates - scaler.mean) / scaler.sd)


def standardize(ds: Dataset) -> Tuple[Dataset, FeatureScaler]:
    """Zero-mean, unit population-sd covariates; constant columns map to 0 with sd 1."""
    if ds.n < 2:
        raise SizingError(f"standardize needs n >= 2, got {ds.n}")
    scaler = fit_scaler(ds.covariates)
    return apply_standardization(ds, scaler), scaler


# --- splitting ---

def split_sizes(n, ratio: Sequence[float]) -> Tuple[int, int, int]:
    if len(ratio) != 3 or any(p <= 0 for p in ratio) or sum(ratio) > 100:
        raise SizingError(f"split ratio must be three positive percentages summing to <= 100, got {list(ratio)}")
    valid = int(math.floor(n * ratio[1] / 100.0))
    test = int(math.floor(n * ratio[2] / 100.0))
    train = n - valid - test
    if min(train, valid, test) < 1:
        raise SizingError(f"n={n} is too small for ratio {list(ratio)}: sizes {train}/{valid}/{test}")
    return train, valid, test


def _clamp(value, lo, hi):
    return max(lo, min(hi, value))


def split(ds: Dataset, ratio: Sequence[float] = (61, 27, 10), seed: int = 0) -> SplitIndices:
    """Stratified train/valid/test partition.

    Valid and test sizes are floor(n * pct / 100); the remainder goes to train.
    Held-out slots are shared between arms in proportion to arm size, keeping
    at least one unit of each arm in train whenever the counts allow it.
    """
    n_train, n_valid, n_test = split_sizes(ds.n, ratio)
    rng = np.random.default_rng(seed)
    treated = rng.permutation(np.flatnonzero(ds.treatment == 1))
    control = rng.permutation(np.flatnonzero(ds.treatment == 0))
    n_t, n_c = len(treated), len(control)

    held_out = n_valid + n_test
    lo, hi = max(0, held_out - (n_c - 1)), min(n_t - 1, held_out)
    if lo > hi:
        lo, hi = max(0, held_out - n_c), min(n_t, held_out)
    h_t = _clamp(int(round(held_out * n_t / ds.n)), lo, hi)
    t_valid = _clamp(int(round(n_valid * h_t / held_out)), max(0, h_t - n_test), min(n_valid, h_t))
    t_test = h_t - t_valid
    c_valid = n_valid - t_valid
    c_test = n_test - t_test

    valid = np.concatenate([treated[:t_valid], control[:c_valid]])
    test = np.concatenate([treated[t_valid:h_t], control[c_valid:c_valid + c_test]])
    train = np.concatenate([treated[h_t:], control[c_valid + c_test:]])
    splits = SplitIndices(np.sort(train), np.sort(valid), np.sort(test))
    logger.info(f"Split {ds.n} units into {len(splits.train)}/{len(splits.valid)}/{len(splits.test)} "
                f"(seed {seed})")
    return splits


# --- synthetic data ---

def _effect(cfg: SynthConfig, x, theta):
    if cfg.effect_fn == 'constant':
        return np.full(x.shape[0], float(cfg.tau))
    if cfg.effect_fn == 'linear':
        return x @ theta
    return np.sin(x @ theta) + 1.0


def selection_direction(d):
    """The fixed unit vector w driving treatment assignment."""
    return np.ones(d) / math.sqrt(d)


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Draw a dataset with known potential outcomes.

    X ~ N(0, I); P(T=1 | x) = sigmoid(bias_strength * w.x); mu0 = x.beta;
    mu1 = mu0 + tau(x). Draws with an empty arm are repeated up to 10 times.
    """
    rng = np.random.default_rng(cfg.seed)
    w = selection_direction(cfg.d)
    beta = rng.uniform(-1.0, 1.0, size=cfg.d)
    theta = rng.normal(size=cfg.d)
    theta /= np.linalg.norm(theta)

    for attempt in range(1, MAX_GENERATION_ATTEMPTS + 1):
        x = rng.standard_normal((cfg.n, cfg.d))
        t = (rng.uniform(size=cfg.n) < expit(cfg.bias_strength * (x @ w))).astype(np.int64)
        if 0 < t.sum() < cfg.n:
            break
        logger.warning(f"Synthetic draw {attempt} has an empty treatment arm, regenerating")
    else:
        raise GenerationError(f"no draw with both arms after {MAX_GENERATION_ATTEMPTS} attempts")

    mu0 = x @ beta
    mu1 = mu0 + _effect(cfg, x, theta)
    noise_f = cfg.noise_sd * rng.standard_normal(cfg.n)
    noise_cf = cfg.noise_sd * rng.standard_normal(cfg.n)
    y_factual = np.where(t == 1, mu1, mu0) + noise_f
    y_cf = np.where(t == 1, mu0, mu1) + noise_cf
    logger.info(f"Generated {cfg.n} units (d={cfg.d}, {cfg.effect_fn} effect, bias {cfg.bias_strength}), "
                f"{int(t.sum())} treated")
    return Dataset(x, t, y_factual, y_cf=y_cf, mu0=mu0, mu1=mu1)


# --- diagnostics ---

def overlap_check(ds: Dataset, min_arm_share=0.05, clip=(0.02, 0.98), max_extreme_share=0.10) -> List[str]:
    """Positivity warnings: small arms or many extreme propensity estimates."""
    warnings = []
    share = float(ds.treatment.mean()) if ds.n else 0.0
    for arm, arm_share in ((1, share), (0, 1.0 - share)):
        if arm_share < min_arm_share:
            warnings.append(f"arm t={arm} holds {arm_share:.1%} of units (< {min_arm_share:.0%})")
    if 0 < ds.treatment.sum() < ds.n:
        model = LogisticRegression(max_iter=1000)
        model.fit(ds.covariates, ds.treatment)
        propensity = model.predict_proba(ds.covariates)[:, 1]
        extreme = float(np.mean((propensity < clip[0]) | (propensity > clip[1])))
        if extreme > max_extreme_share:
            warnings.append(f"{extreme:.1%} of units have estimated propensity outside "
                            f"[{clip[0]}, {clip[1]}] (> {max_extreme_share:.0%})")
    for message in warnings:
        logger.warning(f"Overlap: {message}")
    return warnings
