# trainer.py
"""Joint training: reconstruction, adversarial balancing and factual regression.

Per minibatch, after the warm-up epochs, the critic takes ``n_critic`` steps on
detached embeddings and then one joint step updates encoder, decoder and heads
on ``alpha * L_reco + beta * L_adv + gamma * L_p``. Early stopping tracks the
validation factual MSE and restores the best epoch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from adversary import (DEFAULT_CLIP, DEFAULT_N_CRITIC, clip_weights, critic_score, critic_step_loss,
                       generator_balance_loss, init_critic_params, wasserstein_estimate)
from checkpoint_manager import load_checkpoint, save_checkpoint
from dataset import Dataset, FeatureScaler, SplitIndices, fit_scaler
from encoder import (EncoderConfig, encode, init_dense_encoder_params, init_encoder_params, is_dense_encoder,
                     mean_attention_map)
from errors import ConfigError, DimensionError, GroupError, NumericError, SizingError
from metrics import EvalReport, evaluate_predictions, factual_mse, group_kl
from numeric_core import Param, Tensor, as_tensor, parameter_count, restore, snapshot
from optim import RMSProp, build_optimizer
from outcome import factual_loss, init_head_params, predict_potential
from reconstruction import init_decoder_params, reco_loss, reconstruct

logger = logging.getLogger(__name__)

ABLATIONS = ('full', 'no_transformer', 'no_discriminator')
ADV_FLOWS = ('both', 'control_only')
CRITIC_REGS = ('clip', 'gp')
DTYPES = {'float64': np.float64, 'float32': np.float32}
TRACE_COLUMNS = ('epoch', 'l_reco', 'l_p', 'wass', 'group_kl', 'val_mse')
MIN_UNITS_PER_ARM = 2


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    critic_lr: float = 5e-5
    n_critic: int = DEFAULT_N_CRITIC
    clip: float = DEFAULT_CLIP
    critic_reg: str = 'clip'
    gp_weight: float = 10.0
    warmup_epochs: int = 5
    patience: int = 20
    adv_flow: str = 'both'
    ablation: str = 'full'
    seed: int = 0
    optimizer: str = 'adam'
    dtype: str = 'float64'
    decoder_layers: int = 2
    standardize_covariates: bool = True
    standardize_outcome: bool = True
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights alpha, beta, gamma must be >= 0")
        if max(self.alpha, self.beta, self.gamma) <= 0:
            raise ConfigError("at least one of alpha, beta, gamma must be > 0")
        if self.batch_size < 4:
            raise ConfigError(f"batch_size must be >= 4, got {self.batch_size}")
        if self.epochs < 1 or self.n_critic < 0 or self.warmup_epochs < 0 or self.patience < 1:
            raise ConfigError("epochs and patience must be >= 1; n_critic and warmup_epochs >= 0")
        if self.lr <= 0 or self.critic_lr <= 0 or self.clip <= 0:
            raise ConfigError("learning rates and the clip bound must be positive")
        for name, allowed in (('ablation', ABLATIONS), ('adv_flow', ADV_FLOWS), ('critic_reg', CRITIC_REGS),
                              ('dtype', tuple(DTYPES))):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got '{getattr(self, name)}'")
        if not isinstance(self.encoder, EncoderConfig):
            object.__setattr__(self, 'encoder', EncoderConfig.from_dict(self.encoder))

    @property
    def effective_beta(self):
        """beta, or 0 for the no_discriminator ablation."""
        return 0.0 if self.ablation == 'no_discriminator' else self.beta

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown train settings: {unknown}")
        values = dict(data)
        if 'encoder' in values:
            values['encoder'] = EncoderConfig.from_dict(values['encoder'])
        return cls(**values)


# --- trace ---

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    l_reco: float
    l_p: float
    wass: float
    group_kl: float
    val_mse: float


@dataclass
class TrainTrace:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=list(TRACE_COLUMNS))

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
        logger.info(f"Wrote {len(self.records)} epoch records to {path}")

    @classmethod
    def from_csv(cls, path):
        frame = pd.read_csv(path, float_precision='round_trip')
        records = [EpochRecord(int(row.epoch), float(row.l_reco), float(row.l_p), float(row.wass),
                               float(row.group_kl), float(row.val_mse)) for row in frame.itertuples(index=False)]
        return cls(records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


# --- model bundle ---

def _scaler_dict(scaler):
    return scaler.to_dict() if scaler is not None else None


def _scaler_from(data):
    return FeatureScaler.from_dict(data) if data else None


class CETransformerModel:
    """Parameters of all four components plus the scalers fitted on the train split.

    ``embed``, ``predict`` and ``attention`` take raw covariates; predictions
    come back in original outcome units.
    """

    def __init__(self, params: Dict[str, Param], d, config: TrainConfig,
                 feature_scaler: Optional[FeatureScaler] = None, outcome_scaler: Optional[FeatureScaler] = None):
        self.params = params
        self.d = d
        self.config = config
        self.feature_scaler = feature_scaler
        self.outcome_scaler = outcome_scaler
        self.dtype = DTYPES[config.dtype]

    def __repr__(self):
        kind = 'dense' if is_dense_encoder(self.params) else 'transformer'
        return f"CETransformerModel(d={self.d}, encoder={kind}, parameters={parameter_count(self.params)})"

    # parameter groups
    def group(self, *prefixes) -> List[Param]:
        return [p for name, p in self.params.items() if name.split('.', 1)[0] in prefixes]

    def trainable_params(self):
        return self.group('enc', 'dec', 'head0', 'head1')

    def critic_params(self):
        return self.group('critic')

    # scaling
    def prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise DimensionError(f"expected covariates of shape (n, {self.d}), got {x.shape}")
        if self.feature_scaler is not None:
            x = (x - self.feature_scaler.mean) / self.feature_scaler.sd
        return x.astype(self.dtype)

    def scale_outcome(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.outcome_scaler is not None:
            y = (y - self.outcome_scaler.mean[0]) / self.outcome_scaler.sd[0]
        return y.astype(self.dtype)

    def unscale_outcome(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.outcome_scaler is not None:
            y = y * self.outcome_scaler.sd[0] + self.outcome_scaler.mean[0]
        return y

    # inference
    def encode_tensor(self, x_prepared, return_attention=False):
        return encode(x_prepared, self.params, self.config.encoder, return_attention=return_attention)

    def embed(self, x) -> np.ndarray:
        return np.array(self.encode_tensor(self.prepare(x)).data, dtype=np.float64)

    def predict(self, x) -> Tuple[np.ndarray, np.ndarray]:
        y0, y1 = predict_potential(self.encode_tensor(self.prepare(x)), self.params)
        return self.unscale_outcome(y0.data), self.unscale_outcome(y1.data)

    def attention(self, x) -> List[np.ndarray]:
        """Per-block attention weights, each (n, heads, s, s)."""
        _, maps = self.encode_tensor(self.prepare(x), return_attention=True)
        return maps

    def attention_map(self, x, block=-1) -> Optional[np.ndarray]:
        return mean_attention_map(self.attention(x), block)

    # state
    def snapshot(self):
        return snapshot(self.params)
    def restore(self, values):
        restore(self.params, values)

    def to_checkpoint(self):
        metadata = {
            'd': self.d,
            'config': self.config.to_dict(),
            'feature_scaler': _scaler_dict(self.feature_scaler),
            'outcome_scaler': _scaler_dict(self.outcome_scaler),
        }
        return self.snapshot(), metadata
    @classmethod
    def from_checkpoint(cls, tensors, metadata):
        config = TrainConfig.from_dict(metadata['config'])
        dtype = DTYPES[config.dtype]
        params = {name: Param(np.asarray(arr, dtype=dtype), name) for name, arr in tensors.items()}
        return cls(params, int(metadata['d']), config, _scaler_from(metadata.get('feature_scaler')),
                   _scaler_from(metadata.get('outcome_scaler')))
    def save(self, path, extra_metadata=None):
        tensors, metadata = self.to_checkpoint()
        metadata.update(extra_metadata or {})
        save_checkpoint(path, tensors, metadata)

    @classmethod
    def load(cls, path):
        return cls.from_checkpoint(*load_checkpoint(path))

def build_model(d, cfg: TrainConfig, rng, feature_scaler=None, outcome_scaler=None) -> CETransformerModel:
    """Initialize every component in a fixed order so a seed fixes all weights."""
    dtype = DTYPES[cfg.dtype]
    enc = cfg.encoder
    if cfg.ablation == 'no_transformer':
        params = init_dense_encoder_params(rng, d, enc, dtype=dtype)
    else:
        params = init_encoder_params(rng, d, enc, dtype=dtype)
    params.update(init_decoder_params(rng, enc.d_model, d, n_layers=cfg.decoder_layers, dtype=dtype))
    params.update(init_head_params(rng, enc.d_model, dtype=dtype))
    params.update(init_critic_params(rng, enc.d_model, dtype=dtype))
    model = CETransformerModel(params, d, cfg, feature_scaler, outcome_scaler)
    logger.info(f"Built {model}")
    return model

# --- batching and losses ---
def stratified_batches(t, batch_size, rng) -> List[np.ndarray]:
    """Shuffle each arm and deal it across batches; every batch gets >= 2 units per arm.

    A batch short of an arm is topped up with other units of that arm drawn
    without replacement.
    """
    t = np.asarray(t)
    arms = [rng.permutation(np.flatnonzero(t == 1)), rng.permutation(np.flatnonzero(t == 0))]
    for arm in arms:
        if len(arm) < MIN_UNITS_PER_ARM:
            raise GroupError(f"stratified batches need >= {MIN_UNITS_PER_ARM} units per arm")
    n_batches = max(1, int(round(len(t) / batch_size)))
    chunks = [np.array_split(arm, n_batches) for arm in arms]
    batches = []
    for i in range(n_batches):
        parts = []
        for arm, arm_chunks in zip(arms, chunks):
            chunk = arm_chunks[i]
            need = MIN_UNITS_PER_ARM - len(chunk)
            if need > 0:
                extra = rng.choice(np.setdiff1d(arm, chunk), size=need, replace=False)
                chunk = np.concatenate([chunk, extra])
            parts.append(chunk)
        batches.append(np.sort(np.concatenate(parts)))
    return batches

def joint_loss(model: CETransformerModel, xb, tb, yb, cfg: Optional[TrainConfig] = None, adversarial=True,
               x_e: Optional[Tensor] = None):
    """alpha * L_reco (+ beta * L_adv + gamma * L_p when adversarial) on a prepared batch.

    Terms with zero weight are left out of the graph. Returns (loss or None, parts).
    """
    cfg = cfg or model.config
    tb = np.asarray(tb)
    x_e = model.encode_tensor(xb) if x_e is None else x_e
    terms = []
    parts = {}

    l_reco = reco_loss(xb, reconstruct(x_e, model.params))
    parts['l_reco'] = l_reco.item()
    if cfg.alpha > 0:
        terms.append(l_reco * cfg.alpha)
    if adversarial:
        y0, y1 = predict_potential(x_e, model.params)
        l_p = factual_loss(y0, y1, tb, yb)
        parts['l_p'] = l_p.item()
        if cfg.gamma > 0:
            terms.append(l_p * cfg.gamma)
        beta = cfg.effective_beta
        if beta > 0:
            treated, control = np.flatnonzero(tb == 1), np.flatnonzero(tb == 0)
            emb_t = x_e[treated] if cfg.adv_flow == 'both' else as_tensor(x_e.data[treated])
            l_adv = generator_balance_loss(critic_score(emb_t, model.params),
                                           critic_score(x_e[control], model.params))
            parts['l_adv'] = l_adv.item()
            terms.append(l_adv * beta)

    if not terms:
        return None, parts
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total, parts

def _critic_steps(model, emb, tb, cfg, optimizer, rng, epoch, batch):
    treated, control = emb[tb == 1], emb[tb == 0]
    for _ in range(cfg.n_critic):
        optimizer.zero_grad()
        loss = critic_step_loss(treated, control, model.params, cfg.critic_reg, rng, cfg.gp_weight)
        if not np.all(np.isfinite(loss.data)):
            raise NumericError(f"non-finite critic loss at epoch {epoch}, batch {batch}")
        loss.backward()
        optimizer.step()
        if cfg.critic_reg == 'clip':
            clip_weights(model.params, cfg.clip)

def _epoch_record(model, epoch, x_train, t_train, y_train, valid: Dataset) -> EpochRecord:
    x_e = model.encode_tensor(x_train)
    l_reco = reco_loss(x_train, reconstruct(x_e, model.params)).item()
    y0, y1 = predict_potential(x_e, model.params)
    l_p = factual_loss(y0, y1, t_train, y_train).item()
    emb = x_e.data
    treated, control = emb[t_train == 1], emb[t_train == 0]
    wass = wasserstein_estimate(critic_score(treated, model.params), critic_score(control, model.params))
    kl = group_kl(treated, control)
    y0_val, y1_val = model.predict(valid.covariates)
    val_mse = factual_mse(y0_val, y1_val, valid.treatment, valid.y_factual)
    record = EpochRecord(epoch, float(l_reco), float(l_p), float(wass), float(kl), float(val_mse))
    for name in TRACE_COLUMNS[1:]:
        if not math.isfinite(getattr(record, name)):
            raise NumericError(f"non-finite {name} at the end of epoch {epoch}")
    return record

def train(ds: Dataset, splits: SplitIndices, cfg: TrainConfig) -> Tuple[CETransformerModel, TrainTrace]:
    """Fit the model on ``splits.train``, early-stopping on ``splits.valid``.

    Returns:
        tuple: (model restored to the best validation epoch, per-epoch trace)
    """
    train_ds = ds.subset(splits.train)
    valid_ds = ds.subset(splits.valid)
    n_treated = int(train_ds.treatment.sum())
    n_control = train_ds.n - n_treated
    if min(n_treated, n_control) < MIN_UNITS_PER_ARM:
        raise GroupError(f"train split needs >= {MIN_UNITS_PER_ARM} units per arm, "
                         f"got {n_treated} treated and {n_control} control")
    if valid_ds.n == 0:
        raise SizingError("validation split is empty")
    feature_scaler = fit_scaler(train_ds.covariates) if cfg.standardize_covariates else None
    outcome_scaler = fit_scaler(train_ds.y_factual[:, None]) if cfg.standardize_outcome else None
    rng = np.random.default_rng(cfg.seed)
    model = build_model(ds.d, cfg, rng, feature_scaler, outcome_scaler)

    x_train = model.prepare(train_ds.covariates)
    y_train = model.scale_outcome(train_ds.y_factual)
    t_train = train_ds.treatment
    joint_opt = build_optimizer(cfg.optimizer, model.trainable_params(), cfg.lr)
    critic_opt = RMSProp(model.critic_params(), lr=cfg.critic_lr)

    logger.info(f"Training on {train_ds.n} units ({n_treated} treated), validating on {valid_ds.n}; "
                f"ablation={cfg.ablation}, alpha={cfg.alpha}, beta={cfg.effective_beta}, gamma={cfg.gamma}")
    trace = TrainTrace()
    best_val, best_state, wait = math.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        adversarial = epoch > cfg.warmup_epochs
        for b, batch in enumerate(stratified_batches(t_train, cfg.batch_size, rng)):
            xb, tb, yb = x_train[batch], t_train[batch], y_train[batch]
            x_e = model.encode_tensor(xb)
            if adversarial:
                _critic_steps(model, x_e.data, tb, cfg, critic_opt, rng, epoch, b)
            loss, parts = joint_loss(model, xb, tb, yb, cfg, adversarial=adversarial, x_e=x_e)
            if loss is None:
                continue
            if not np.all(np.isfinite(loss.data)):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            joint_opt.zero_grad()
            loss.backward()
            joint_opt.step()
            logger.debug(f"epoch {epoch} batch {b}: " + ", ".join(f"{k}={v:.5f}" for k, v in parts.items()))

        record = _epoch_record(model, epoch, x_train, t_train, y_train, valid_ds)
        trace.records.append(record)
        logger.info(f"Epoch {epoch}: l_reco={record.l_reco:.5f} l_p={record.l_p:.5f} wass={record.wass:.5f} "
                    f"group_kl={record.group_kl:.5f} val_mse={record.val_mse:.5f}")
        if not adversarial:
            continue
        if record.val_mse < best_val:
            best_val, best_state, wait = record.val_mse, model.snapshot(), 0
            trace.best_epoch = epoch
        else:
            wait += 1
            if wait >= cfg.patience:
                logger.warning(f"Early stop at epoch {epoch}: no validation improvement for {wait} epochs "
                               f"(best {best_val:.5f} at epoch {trace.best_epoch})")
                trace.stopped_early = True
                break

    if best_state is not None:
        model.restore(best_state)
    else:
        trace.best_epoch = len(trace.records)
    return model, trace

# --- evaluation helpers ---
def evaluate_model(model: CETransformerModel, ds: Dataset, indices, split_name, threshold=0.0,
                   method='cetransformer') -> EvalReport:
    sub = ds.subset(indices)
    y0, y1 = model.predict(sub.covariates)
    return evaluate_predictions(sub, y0, y1, split=split_name, method=method, embeddings=model.embed(sub.covariates),
                                threshold=threshold, config=model.config.to_dict())

class AblationResult(NamedTuple):
    full: EvalReport
    no_transformer: EvalReport
    no_discriminator: EvalReport

def ablate(ds: Dataset, splits: SplitIndices, cfg: TrainConfig, eval_split='test', threshold=0.0) -> AblationResult:
    """Train the three variants on identical splits and score each on ``eval_split``."""
    reports = {}
    for variant in ABLATIONS:
        model, trace = train(ds, splits, replace(cfg, ablation=variant))
        reports[variant] = evaluate_model(model, ds, getattr(splits, eval_split), eval_split, threshold,
                                          method=variant)
        logger.info(f"Ablation {variant}: {len(trace)} epochs, parameters={parameter_count(model.params)}")
    return AblationResult(**reports)

def sweep(ds: Dataset, splits: SplitIndices, cfg: TrainConfig, alphas: Sequence[float], betas: Sequence[float],
          gammas: Sequence[float]) -> List[Dict[str, float]]:
    """Grid over loss weights scored by validation factual MSE of the restored model."""
    rows = []
    for alpha in alphas:
        for beta in betas:
            for gamma in gammas:
                if max(alpha, beta, gamma) <= 0:
                    logger.warning("Sweep: skipping alpha=beta=gamma=0")
                    continue
                model, trace = train(ds, splits, replace(cfg, alpha=alpha, beta=beta, gamma=gamma))
                valid = ds.subset(splits.valid)
                y0, y1 = model.predict(valid.covariates)
                rows.append({'alpha': alpha, 'beta': beta, 'gamma': gamma, 'epochs': len(trace),
                             'val_mse': factual_mse(y0, y1, valid.treatment, valid.y_factual)})
    rows.sort(key=lambda r: r['val_mse'])
    return rows
