#!/usr/bin/env python3
"""
Integration tests for data, metrics, baselines, training and the CLI

Each test builds its own small dataset or run directory in a temporary
location. CLI commands run in-process through click's CliRunner.
"""

import json
import logging
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

import config_manager
from baselines import knn_ite, ols_lr1, ols_lr2, run_baselines
from checkpoint_manager import RunStore, content_hash, load_checkpoint, save_checkpoint
from cli import cli, parse_ratio, parse_seeds
from dataset import (Dataset, SplitIndices, SynthConfig, generate_synthetic, load_csv, overlap_check, split,
                     split_sizes, standardize, write_csv)
from encoder import EncoderConfig
from errors import (ConfigError, GroundTruthError, GroupError, NumericError, ParseError, RunFileError, ScalingError,
                    SchemaError, SizingError, ValidationError)
from metrics import (EvalReport, ate_true, evaluate_predictions, factual_mse, group_kl, ite_true, policy_risk,
                     policy_risk_true, sqrt_pehe)
from reporting import aggregate, comparison_table, format_mean_sd, merge_seed_reports
from trainer import CETransformerModel, TrainConfig, TrainTrace, build_model, joint_loss, stratified_batches, train

logger = logging.getLogger("CET-Integration-Test")

TEST_DATA_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "test_data.json")
SMALL_ENCODER = EncoderConfig(n_blocks=1, n_heads=2, d_model=8, d_ff=16)
SMALL_TRAIN = TrainConfig(epochs=6, batch_size=32, warmup_epochs=2, patience=3, encoder=SMALL_ENCODER, seed=1)

with open(TEST_DATA_FILE, 'r') as f:
    TEST_DATA = json.load(f)


def _write(path, text):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return path


def _small_synth(n=120, d=3, seed=0, **kwargs):
    return generate_synthetic(SynthConfig(n=n, d=d, seed=seed, **kwargs))


# --- dataset ---

def test_load_csv_three_rows():
    with tempfile.TemporaryDirectory() as tmp:
        ds = load_csv(_write(os.path.join(tmp, 'd.csv'), "t,yf,x0\n1,2.0,0.5\n0,1.0,-0.5\n1,3.0,0.0\n"))
    assert (ds.n, ds.d) == (3, 1)
    assert ds.treatment.tolist() == [1, 0, 1]
    assert ds.y_factual.tolist() == [2.0, 1.0, 3.0]
    assert ds.covariates[:, 0].tolist() == [0.5, -0.5, 0.0]
    assert not ds.has_ground_truth


def test_load_csv_errors():
    with tempfile.TemporaryDirectory() as tmp:
        with pytest.raises(SchemaError) as info:
            load_csv(_write(os.path.join(tmp, 'a.csv'), "yf,x0\n1.0,0.5\n"))
        assert info.value.column == 't'
        with pytest.raises(ParseError) as info:
            load_csv(_write(os.path.join(tmp, 'b.csv'), "t,yf,x0\n1,2.0,0.5\n0,abc,1.0\n"))
        assert (info.value.row, info.value.column) == (2, 'yf')
        with pytest.raises(ValidationError):
            load_csv(_write(os.path.join(tmp, 'c.csv'), "t,yf,x0\n2,2.0,0.5\n"))


def test_csv_write_and_reload_keeps_ground_truth():
    ds = _small_synth(n=20)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'synth.csv')
        write_csv(ds, path)
        header = open(path).readline().strip().split(',')
        loaded = load_csv(path)
    assert header == ['t', 'yf', 'ycf', 'mu0', 'mu1', 'x0', 'x1', 'x2']
    assert np.array_equal(loaded.covariates, ds.covariates)
    assert np.array_equal(loaded.mu1, ds.mu1)


def test_standardize_fixtures():
    for case in TEST_DATA['standardize']:
        column = np.array(case['column'])
        ds = Dataset(column[:, None], np.arange(len(column)) % 2, np.zeros(len(column)))
        scaled, scaler = standardize(ds)
        assert np.allclose(scaled.covariates[:, 0], case['expected'])
    with pytest.raises(SizingError):
        standardize(Dataset(np.ones((1, 1)), [1], [0.0]))


def test_standardize_is_idempotent():
    once, _ = standardize(_small_synth(n=50, bias_strength=2.0))
    twice, scaler = standardize(once)
    assert np.max(np.abs(twice.covariates - once.covariates)) < 1e-12
    assert np.allclose(scaler.mean, 0.0, atol=1e-12) and np.allclose(scaler.sd, 1.0, atol=1e-12)


def test_split_sizes_fixtures():
    for case in TEST_DATA['split_sizes']:
        assert list(split_sizes(case['n'], case['ratio'])) == case['expected']
    with pytest.raises(SizingError):
        split_sizes(100, (60, 30, 20))


def test_split_partitions_and_is_deterministic():
    ds = _small_synth(n=100, bias_strength=1.0)
    a, b = split(ds, (61, 27, 10), seed=4), split(ds, (61, 27, 10), seed=4)
    for name in ('train', 'valid', 'test'):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    joined = np.concatenate([a.train, a.valid, a.test])
    assert sorted(joined.tolist()) == list(range(100))
    assert (len(a.train), len(a.valid), len(a.test)) == (63, 27, 10)
    assert set(ds.treatment[a.train]) == {0, 1}


def test_synthetic_generator_properties():
    ds = generate_synthetic(SynthConfig(n=200, d=4, effect_fn='constant', tau=3.0, noise_sd=0.0, seed=2))
    assert np.allclose(ds.mu1 - ds.mu0, 3.0)
    assert np.array_equal(ds.y_factual, np.where(ds.treatment == 1, ds.mu1, ds.mu0))
    rct = generate_synthetic(SynthConfig(n=10000, d=5, bias_strength=0.0, seed=3))
    assert abs(rct.treatment.mean() - 0.5) < 0.02
    biased = generate_synthetic(SynthConfig(n=2000, d=5, bias_strength=5.0, seed=4))
    score = biased.covariates.sum(axis=1)
    assert score[biased.treatment == 1].mean() > score[biased.treatment == 0].mean()
    again = generate_synthetic(SynthConfig(n=200, d=4, effect_fn='constant', tau=3.0, noise_sd=0.0, seed=2))
    assert np.array_equal(again.covariates, ds.covariates)
    with pytest.raises(SizingError):
        SynthConfig(n=2)


def test_overlap_check_warnings():
    assert overlap_check(_small_synth(n=1000, d=3, bias_strength=0.0)) == []
    x = np.random.default_rng(0).standard_normal((100, 2))
    t = np.zeros(100, dtype=int)
    t[:2] = 1
    warnings = overlap_check(Dataset(x, t, np.zeros(100)))
    assert any('arm t=1' in w for w in warnings)
    warnings = overlap_check(_small_synth(n=1000, d=3, bias_strength=10.0))
    assert any('propensity' in w for w in warnings)


# --- metrics ---

def test_ite_and_ate_truth():
    ds = generate_synthetic(SynthConfig(n=50, d=2, tau=3.0, noise_sd=0.0, seed=1))
    assert np.allclose(ite_true(ds), 3.0) and np.isclose(ate_true(ds), 3.0)
    same = Dataset(np.zeros((3, 1)), [1, 0, 1], [1.0, 2.0, 3.0], mu0=[1.0, 2.0, 3.0], mu1=[1.0, 2.0, 3.0])
    assert np.array_equal(ite_true(same), np.zeros(3))
    with pytest.raises(GroundTruthError):
        ite_true(Dataset(np.zeros((2, 1)), [1, 0], [1.0, 2.0]))


def test_sqrt_pehe_fixtures():
    for case in TEST_DATA['sqrt_pehe']:
        assert np.isclose(sqrt_pehe(case['pred'], case['truth']), case['expected'])
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(10), rng.standard_normal(10)
    assert sqrt_pehe(a, b) == sqrt_pehe(b, a) > 0
    assert np.isclose(sqrt_pehe(a + 0.7, a), 0.7)


def test_policy_risk_fixtures():
    for case in TEST_DATA['policy_risk']:
        value = policy_risk(case['y0_hat'], case['y1_hat'], case['t'], case['y'])
        assert np.isclose(value, case['expected']), case['name']
    with pytest.raises(ScalingError):
        policy_risk([0.0, 0.0], [1.0, 1.0], [1, 0], [2.0, 0.5])


def _bounded_oracle_dataset(n=50, seed=0):
    rng = np.random.default_rng(seed)
    mu0, mu1 = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    t = np.arange(n) % 2
    return Dataset(rng.standard_normal((n, 2)), t, np.where(t == 1, mu1, mu0), mu0=mu0, mu1=mu1)


def test_oracle_predictions_score_perfectly():
    ds = _bounded_oracle_dataset()
    report = evaluate_predictions(ds, ds.mu0, ds.mu1, split='all', method='oracle')
    assert report.sqrt_pehe == 0.0 and report.ate_error == 0.0
    assert report.policy_risk is not None

    oracle_policy = ds.mu1 > ds.mu0
    best = policy_risk_true(oracle_policy, ds.mu0, ds.mu1)
    per_unit_best = 1.0 - np.mean([max(a, b) for a, b in zip(ds.mu0, ds.mu1)])
    assert np.isclose(best, per_unit_best)
    rng = np.random.default_rng(1)
    for _ in range(200):
        assert policy_risk_true(rng.uniform(size=ds.n) < 0.5, ds.mu0, ds.mu1) >= best - 1e-12


def test_group_kl_properties():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((50, 3))
    assert group_kl(a, a.copy()) < 1e-9
    g0, g1 = rng.normal(0, 1, (10000, 1)), rng.normal(1, 1, (10000, 1))
    assert abs(group_kl(g1, g0) - 0.5) < 0.05
    assert np.isclose(group_kl(g1 * 3.0, g0 * 3.0), group_kl(g1, g0), rtol=1e-6)
    with pytest.raises(GroupError):
        group_kl(a[:1], a)


def test_eval_report_round_trip_and_finiteness():
    report = EvalReport(split='test', method='m', n=3, factual_mse=0.5, ate_pred=1.0, sqrt_pehe=0.2)
    assert EvalReport.from_dict(report.to_dict()) == report
    with pytest.raises(NumericError):
        EvalReport(split='test', method='m', n=3, factual_mse=float('nan'), ate_pred=1.0)


# --- baselines ---

def _linear_dataset(n=200, d=5, seed=0, heterogeneous=True):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    t = (rng.uniform(size=n) < 0.5).astype(int)
    beta, gamma = rng.standard_normal(d), rng.standard_normal(d)
    mu0 = x @ beta
    mu1 = mu0 + 3.0 + (x @ gamma if heterogeneous else 0.0)
    return Dataset(x, t, np.where(t == 1, mu1, mu0), mu0=mu0, mu1=mu1)


def test_ols_lr1_recovers_constant_effect():
    ds = _linear_dataset(heterogeneous=False)
    prediction = ols_lr1(ds, split(ds, (61, 27, 10), seed=0))
    assert np.allclose(prediction.ite, 3.0)
    assert sqrt_pehe(prediction.ite, ite_true(ds)) < 1e-8


def test_ols_lr2_recovers_heterogeneous_effect():
    ds = _linear_dataset()
    splits = split(ds, (61, 27, 10), seed=0)
    prediction = ols_lr2(ds, splits)
    assert sqrt_pehe(prediction.ite, ite_true(ds)) < 1e-6
    assert sqrt_pehe(ols_lr1(ds, splits).ite, ite_true(ds)) > 0.1


def test_ols_ridge_fallback_on_duplicate_columns():
    ds = _linear_dataset(heterogeneous=False)
    x = np.column_stack([ds.covariates, ds.covariates[:, 0]])
    dup = Dataset(x, ds.treatment, ds.y_factual, mu0=ds.mu0, mu1=ds.mu1)
    prediction = ols_lr1(dup, split(dup, (61, 27, 10), seed=0))
    assert np.allclose(prediction.ite, 3.0, atol=1e-5)


def test_ols_lr2_small_arm_falls_back_to_ridge():
    ds = _linear_dataset(n=200, d=5, seed=1)
    treated = np.flatnonzero(ds.treatment == 1)
    control = np.flatnonzero(ds.treatment == 0)
    # five treated units for d=5 is below the d + 2 needed for plain least squares
    splits = SplitIndices(np.sort(np.concatenate([treated[:5], control[:80]])), control[80:90], treated[5:])
    records = []
    handler = logging.Handler(logging.WARNING)
    handler.emit = records.append
    logging.getLogger('baselines').addHandler(handler)
    try:
        prediction = ols_lr2(ds, splits)
    finally:
        logging.getLogger('baselines').removeHandler(handler)
    messages = [r.getMessage() for r in records]
    assert any('OLS/LR2 arm 1' in m and 'ridge' in m for m in messages)
    assert not any('OLS/LR2 arm 0' in m for m in messages)
    assert np.all(np.isfinite(prediction.y1))
    train = ds.subset(splits.train)
    rows = train.treatment == 1
    # the ridge fit still interpolates the five treated units
    assert np.allclose(prediction.y1[splits.train][rows], train.y_factual[rows], atol=1e-4)
    assert np.allclose(prediction.y0, ds.mu0, atol=1e-8)


def test_ols_lr2_matches_lr1_on_additive_effects():
    squared = {'lr1': [], 'lr2': []}
    for seed in range(40):
        ds = _linear_dataset(n=400, d=1, seed=seed, heterogeneous=False)
        noise = np.random.default_rng(100 + seed).normal(0.0, 0.5, ds.n)
        noisy = Dataset(ds.covariates, ds.treatment, ds.y_factual + noise, mu0=ds.mu0, mu1=ds.mu1)
        splits = split(noisy, (61, 27, 10), seed=seed)
        squared['lr1'].append(sqrt_pehe(ols_lr1(noisy, splits).ite, ite_true(noisy)) ** 2)
        squared['lr2'].append(sqrt_pehe(ols_lr2(noisy, splits).ite, ite_true(noisy)) ** 2)
    lr1, lr2 = np.sqrt(np.mean(squared['lr1'])), np.sqrt(np.mean(squared['lr2']))
    logger.info(f"additive family sqrt PEHE: LR1 {lr1:.4f}, LR2 {lr2:.4f}")
    assert lr2 <= 2.0 * lr1 and lr1 <= 2.0 * lr2


def test_ols_lr1_zero_effect_rct_coefficient():
    rng = np.random.default_rng(7)
    n = 2000
    x = rng.standard_normal((n, 3))
    t = (rng.uniform(size=n) < 0.5).astype(int)
    y = x @ np.array([1.0, -0.5, 0.25]) + rng.normal(0.0, 1.0, n)
    ds = Dataset(x, t, y)
    splits = split(ds, (61, 27, 10), seed=7)
    coef = ols_lr1(ds, splits).ite[0]
    # sampling sd of the t coefficient with unit noise and balanced arms
    sd = 2.0 / np.sqrt(len(splits.train))
    assert abs(coef) < 3.0 * sd


def _knn_dataset():
    x = np.array([[0.0], [1.0], [2.0], [0.0], [5.0], [9.0], [1.0], [7.0]])
    t = np.array([1, 1, 1, 0, 0, 0, 1, 0])
    y = np.array([10.0, 11.0, 12.0, 1.0, 2.0, 3.0, 20.0, 30.0])
    splits = SplitIndices(np.arange(6), np.array([6]), np.array([7]))
    return Dataset(x, t, y), splits


def test_knn_exact_duplicate_and_full_arm():
    ds, splits = _knn_dataset()
    one = knn_ite(ds, splits, k=1)
    assert one.y0[0] == 1.0
    assert one.y1[3] == 10.0
    assert one.y1[0] == 10.0
    full = knn_ite(ds, splits, k=3)
    assert np.allclose(full.y0[ds.treatment == 1], 2.0)
    assert np.allclose(full.y1[ds.treatment == 0], 11.0)
    clamped = knn_ite(ds, splits, k=50)
    assert np.array_equal(clamped.y0, full.y0) and np.array_equal(clamped.y1, full.y1)


def test_knn_invariant_to_duplicated_training_set():
    ds, splits = _knn_dataset()
    doubled = Dataset(np.vstack([ds.covariates[:6], ds.covariates]), np.concatenate([ds.treatment[:6], ds.treatment]),
                      np.concatenate([ds.y_factual[:6], ds.y_factual]))
    doubled_splits = SplitIndices(np.arange(12), np.array([12]), np.array([13]))
    a = knn_ite(ds, splits, k=1)
    b = knn_ite(doubled, doubled_splits, k=1)
    assert np.array_equal(a.ite, b.ite[6:])
    # for k > 1 every neighbour counts twice, so doubling the data halves the effective k
    assert np.array_equal(knn_ite(doubled, doubled_splits, k=2).ite[6:], a.ite)
    pair = knn_ite(ds, splits, k=2)
    assert np.array_equal(knn_ite(doubled, doubled_splits, k=4).ite[6:], pair.ite)
    assert not np.array_equal(knn_ite(doubled, doubled_splits, k=2).ite[6:], pair.ite)
    assert pair.y0[0] == 1.5


def test_baselines_need_both_arms():
    ds, _ = _knn_dataset()
    with pytest.raises(GroupError):
        run_baselines(ds, SplitIndices(np.array([0, 1, 2]), np.array([3]), np.array([4])))


# --- trainer ---

def test_stratified_batches_cover_both_arms():
    rng = np.random.default_rng(0)
    t = np.array([1, 1, 1] + [0] * 40)
    batches = stratified_batches(t, 8, rng)
    assert len(batches) == 5
    seen = set()
    for batch in batches:
        assert len(set(batch.tolist())) == len(batch)
        assert (t[batch] == 1).sum() >= 2 and (t[batch] == 0).sum() >= 2
        seen.update(batch.tolist())
    assert seen == set(range(len(t)))
    with pytest.raises(GroupError):
        stratified_batches(np.array([1, 0, 0, 0]), 4, rng)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=2)
    with pytest.raises(ConfigError):
        TrainConfig(alpha=0, beta=0, gamma=0)
    with pytest.raises(ConfigError):
        TrainConfig(ablation='no_decoder')
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({'alpha': 1.0, 'momentum': 0.9})
    cfg = TrainConfig.from_dict(SMALL_TRAIN.to_dict())
    assert cfg == SMALL_TRAIN
    assert replace(SMALL_TRAIN, ablation='no_discriminator').effective_beta == 0.0


def test_training_is_deterministic():
    ds = _small_synth(bias_strength=2.0)
    splits = split(ds, (61, 27, 10), seed=1)
    with tempfile.TemporaryDirectory() as tmp:
        paths = []
        for i in range(2):
            _, trace = train(ds, splits, SMALL_TRAIN)
            paths.append(os.path.join(tmp, f"trace{i}.csv"))
            trace.to_csv(paths[-1])
        assert open(paths[0], 'rb').read() == open(paths[1], 'rb').read()
        reloaded = TrainTrace.from_csv(paths[0])
    assert len(reloaded) == len(trace) and reloaded.records == trace.records


def test_no_discriminator_matches_zero_beta():
    ds = _small_synth(bias_strength=2.0)
    splits = split(ds, (61, 27, 10), seed=0)
    _, ablated = train(ds, splits, replace(SMALL_TRAIN, ablation='no_discriminator'))
    _, zero_beta = train(ds, splits, replace(SMALL_TRAIN, beta=0.0))
    pd.testing.assert_frame_equal(ablated.to_frame(), zero_beta.to_frame())


def test_reconstruction_only_training_reduces_reco_loss():
    ds = _small_synth(n=32, d=4, seed=3)
    splits = split(ds, (61, 27, 10), seed=3)
    cfg = TrainConfig(alpha=1.0, beta=0.0, gamma=0.0, epochs=500, batch_size=32, lr=1e-2, n_critic=0,
                      warmup_epochs=0, patience=500, seed=3,
                      encoder=EncoderConfig(n_blocks=1, n_heads=2, d_model=16, d_ff=32))
    _, trace = train(ds, splits, cfg)
    l_reco = trace.column('l_reco')
    assert len(l_reco) == 500
    assert l_reco[-1] <= 0.1 * l_reco[0]


def test_training_keeps_best_epoch_and_clip_bound():
    ds = _small_synth(bias_strength=1.0)
    splits = split(ds, (61, 27, 10), seed=0)
    model, trace = train(ds, splits, SMALL_TRAIN)
    assert 1 <= len(trace) <= SMALL_TRAIN.epochs
    post_warmup = [r for r in trace.records if r.epoch > SMALL_TRAIN.warmup_epochs]
    best = min(post_warmup, key=lambda r: r.val_mse)
    assert trace.best_epoch == best.epoch
    valid = ds.subset(splits.valid)
    y0, y1 = model.predict(valid.covariates)
    assert factual_mse(y0, y1, valid.treatment, valid.y_factual) == best.val_mse
    assert max(np.abs(p.data).max() for p in model.critic_params()) <= SMALL_TRAIN.clip


def test_gradient_penalty_critic_gives_a_usable_gap():
    ds = _small_synth(n=200, d=3, seed=5, bias_strength=3.0)
    splits = split(ds, (61, 27, 10), seed=5)
    _, clipped = train(ds, splits, SMALL_TRAIN)
    _, penalized = train(ds, splits, replace(SMALL_TRAIN, critic_reg='gp', critic_lr=1e-3, beta=10.0))

    def largest_gap(trace):
        return max(abs(r.wass) for r in trace.records if r.epoch > SMALL_TRAIN.warmup_epochs)

    # clipped weights bound the critic's Lipschitz constant by about 0.0023 at d_model=8
    assert largest_gap(clipped) < 0.02
    assert largest_gap(penalized) > 10.0 * largest_gap(clipped)


def test_train_needs_two_units_per_arm():
    ds = Dataset(np.random.default_rng(0).standard_normal((20, 2)), [1] + [0] * 19, np.zeros(20))
    splits = SplitIndices(np.arange(12), np.arange(12, 17), np.arange(17, 20))
    with pytest.raises(GroupError):
        train(ds, splits, SMALL_TRAIN)


def test_sgd_update_direction_invariant_to_weight_scale():
    rng = np.random.default_rng(0)
    x, t, y = rng.standard_normal((8, 3)), np.array([1, 0] * 4), rng.standard_normal(8)
    grads = []
    for scale in (1.0, 2.5):
        cfg = replace(SMALL_TRAIN, alpha=scale, beta=scale, gamma=scale, optimizer='sgd')
        model = build_model(3, cfg, np.random.default_rng(5))
        loss, _ = joint_loss(model, x, t, y, cfg)
        loss.backward()
        grads.append(np.concatenate([p.grad.ravel() for p in model.trainable_params()]))
    assert np.allclose(grads[1], 2.5 * grads[0], rtol=1e-10, atol=1e-14)


def test_model_checkpoint_round_trip():
    ds = _small_synth()
    splits = split(ds, (61, 27, 10), seed=0)
    model, _ = train(ds, splits, replace(SMALL_TRAIN, epochs=3))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'checkpoint.json')
        model.save(path, {'seed': 1})
        loaded = CETransformerModel.load(path)
        _, metadata = load_checkpoint(path)
    assert metadata['seed'] == 1
    for a, b in zip(model.predict(ds.covariates), loaded.predict(ds.covariates)):
        assert np.array_equal(a, b)
    assert np.array_equal(model.embed(ds.covariates), loaded.embed(ds.covariates))


def test_checkpoint_file_errors():
    with tempfile.TemporaryDirectory() as tmp:
        with pytest.raises(RunFileError):
            load_checkpoint(os.path.join(tmp, 'missing.json'))
        bad = _write(os.path.join(tmp, 'bad.json'), '{"format": "other"}')
        with pytest.raises(RunFileError):
            load_checkpoint(bad)
        path = os.path.join(tmp, 'ok.json')
        save_checkpoint(path, {'w': np.arange(6.0).reshape(2, 3)}, {'note': 'x'})
        tensors, metadata = load_checkpoint(path)
        assert tensors['w'].shape == (2, 3) and metadata == {'note': 'x'}
        blob = _write(os.path.join(tmp, 'hello.txt'), 'hello\n')
        assert content_hash(blob) == 'ce013625030ba8dba906f756967f9e9ca394464a'
        with pytest.raises(RunFileError):
            RunStore(os.path.join(tmp, 'nope'), create=False)


# --- configuration and reporting ---

def test_settings_load_merge_and_validate():
    with tempfile.TemporaryDirectory() as tmp:
        missing = config_manager.load_settings(os.path.join(tmp, 'missing.json'))
        assert missing == config_manager.load_default_settings()
        path = _write(os.path.join(tmp, 's.json'), json.dumps({'train': {'epochs': 7}, 'encoder': {'d_model': 16}}))
        settings = config_manager.load_settings(path)
        assert settings['train']['epochs'] == 7 and settings['train']['alpha'] == 1.0
        assert settings['encoder']['n_heads'] == 2
        with pytest.raises(ConfigError):
            config_manager.load_settings(_write(os.path.join(tmp, 'bad.json'), '{"train": '))
    cfg = config_manager.train_config_from_settings(settings, {'n_blocks': 1}, beta=0.5, gamma=None)
    assert (cfg.epochs, cfg.beta, cfg.gamma, cfg.encoder.n_blocks, cfg.encoder.d_model) == (7, 0.5, 1.0, 1, 16)
    broken = config_manager.merge_settings(settings, {'train': {'batch_size': 1}, 'eval': {'k': 0}})
    problems = config_manager.validate_settings(broken)
    assert any(p.startswith('train') for p in problems) and any('k must' in p for p in problems)
    assert config_manager.validate_settings(config_manager.load_default_settings()) == []


def test_mean_sd_aggregation():
    assert format_mean_sd(1.0, 0.5) == "1.000 ± 0.500"
    per_seed = {
        1: [{'method': 'm', 'split': 'test', 'sqrt_pehe': 1.0, 'factual_mse': 2.0}],
        2: [{'method': 'm', 'split': 'test', 'sqrt_pehe': 3.0, 'factual_mse': 2.0}],
    }
    summary = aggregate(merge_seed_reports(per_seed))
    row = summary.iloc[0]
    assert row['sqrt_pehe'] == f"2.000 ± {np.sqrt(2.0):.3f}"
    assert row['factual_mse'] == "2.000 ± 0.000"
    assert row['seeds'] == 2


def test_comparison_table_columns():
    table = comparison_table({'full': {'sqrt_pehe': 0.4}, 'no_discriminator': {'sqrt_pehe': 0.9}})
    assert list(table.columns) == ['metric', 'full', 'no_discriminator']
    assert table.iloc[0]['metric'] == 'sqrt_pehe'


# --- CLI ---

CLI_SETTINGS = {
    'train': {'epochs': 4, 'batch_size': 32, 'warmup_epochs': 1, 'patience': 3},
    'encoder': {'n_blocks': 1, 'n_heads': 2, 'd_model': 8, 'd_ff': 16},
}


def _cli(runner, tmp, *args):
    settings = os.path.join(tmp, 'settings.json')
    if not os.path.exists(settings):
        _write(settings, json.dumps(CLI_SETTINGS))
    return runner.invoke(cli, ['--settings', settings, *args], catch_exceptions=False)


def _synth(runner, tmp, name='d.csv', n=120):
    path = os.path.join(tmp, name)
    result = _cli(runner, tmp, 'synth', '--n', str(n), '--d', '3', '--bias', '1', '--seed', '7', '--out', path)
    assert result.exit_code == 0, result.output
    return path


def test_parse_helpers():
    assert parse_seeds('1..4') == [1, 2, 3, 4]
    assert parse_seeds('3,1,3') == [1, 3]
    assert parse_ratio('56/24/20') == (56.0, 24.0, 20.0)


def test_cli_synth_is_byte_identical():
    runner = CliRunner()
    with tempfile.TemporaryDirectory() as tmp:
        a = _synth(runner, tmp, 'a.csv', n=50)
        b = _synth(runner, tmp, 'b.csv', n=50)
        assert open(a, 'rb').read() == open(b, 'rb').read()
        frame = pd.read_csv(a)
        assert frame.shape == (50, 8)
        assert os.path.exists(os.path.join(tmp, 'manifest.synth.json'))
        result = _cli(runner, tmp, 'synth', '--n', '2', '--out', os.path.join(tmp, 'c.csv'))
        assert result.exit_code == 2


def test_cli_train_eval_report():
    runner = CliRunner()
    with tempfile.TemporaryDirectory() as tmp:
        data = _synth(runner, tmp)
        runs = {}
        for name, extra in (('full', []), ('no_disc', ['--ablation', 'no_discriminator'])):
            run_dir = os.path.join(tmp, name)
            result = _cli(runner, tmp, 'train', '--data', data, '--run-dir', run_dir, '--seed', '1', *extra)
            assert result.exit_code == 0, result.output
            for fname in ('manifest.json', 'checkpoint.json', 'trace.csv', 'splits.json', 'run.log'):
                assert os.path.exists(os.path.join(run_dir, fname)), fname
            result = _cli(runner, tmp, 'eval', '--run-dir', run_dir, '--with-baselines', '--oracle')
            assert result.exit_code == 0, result.output
            runs[name] = run_dir

        report = json.load(open(os.path.join(runs['full'], 'report.json')))
        splits = {(r['method'], r['split']) for r in report['reports']}
        assert {('cetransformer', 'train'), ('cetransformer', 'test'), ('knn', 'test'), ('oracle', 'train')} <= splits
        assert all(r['sqrt_pehe'] == 0.0 for r in report['reports'] if r['method'] == 'oracle')
        assert {'in-sample', 'out-sample'} <= {row['split'] for row in report['summary']}
        for fname in ('predictions.csv', 'embeddings.csv', 'attention.csv', 'report.md', 'manifest.eval.json'):
            assert os.path.exists(os.path.join(runs['full'], fname)), fname
        assert '±' in open(os.path.join(runs['full'], 'report.md'), encoding='utf-8').read()

        out = os.path.join(tmp, 'summary')
        result = _cli(runner, tmp, 'report', '--run-dir', runs['full'], '--run-dir', runs['no_disc'], '--out', out)
        assert result.exit_code == 0, result.output
        table = pd.read_csv(os.path.join(out, 'comparison.csv'))
        assert list(table.columns) == ['metric', 'full', 'no_disc']
        kl = pd.read_csv(os.path.join(out, 'kl_full.csv'))
        assert list(kl.columns) == ['epoch', 'group_kl'] and len(kl) <= 4


def test_cli_train_determinism_and_rerun():
    runner = CliRunner()
    with tempfile.TemporaryDirectory() as tmp:
        data = _synth(runner, tmp)
        traces = []
        for name, extra in (('a', ['--beta', '0']), ('b', ['--beta', '0']), ('c', ['--ablation', 'no_discriminator'])):
            run_dir = os.path.join(tmp, name)
            assert _cli(runner, tmp, 'train', '--data', data, '--run-dir', run_dir, '--seed', '3', *extra).exit_code == 0
            traces.append(open(os.path.join(run_dir, 'trace.csv'), 'rb').read())
        assert traces[0] == traces[1] == traces[2]

        manifest = os.path.join(tmp, 'a', 'manifest.json')
        checkpoint_before = open(os.path.join(tmp, 'a', 'checkpoint.json'), 'rb').read()
        result = _cli(runner, tmp, 'rerun', '--manifest', manifest)
        assert result.exit_code == 0, result.output
        assert open(os.path.join(tmp, 'a', 'trace.csv'), 'rb').read() == traces[0]
        assert open(os.path.join(tmp, 'a', 'checkpoint.json'), 'rb').read() == checkpoint_before


def test_cli_multi_seed_eval_aggregates():
    runner = CliRunner()
    with tempfile.TemporaryDirectory() as tmp:
        data = _synth(runner, tmp)
        run_dir = os.path.join(tmp, 'multi')
        result = _cli(runner, tmp, 'train', '--data', data, '--run-dir', run_dir, '--seeds', '1,2', '--workers', '1')
        assert result.exit_code == 0, result.output
        assert os.path.isdir(os.path.join(run_dir, 'seed_1')) and os.path.isdir(os.path.join(run_dir, 'seed_2'))
        assert _cli(runner, tmp, 'eval', '--run-dir', run_dir).exit_code == 0
        summary = json.load(open(os.path.join(run_dir, 'report.json')))['summary']
        assert all(row['seeds'] == 2 for row in summary)
        assert all('±' in row['sqrt_pehe'] for row in summary)
        assert os.path.exists(os.path.join(run_dir, 'seed_2', 'report.json'))


def test_cli_exit_codes():
    runner = CliRunner()
    with tempfile.TemporaryDirectory() as tmp:
        empty = os.path.join(tmp, 'empty')
        os.makedirs(empty)
        assert _cli(runner, tmp, 'report', '--run-dir', empty, '--out', os.path.join(tmp, 'o')).exit_code == 3
        assert _cli(runner, tmp, 'eval', '--run-dir', empty).exit_code == 3
        assert _cli(runner, tmp, 'train', '--run-dir', empty).exit_code == 2
        bad = _write(os.path.join(tmp, 'bad.json'), json.dumps({'train': {'batch_size': 1}}))
        result = runner.invoke(cli, ['--settings', bad, 'gradcheck'])
        assert result.exit_code == 2


def test_cli_gradcheck():
    runner = CliRunner()
    with tempfile.TemporaryDirectory() as tmp:
        result = _cli(runner, tmp, 'gradcheck', '--run-dir', os.path.join(tmp, 'gc'))
        assert result.exit_code == 0, result.output
        assert 'max relative error' in result.output
        record = json.load(open(os.path.join(tmp, 'gc', 'gradcheck.json')))
        assert record['passed'] and record['max_relative_error'] < 1e-4


def main():
    """Run every test in this module and log a PASS/FAIL summary."""
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    tests = [(name, fn) for name, fn in globals().items() if name.startswith('test_') and callable(fn)]
    passed = failed = 0
    for name, fn in tests:
        try:
            fn()
            logger.info(f"✓ PASS: {name}")
            passed += 1
        except Exception as e:
            logger.error(f"✗ FAIL: {name}: {type(e).__name__}: {e}")
            failed += 1
    logger.info(f"Integration tests: {passed} passed, {failed} failed")
    return 0 if failed == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
