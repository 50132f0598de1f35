# cli.py
"""Command-line entry point: synth, train, eval, report, ablate, sweep, gradcheck, rerun.

Every command writes its outputs under a run directory with stable file names
and records a manifest (command, resolved parameters, full configuration,
seeds, hashed inputs, outputs). ``train`` owns ``manifest.json``; the other
commands write ``manifest.<command>.json`` so they never replace it.
"""
import json
import logging
import os
import traceback
from dataclasses import asdict

import click
import numpy as np
import pandas as pd

import config_manager
from baselines import run_baselines
from checkpoint_manager import RunStore, load_checkpoint
from dataset import (Dataset, SplitIndices, generate_synthetic, load_csv, overlap_check, split,
                     write_csv)
from encoder import EncoderConfig
from errors import (CETransformerError, ConfigError, DimensionError, GroundTruthError, NumericError,
                    RunFileError)
from metrics import evaluate_predictions
from numeric_core import grad_check
from optim import OPTIMIZERS
from reporting import (METRIC_COLUMNS, aggregate, attention_frame, comparison_table, embedding_frame,
                       kl_series, label_splits, merge_seed_reports, prediction_frame, write_table)
from seed_runner import SeedJob, ablate_seed, run_seeds, train_seed
from trainer import (ABLATIONS, ADV_FLOWS, CRITIC_REGS, DTYPES, CETransformerModel, TrainConfig, TrainTrace,
                     build_model, evaluate_model, joint_loss, sweep as sweep_weights)

logger = logging.getLogger("CETransformer")

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_RUN_FILES = 3
EXIT_NUMERIC = 4
REPORT_METRICS = METRIC_COLUMNS + ('epochs', 'best_epoch', 'final_group_kl')
MODEL_METHODS = ('cetransformer',)


# --- logging ---

def _replace_handler(tag, handler):
    root = logging.getLogger()
    for existing in list(root.handlers):
        if getattr(existing, '_cet_tag', None) == tag:
            root.removeHandler(existing)
            existing.close()
    if handler is not None:
        handler._cet_tag = tag
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)


def configure_logging(verbose=False):
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    _replace_handler('stream', logging.StreamHandler())


def attach_run_log(store: RunStore):
    """Mirror the log into ``run.log`` of the run directory."""
    _replace_handler('file', logging.FileHandler(store.path('log'), encoding='utf-8'))


def reset_logging():
    """Drop the handlers installed for this invocation."""
    _replace_handler('file', None)
    _replace_handler('stream', None)


# --- error mapping ---

def exit_code_for(exc):
    if isinstance(exc, RunFileError):
        return EXIT_RUN_FILES
    if isinstance(exc, (NumericError, DimensionError)):
        return EXIT_NUMERIC
    if isinstance(exc, CETransformerError):
        return EXIT_CONFIG
    return EXIT_RUNTIME


class ErrorMappingGroup(click.Group):
    """Turns library exceptions into distinct exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except CETransformerError as e:
            logger.error(f"{type(e).__name__}: {e}")
            ctx.exit(exit_code_for(e))
        except Exception as e:
            logger.error(f"Unexpected error: {e}")
            logger.error(f"Traceback: {traceback.format_exc()}")
            ctx.exit(EXIT_RUNTIME)


# --- option parsing ---

def parse_seeds(value):
    """``"1..10"`` (inclusive) or ``"1,2,3"`` to a sorted list of distinct seeds."""
    if value is None:
        return None
    value = str(value).strip()
    try:
        if '..' in value:
            lo, hi = (int(part) for part in value.split('..', 1))
            seeds = list(range(lo, hi + 1))
        else:
            seeds = [int(part) for part in value.split(',') if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected 'a..b' or a comma list of integers, got '{value}'")
    if not seeds:
        raise click.BadParameter(f"no seeds in '{value}'")
    return sorted(set(seeds))


def parse_ratio(value):
    """``"61/27/10"`` to three floats."""
    if value is None:
        return None
    try:
        parts = [float(p) for p in str(value).replace(',', '/').split('/')]
    except ValueError:
        raise click.BadParameter(f"expected train/valid/test percentages like 61/27/10, got '{value}'")
    if len(parts) != 3:
        raise click.BadParameter(f"expected three percentages, got '{value}'")
    return tuple(parts)


def parse_floats(value, name):
    try:
        values = [float(p) for p in str(value).split(',') if p.strip()]
    except ValueError:
        raise click.BadParameter(f"{name}: expected a comma list of numbers, got '{value}'")
    if not values:
        raise click.BadParameter(f"{name}: empty list")
    return values


def _settings(ctx):
    return ctx.obj['settings']


def _ratio(settings, ratio):
    return parse_ratio(ratio) or tuple(settings['eval']['ratio'])


def _json_records(frame: pd.DataFrame):
    return json.loads(frame.to_json(orient='records'))


ENCODER_OPTIONS = ('n_blocks', 'n_heads', 'd_model', 'd_ff', 'pooling')


def training_options(f):
    """Flags shared by train, ablate and sweep; unset flags fall back to settings."""
    options = [
        click.option('--alpha', type=float, help='Weight of the reconstruction loss.'),
        click.option('--beta', type=float, help='Weight of the adversarial balance loss.'),
        click.option('--gamma', type=float, help='Weight of the factual outcome loss.'),
        click.option('--epochs', type=int),
        click.option('--batch-size', type=int),
        click.option('--lr', type=float, help='Learning rate of the joint step.'),
        click.option('--critic-lr', type=float),
        click.option('--n-critic', type=int, help='Critic steps per joint step.'),
        click.option('--clip', type=float, help='Critic weight clipping bound.'),
        click.option('--critic-reg', type=click.Choice(CRITIC_REGS)),
        click.option('--gp-weight', type=float),
        click.option('--warmup', 'warmup_epochs', type=int, help='Reconstruction-only epochs.'),
        click.option('--patience', type=int),
        click.option('--adv-flow', type=click.Choice(ADV_FLOWS)),
        click.option('--ablation', type=click.Choice(ABLATIONS)),
        click.option('--optimizer', type=click.Choice(sorted(OPTIMIZERS))),
        click.option('--dtype', type=click.Choice(sorted(DTYPES))),
        click.option('--n-blocks', type=int),
        click.option('--n-heads', type=int),
        click.option('--d-model', type=int),
        click.option('--d-ff', type=int),
        click.option('--pooling', type=click.Choice(['mean', 'cls'])),
        click.option('--standardize/--no-standardize', 'standardize_covariates', default=None),
        click.option('--outcome-scaling/--no-outcome-scaling', 'standardize_outcome', default=None),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _pop_training(params):
    """Split command kwargs into (train overrides, encoder overrides, the rest)."""
    names = set(TrainConfig.__dataclass_fields__) - {'encoder', 'seed'}
    train = {k: params.pop(k) for k in list(params) if k in names}
    encoder = {k: params.pop(k) for k in list(params) if k in ENCODER_OPTIONS}
    return train, encoder, params


def _train_config(settings, train_overrides, encoder_overrides, seed=None):
    return config_manager.train_config_from_settings(settings, encoder_overrides, seed=seed, **train_overrides)


def _seed_list(seed, seeds, cfg: TrainConfig):
    return parse_seeds(seeds) or [cfg.seed if seed is None else seed]


def _config_record(settings, **extra):
    return {'settings': settings, **extra}


# --- CLI ---

@click.group(cls=ErrorMappingGroup)
@click.option('--settings', 'settings_path', type=click.Path(dir_okay=False, resolve_path=True),
              help='Settings JSON merged over the built-in defaults.')
@click.option('--verbose', '-v', is_flag=True, help='Debug logging, including per-batch losses.')
@click.pass_context
def cli(ctx, settings_path, verbose):
    """Counterfactual effect estimation with a self-attention encoder and a balancing critic."""
    configure_logging(verbose)
    ctx.call_on_close(reset_logging)
    settings = config_manager.load_settings(settings_path)
    problems = config_manager.validate_settings(settings)
    if problems:
        raise ConfigError("invalid settings: " + "; ".join(problems))
    ctx.ensure_object(dict)
    ctx.obj['settings'] = settings


@cli.command()
@click.option('--n', 'n', type=int, help='Units.')
@click.option('--d', 'd', type=int, help='Covariates.')
@click.option('--bias', type=float, help='Selection bias strength.')
@click.option('--effect', type=click.Choice(['constant', 'linear', 'nonlinear']))
@click.option('--tau', type=float, help='Constant effect size.')
@click.option('--noise', type=float, help='Outcome noise sd.')
@click.option('--seed', type=int)
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Dataset CSV to write.')
@click.option('--run-dir', type=click.Path(file_okay=False), help='Manifest directory (default: next to --out).')
@click.pass_context
def synth(ctx, n, d, bias, effect, tau, noise, seed, out, run_dir):
    """Generate a synthetic dataset with known potential outcomes."""
    settings = _settings(ctx)
    cfg = config_manager.synth_config_from_settings(settings, n=n, d=d, bias_strength=bias, effect_fn=effect,
                                                    tau=tau, noise_sd=noise, seed=seed)
    out = os.path.abspath(out)
    store = RunStore(run_dir or os.path.dirname(out))
    attach_run_log(store)
    ds = generate_synthetic(cfg)
    write_csv(ds, out)
    warnings = overlap_check(ds)
    store.write_manifest('synth', dict(ctx.params), _config_record(settings, synth=asdict(cfg), warnings=warnings),
                         seeds=[cfg.seed], outputs=[out], name='manifest.synth.json')
    click.echo(f"Wrote {ds.n} units x {ds.d} covariates to {out}")


@cli.command()
@click.option('--data', required=True, type=click.Path(exists=True, dir_okay=False, resolve_path=True))
@click.option('--run-dir', required=True, type=click.Path(file_okay=False, resolve_path=True))
@click.option('--seed', type=int, help='Single seed (default: train.seed from settings).')
@click.option('--seeds', help="Several seeds, '1..10' or '1,2,3'; one seed_<n> subdirectory each.")
@click.option('--workers', type=int, help='Worker processes for multi-seed runs.')
@click.option('--ratio', help='train/valid/test percentages, e.g. 61/27/10.')
@training_options
@click.pass_context
def train(ctx, **params):
    """Train the model and write checkpoint, splits and trace per seed."""
    settings = _settings(ctx)
    train_overrides, encoder_overrides, params = _pop_training(dict(params))
    cfg = _train_config(settings, train_overrides, encoder_overrides)
    seeds = _seed_list(params['seed'], params['seeds'], cfg)
    ratio = _ratio(settings, params['ratio'])

    store = RunStore(params['run_dir'])
    attach_run_log(store)
    ds = load_csv(params['data'])
    multi = len(seeds) > 1
    jobs = [SeedJob(s, ds, cfg, ratio, run_dir=store.child(s).run_dir if multi else store.run_dir)
            for s in seeds]
    results = run_seeds(train_seed, jobs, params['workers'])

    outputs = []
    for result in results:
        seed_store = RunStore(result.run_dir)
        outputs += [seed_store.path(name) for name in ('checkpoint', 'trace', 'splits')]
        click.echo(f"seed {result.seed}: {len(result.trace)} epochs, best epoch {result.trace.best_epoch}"
                   + (" (early stop)" if result.trace.stopped_early else ""))
    store.write_manifest('train', dict(ctx.params), _config_record(settings, train=cfg.to_dict(), ratio=list(ratio)),
                         seeds=seeds, inputs=[params['data']], outputs=outputs)


def oracle_outcomes(ds: Dataset):
    """True potential outcomes: mu0/mu1, else factual and counterfactual arranged by arm."""
    if ds.mu0 is not None and ds.mu1 is not None:
        return np.asarray(ds.mu0), np.asarray(ds.mu1)
    if ds.y_cf is not None:
        t = ds.treatment
        return np.where(t == 0, ds.y_factual, ds.y_cf), np.where(t == 1, ds.y_factual, ds.y_cf)
    raise GroundTruthError("--oracle needs mu0/mu1 or ycf columns in the data")


def _score_split_rows(ds, splits, y0, y1, method, threshold):
    rows = []
    for split_name in ('train', 'test'):
        idx = getattr(splits, split_name)
        rows.append(evaluate_predictions(ds.subset(idx), y0[idx], y1[idx], split=split_name, method=method,
                                         threshold=threshold))
    return rows


def _run_seed_stores(run: RunStore):
    return run.seed_dirs() or [run]


def _token_names(ds: Dataset, cfg: TrainConfig):
    names = list(ds.feature_names)
    return ['cls'] + names if cfg.encoder.pooling == 'cls' else names


def _evaluate_store(store, ds, threshold, with_baselines, oracle, k):
    tensors, metadata = load_checkpoint(store.path('checkpoint'))
    model = CETransformerModel.from_checkpoint(tensors, metadata)
    splits = SplitIndices.from_dict(store.read_json('splits'))
    reports = [evaluate_model(model, ds, splits.train, 'train', threshold),
               evaluate_model(model, ds, splits.test, 'test', threshold)]
    if with_baselines:
        for prediction in run_baselines(ds, splits, k):
            reports += _score_split_rows(ds, splits, prediction.y0, prediction.y1, prediction.method, threshold)
    if oracle:
        y0, y1 = oracle_outcomes(ds)
        reports += _score_split_rows(ds, splits, y0, y1, 'oracle', threshold)

    units = np.arange(ds.n)
    y0, y1 = model.predict(ds.covariates)
    outputs = [store.path('predictions'), store.path('embeddings.csv')]
    prediction_frame(units, ds.treatment, ds.y_factual, y0, y1).to_csv(outputs[0], index=False,
                                                                       float_format='%.17g', lineterminator='\n')
    embedding_frame(units, ds.treatment, model.embed(ds.covariates)).to_csv(outputs[1], index=False,
                                                                            float_format='%.17g', lineterminator='\n')
    matrix = model.attention_map(ds.covariates)
    if matrix is not None:
        outputs.append(store.path('attention.csv'))
        attention_frame(matrix, _token_names(ds, model.config)).to_csv(outputs[-1], index=False,
                                                                       float_format='%.17g', lineterminator='\n')
    return int(metadata.get('seed', model.config.seed)), [r.to_dict() for r in reports], outputs


@cli.command('eval')
@click.option('--run-dir', required=True, type=click.Path(file_okay=False, resolve_path=True))
@click.option('--data', type=click.Path(exists=True, dir_okay=False, resolve_path=True),
              help='Dataset CSV (default: the one recorded by train).')
@click.option('--with-baselines', is_flag=True, help='Add OLS/LR1, OLS/LR2 and k-NN rows.')
@click.option('--oracle', is_flag=True, help='Add rows scoring the true potential outcomes.')
@click.option('--threshold', type=float, help='Policy threshold on the predicted effect.')
@click.option('--k', 'k', type=int, help='Neighbours for the k-NN baseline.')
@click.pass_context
def evaluate(ctx, run_dir, data, with_baselines, oracle, threshold, k):
    """Score a trained run on its train (in-sample) and test (out-sample) splits."""
    settings = _settings(ctx)
    run = RunStore(run_dir, create=False)
    attach_run_log(run)
    manifest = run.read_manifest()
    data = data or manifest['params']['data']
    threshold = settings['eval']['threshold'] if threshold is None else threshold
    k = settings['eval']['k'] if k is None else k
    ds = load_csv(data)

    stores = _run_seed_stores(run)
    per_seed, outputs = {}, []
    for store in stores:
        seed, reports, written = _evaluate_store(store, ds, threshold, with_baselines, oracle, k)
        per_seed[seed] = reports
        outputs += written
        if store is not run:
            store.write_json('report', {'seed': seed, 'reports': reports})
            outputs.append(store.path('report'))

    frame = merge_seed_reports(per_seed)
    summary = label_splits(aggregate(frame))
    config = _config_record(settings, train=manifest['config'].get('train'), threshold=threshold, k=k)
    run.write_json('report', {'command': 'eval', 'config': config,
                              'reports': [{**r, 'seed': s} for s, rows in sorted(per_seed.items()) for r in rows],
                              'summary': _json_records(summary)})
    write_table(summary, run.path('report.csv'), run.path('report.md'), title='Evaluation')
    outputs += [run.path('report'), run.path('report.csv'), run.path('report.md')]
    run.write_manifest('eval', dict(ctx.params), config, seeds=sorted(per_seed), inputs=[data], outputs=outputs,
                       name='manifest.eval.json')
    click.echo(summary.to_string(index=False))


def _run_metrics(store: RunStore, out_dir, name):
    """Mean test metrics of the model rows plus trace lengths; writes KL series into ``out_dir``."""
    metrics, written = {}, []
    if store.exists('report'):
        rows = [r for r in store.read_json('report').get('reports', [])
                if r.get('split') == 'test' and r.get('method') in MODEL_METHODS]
        for metric in METRIC_COLUMNS:
            values = [r[metric] for r in rows if r.get(metric) is not None]
            if values:
                metrics[metric] = float(np.mean(values))

    seed_stores = [s for s in _run_seed_stores(store) if s.exists('trace')]
    traces = []
    for seed_store in seed_stores:
        trace = TrainTrace.from_csv(seed_store.path('trace'))
        suffix = '' if seed_store is store else '_' + os.path.basename(seed_store.run_dir)
        path = os.path.join(out_dir, f"kl_{name}{suffix}.csv")
        kl_series(trace).to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
        written.append(path)
        traces.append(trace)
    if traces:
        metrics['epochs'] = float(np.mean([len(t) for t in traces]))
        metrics['final_group_kl'] = float(np.mean([t.records[-1].group_kl for t in traces]))
        if seed_stores[0].exists('checkpoint'):
            best = [load_checkpoint(s.path('checkpoint'))[1].get('best_epoch') for s in seed_stores]
            best = [b for b in best if b is not None]
            if best:
                metrics['best_epoch'] = float(np.mean(best))
    return metrics, written


@cli.command()
@click.option('--run-dir', 'run_dirs', required=True, multiple=True,
              type=click.Path(file_okay=False, resolve_path=True), help='Run directory; repeat to compare.')
@click.option('--out', required=True, type=click.Path(file_okay=False, resolve_path=True))
@click.pass_context
def report(ctx, run_dirs, out):
    """Comparison table across runs plus (epoch, group_kl) series per run."""
    out_store = RunStore(out)
    attach_run_log(out_store)
    runs, inputs, outputs = {}, [], []
    for run_dir in run_dirs:
        store = RunStore(run_dir, create=False)
        store.read_manifest()
        inputs.append(store.path('manifest'))
        name = os.path.basename(store.run_dir)
        while name in runs:
            name += '_'
        runs[name], written = _run_metrics(store, out_store.run_dir, name)
        outputs += written

    table = comparison_table(runs, REPORT_METRICS)
    csv_path, md_path = out_store.path('comparison.csv'), out_store.path('comparison.md')
    write_table(table, csv_path, md_path, title='Run comparison')
    outputs += [csv_path, md_path]
    out_store.write_manifest('report', dict(ctx.params), _config_record(_settings(ctx)), inputs=inputs,
                             outputs=outputs, name='manifest.report.json')
    click.echo(table.to_string(index=False))


@cli.command()
@click.option('--data', required=True, type=click.Path(exists=True, dir_okay=False, resolve_path=True))
@click.option('--run-dir', required=True, type=click.Path(file_okay=False, resolve_path=True))
@click.option('--seed', type=int)
@click.option('--seeds')
@click.option('--workers', type=int)
@click.option('--ratio')
@click.option('--threshold', type=float)
@training_options
@click.pass_context
def ablate(ctx, **params):
    """Train full, no_transformer and no_discriminator on identical splits and compare on test."""
    settings = _settings(ctx)
    train_overrides, encoder_overrides, params = _pop_training(dict(params))
    train_overrides.pop('ablation', None)
    cfg = _train_config(settings, train_overrides, encoder_overrides)
    seeds = _seed_list(params['seed'], params['seeds'], cfg)
    ratio = _ratio(settings, params['ratio'])
    threshold = settings['eval']['threshold'] if params['threshold'] is None else params['threshold']

    store = RunStore(params['run_dir'])
    attach_run_log(store)
    ds = load_csv(params['data'])
    jobs = [SeedJob(s, ds, cfg, ratio, threshold=threshold) for s in seeds]
    results = run_seeds(ablate_seed, jobs, params['workers'])

    per_seed = {r.seed: list(r.ablation.values()) for r in results}
    summary = label_splits(aggregate(merge_seed_reports(per_seed)))
    csv_path, md_path = store.path('ablation.csv'), store.path('ablation.md')
    write_table(summary, csv_path, md_path, title='Ablation')
    config = _config_record(settings, train=cfg.to_dict(), ratio=list(ratio), threshold=threshold)
    store.write_json('report', {'command': 'ablate', 'config': config,
                                'reports': [{**r, 'seed': s} for s, rows in sorted(per_seed.items()) for r in rows],
                                'summary': _json_records(summary)})
    store.write_manifest('ablate', dict(ctx.params), config, seeds=seeds, inputs=[params['data']],
                         outputs=[csv_path, md_path, store.path('report')], name='manifest.ablate.json')
    click.echo(summary.to_string(index=False))


@cli.command()
@click.option('--data', required=True, type=click.Path(exists=True, dir_okay=False, resolve_path=True))
@click.option('--run-dir', required=True, type=click.Path(file_okay=False, resolve_path=True))
@click.option('--seed', type=int)
@click.option('--ratio')
@click.option('--alphas', default='1', show_default=True, help='Comma list.')
@click.option('--betas', default='1', show_default=True, help='Comma list.')
@click.option('--gammas', default='1', show_default=True, help='Comma list.')
@training_options
@click.pass_context
def sweep(ctx, **params):
    """Grid over the loss weights, ranked by validation factual MSE."""
    settings = _settings(ctx)
    train_overrides, encoder_overrides, params = _pop_training(dict(params))
    cfg = _train_config(settings, train_overrides, encoder_overrides, seed=params['seed'])
    ratio = _ratio(settings, params['ratio'])
    grid = {name: parse_floats(params[name], name) for name in ('alphas', 'betas', 'gammas')}

    store = RunStore(params['run_dir'])
    attach_run_log(store)
    ds = load_csv(params['data'])
    splits = split(ds, ratio, seed=cfg.seed)
    rows = sweep_weights(ds, splits, cfg, grid['alphas'], grid['betas'], grid['gammas'])
    frame = pd.DataFrame(rows, columns=['alpha', 'beta', 'gamma', 'epochs', 'val_mse'])
    csv_path, md_path = store.path('sweep.csv'), store.path('sweep.md')
    write_table(frame, csv_path, md_path, title='Loss-weight sweep')
    store.write_manifest('sweep', dict(ctx.params),
                         _config_record(settings, train=cfg.to_dict(), ratio=list(ratio), grid=grid),
                         seeds=[cfg.seed], inputs=[params['data']], outputs=[csv_path, md_path],
                         name='manifest.sweep.json')
    click.echo(frame.to_string(index=False))


GRADCHECK_ENCODER = EncoderConfig(n_blocks=1, n_heads=2, d_model=8, d_ff=16)


def gradcheck_error(n=4, d=4, seed=0, encoder=GRADCHECK_ENCODER, critic_reg='clip'):
    """Max relative error of the combined loss gradient on a random fp64 batch."""
    if n < 4:
        raise ConfigError(f"gradcheck needs n >= 4 so both arms hold two units, got {n}")
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(encoder=encoder, seed=seed, critic_reg=critic_reg)
    model = build_model(d, cfg, rng)
    x = rng.standard_normal((n, d))
    t = np.arange(n) % 2
    y = rng.standard_normal(n)
    return grad_check(lambda: joint_loss(model, x, t, y, cfg, adversarial=True)[0], list(model.params.values()))


@cli.command()
@click.option('--n', 'n', type=int, default=4, show_default=True)
@click.option('--d', 'd', type=int, default=4, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--tolerance', type=float, default=1e-4, show_default=True)
@click.option('--run-dir', type=click.Path(file_okay=False, resolve_path=True))
@click.pass_context
def gradcheck(ctx, n, d, seed, tolerance, run_dir):
    """Compare analytic and finite-difference gradients of the combined loss."""
    error = gradcheck_error(n, d, seed)
    click.echo(f"max relative error: {error:.3e} (tolerance {tolerance:.1e})")
    if run_dir:
        store = RunStore(run_dir)
        store.write_json('gradcheck.json', {'n': n, 'd': d, 'seed': seed, 'max_relative_error': error,
                                            'tolerance': tolerance, 'passed': bool(error < tolerance)})
        store.write_manifest('gradcheck', dict(ctx.params),
                             _config_record(_settings(ctx), encoder=GRADCHECK_ENCODER.to_dict()), seeds=[seed],
                             outputs=[store.path('gradcheck.json')], name='manifest.gradcheck.json')
    if not error < tolerance:
        raise NumericError(f"gradient check failed: max relative error {error:.3e} >= {tolerance:.1e}")


@cli.command()
@click.option('--manifest', 'manifest_path', required=True, type=click.Path(dir_okay=False, resolve_path=True))
@click.pass_context
def rerun(ctx, manifest_path):
    """Repeat the command recorded in a manifest with its settings and parameters."""
    if not os.path.exists(manifest_path):
        raise RunFileError(f"manifest not found: {manifest_path}")
    store = RunStore(os.path.dirname(manifest_path), create=False)
    manifest = store.read_manifest(os.path.basename(manifest_path))
    command = manifest.get('command')
    if command not in cli.commands or command == 'rerun':
        raise RunFileError(f"{manifest_path} records an unknown command '{command}'")
    settings = manifest.get('config', {}).get('settings')
    if settings is not None:
        ctx.obj['settings'] = config_manager.merge_settings(config_manager.load_default_settings(), settings)
    logger.info(f"Re-running '{command}' from {manifest_path}")
    ctx.invoke(cli.commands[command], **manifest.get('params', {}))


def main():
    cli(prog_name='cetransformer')


if __name__ == '__main__':
    main()
