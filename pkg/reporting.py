# reporting.py
"""Result tables: per-seed rows, mean +/- sd aggregation, comparisons, KL series."""
import logging
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np
import pandas as pd

from trainer import TrainTrace

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ('sqrt_pehe', 'ate_error', 'policy_risk', 'factual_mse', 'group_kl', 'group_kl_reverse')
SPLIT_LABELS = {'train': 'in-sample', 'test': 'out-sample', 'valid': 'validation'}


def report_frame(reports: Iterable[Mapping], seed=None) -> pd.DataFrame:
    """One row per report dictionary (method, split, metrics); the config snapshot is dropped."""
    rows = []
    for report in reports:
        row = {k: v for k, v in report.items() if k != 'config'}
        if seed is not None:
            row['seed'] = seed
        rows.append(row)
    return pd.DataFrame(rows)


def format_mean_sd(mean, sd, digits=3):
    if mean is None or (isinstance(mean, float) and np.isnan(mean)):
        return '-'
    sd = 0.0 if sd is None or np.isnan(sd) else sd
    return f"{mean:.{digits}f} ± {sd:.{digits}f}"


def aggregate(frame: pd.DataFrame, metrics: Sequence[str] = METRIC_COLUMNS) -> pd.DataFrame:
    """Mean and sample sd across seeds for each (method, split); sd is 0 for a single seed."""
    metrics = [m for m in metrics if m in frame.columns and frame[m].notna().any()]
    grouped = frame.groupby(['method', 'split'], sort=False)[metrics]
    mean = grouped.mean()
    sd = grouped.std(ddof=1).fillna(0.0)
    out = pd.DataFrame(index=mean.index)
    for metric in metrics:
        out[metric] = [format_mean_sd(m, s) for m, s in zip(mean[metric], sd[metric])]
    if 'seed' in frame.columns:
        out['seeds'] = frame.groupby(['method', 'split'], sort=False)['seed'].nunique()
    else:
        out['seeds'] = grouped.size()
    return out.reset_index()


def to_markdown(frame: pd.DataFrame) -> str:
    """Pipe table; missing values render as '-'."""
    columns = [str(c) for c in frame.columns]
    lines = ['| ' + ' | '.join(columns) + ' |', '|' + '|'.join('---' for _ in columns) + '|']
    for row in frame.itertuples(index=False):
        cells = []
        for value in row:
            if value is None or (isinstance(value, float) and np.isnan(value)):
                cells.append('-')
            elif isinstance(value, float):
                cells.append(f"{value:.4f}")
            else:
                cells.append(str(value))
        lines.append('| ' + ' | '.join(cells) + ' |')
    return '\n'.join(lines) + '\n'


def label_splits(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.copy()
    frame['split'] = [SPLIT_LABELS.get(s, s) for s in frame['split']]
    return frame


def comparison_table(runs: Mapping[str, Mapping[str, float]], metrics: Sequence[str] = METRIC_COLUMNS) -> pd.DataFrame:
    """Metrics as rows, one column per named run."""
    names = list(runs)
    rows = []
    for metric in metrics:
        values = [runs[name].get(metric) for name in names]
        if all(v is None for v in values):
            continue
        rows.append({'metric': metric, **{name: value for name, value in zip(names, values)}})
    return pd.DataFrame(rows, columns=['metric'] + names)


def kl_series(trace: TrainTrace) -> pd.DataFrame:
    """Plottable (epoch, group_kl) series."""
    return pd.DataFrame({'epoch': trace.column('epoch').astype(int), 'group_kl': trace.column('group_kl')})


def write_table(frame: pd.DataFrame, csv_path, md_path=None, title=None):
    frame.to_csv(csv_path, index=False, lineterminator='\n')
    if md_path:
        with open(md_path, 'w', encoding='utf-8') as f:
            if title:
                f.write(f"# {title}\n\n")
            f.write(to_markdown(frame))
    logger.info(f"Wrote table with {len(frame)} rows to {csv_path}" + (f" and {md_path}" if md_path else ""))


def prediction_frame(unit_ids, t, y_factual, y0, y1) -> pd.DataFrame:
    """Prediction export: unit, t, yf, y0_hat, y1_hat, ite_hat."""
    y0, y1 = np.asarray(y0), np.asarray(y1)
    return pd.DataFrame({'unit': np.asarray(unit_ids, dtype=int), 't': np.asarray(t, dtype=int), 'yf': y_factual,
                         'y0_hat': y0, 'y1_hat': y1, 'ite_hat': y1 - y0})


def embedding_frame(unit_ids, t, embeddings) -> pd.DataFrame:
    """Embedding dump: unit, t, e0..e{m-1}."""
    embeddings = np.asarray(embeddings)
    frame = pd.DataFrame(embeddings, columns=[f"e{j}" for j in range(embeddings.shape[1])])
    frame.insert(0, 't', np.asarray(t, dtype=int))
    frame.insert(0, 'unit', np.asarray(unit_ids, dtype=int))
    return frame


def attention_frame(matrix, token_names: List[str]) -> pd.DataFrame:
    """Feature-by-feature attention matrix with row and column labels."""
    frame = pd.DataFrame(np.asarray(matrix), columns=token_names)
    frame.insert(0, 'token', token_names)
    return frame


def merge_seed_reports(per_seed: Dict[int, List[Mapping]]) -> pd.DataFrame:
    frames = [report_frame(reports, seed) for seed, reports in sorted(per_seed.items())]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
