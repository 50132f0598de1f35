# seed_runner.py
"""Run independent seeds in worker processes and merge results in seed order."""
import concurrent.futures
import logging
import os
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

from checkpoint_manager import RunStore
from dataset import Dataset, split
from trainer import TrainConfig, TrainTrace, ablate, train

logger = logging.getLogger(__name__)

MAX_WORKERS_CAP = 8


@dataclass(frozen=True)
class SeedJob:
    seed: int
    dataset: Dataset
    config: TrainConfig
    ratio: Tuple[float, float, float] = (61, 27, 10)
    run_dir: Optional[str] = None
    threshold: float = 0.0


@dataclass(frozen=True)
class SeedResult:
    seed: int
    trace: Optional[TrainTrace] = None
    run_dir: Optional[str] = None
    ablation: Optional[dict] = None


def train_seed(job: SeedJob) -> SeedResult:
    """Split, train and write ``splits.json``, ``trace.csv`` and ``checkpoint.json`` for one seed."""
    splits = split(job.dataset, job.ratio, seed=job.seed)
    model, trace = train(job.dataset, splits, replace(job.config, seed=job.seed))
    if job.run_dir:
        store = RunStore(job.run_dir)
        store.write_json('splits', splits.to_dict())
        trace.to_csv(store.path('trace'))
        model.save(store.path('checkpoint'), {'seed': job.seed, 'best_epoch': trace.best_epoch,
                                              'stopped_early': trace.stopped_early,
                                              'feature_names': list(job.dataset.feature_names)})
    return SeedResult(job.seed, trace=trace, run_dir=job.run_dir)


def ablate_seed(job: SeedJob) -> SeedResult:
    """The three-variant comparison for one seed, reports as dictionaries."""
    splits = split(job.dataset, job.ratio, seed=job.seed)
    result = ablate(job.dataset, splits, replace(job.config, seed=job.seed), threshold=job.threshold)
    return SeedResult(job.seed, ablation={name: report.to_dict() for name, report in result._asdict().items()})


def default_workers(n_jobs):
    return max(1, min(MAX_WORKERS_CAP, n_jobs, os.cpu_count() or 1))


def run_seeds(task: Callable[[SeedJob], SeedResult], jobs: Sequence[SeedJob],
              max_workers: Optional[int] = None) -> List[SeedResult]:
    """Run ``task`` for every job; one worker runs inline, more use a process pool.

    Results come back sorted by seed. A failing seed is logged; once all seeds
    finish, the first failure in seed order is raised.
    """
    if not jobs:
        logger.info("No seeds to run")
        return []
    max_workers = max_workers or default_workers(len(jobs))
    logger.info(f"Running {len(jobs)} seeds with {max_workers} workers")

    if max_workers == 1:
        results = [task(job) for job in sorted(jobs, key=lambda j: j.seed)]
        logger.info(f"Seed runs complete: {len(results)} succeeded")
        return results

    results, failures = {}, {}
    with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as executor:
        future_to_job = {executor.submit(task, job): job for job in jobs}
        for future in concurrent.futures.as_completed(future_to_job):
            job = future_to_job[future]
            try:
                results[job.seed] = future.result()
            except Exception as exc:
                logger.error(f"Seed {job.seed} failed: {exc}")
                failures[job.seed] = exc

    logger.info(f"Seed runs complete: {len(results)} succeeded, {len(failures)} failed")
    if failures:
        raise failures[min(failures)]
    return [results[seed] for seed in sorted(results)]
