"""Shared fixtures: the desk-scale DG benchmark is trained once per session.

The benchmark fixture trains ERM and the multi-view meta method over every
leave-one-out target and seed of the acceptance protocol (plus the
no-re-estimation ablation used by the BN criterion) and caches the models
in memory; the directional acceptance criteria all read from it. Runs are
parallelized across processes, each run being internally deterministic.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import pytest

from mvrml import presets
from mvrml.domains import generate_synthetic_suite, leave_one_domain_out
from mvrml.nn_core import dataset_loss_and_accuracy
from mvrml.training import train_model

BENCHMARK_SEEDS = (0, 1, 2, 3, 4)
N_TARGETS = 4


def _one_run(args):
    method, seed, target_index, reestimate = args
    suite = generate_synthetic_suite(presets.benchmark_domain_specs())
    if method == "erm":
        config = presets.benchmark_erm_config(seed=seed)
    else:
        config = presets.benchmark_meta_config(seed=seed)
    if not reestimate:
        config = replace(config, bn_reestimate=False)
    report = train_model(suite, target_index, method, config)
    _, target = leave_one_domain_out(suite, target_index)
    _, acc = dataset_loss_and_accuracy(
        report.final_model, target.features, target.labels
    )
    curve = [rec["val_accuracy"] for rec in report.epochs]
    return (method, seed, target_index, reestimate), (report.final_model, acc, curve)


@pytest.fixture(scope="session")
def dg_benchmark():
    """Train the full acceptance benchmark once; returns runs and timing."""
    jobs = []
    for method in ("erm", "mvrml"):
        for seed in BENCHMARK_SEEDS:
            for target_index in range(N_TARGETS):
                jobs.append((method, seed, target_index, True))
    # the BN-re-estimation ablation only needs the meta method
    for seed in BENCHMARK_SEEDS:
        for target_index in range(N_TARGETS):
            jobs.append(("mvrml", seed, target_index, False))

    start = time.perf_counter()
    runs = {}
    with ProcessPoolExecutor(max_workers=2) as pool:
        for key, value in pool.map(_one_run, jobs, chunksize=2):
            runs[key] = value
    elapsed = time.perf_counter() - start

    suite = generate_synthetic_suite(presets.benchmark_domain_specs())
    return {
        "runs": runs,
        "train_seconds": elapsed,
        "suite": suite,
        "seeds": BENCHMARK_SEEDS,
        "n_targets": N_TARGETS,
    }
