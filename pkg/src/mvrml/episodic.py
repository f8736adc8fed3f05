"""Task construction: meta-train/meta-test batches under three strategies.

A task pairs a meta-train batch with a meta-test batch. Strategies:

* S1 — both batches from one uniformly chosen source domain.
* S2 — both batches from the pooled union of all sources.
* S3 — one uniformly chosen source becomes the meta-test domain; the
  meta-test batch is drawn from it and the meta-train batch from the pooled
  remaining sources. The split is redrawn for every task in a sequence.

All sampling is uniform with replacement. Draw order per task is fixed and
documented (split choice, then meta-train indices, then meta-test indices)
so a given :class:`~mvrml.rng.RngStream` always produces the same tasks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .domains import DomainDataset
from .errors import ShapeError, StrategyError
from .nn_core import Batch
from .rng import RngStream

__all__ = ["SamplingStrategy", "Task", "sample_task", "sample_task_sequence"]


class SamplingStrategy(enum.Enum):
    S1_SAME_DOMAIN = "s1"
    S2_ALL_DOMAINS = "s2"
    S3_META_SPLIT = "s3"


@dataclass(frozen=True)
class Task:
    """One sub-task: a meta-train batch paired with a meta-test batch."""

    meta_train: Batch
    meta_test: Batch


def _draw(gen: np.random.Generator, datasets: list[DomainDataset], batch_size: int) -> Batch:
    sizes = np.array([d.n for d in datasets])
    bounds = np.cumsum(sizes)
    idx = gen.integers(0, bounds[-1], size=batch_size)
    which = np.searchsorted(bounds, idx, side="right")
    rows = idx - (bounds[which] - sizes[which])
    feats = np.empty((batch_size, datasets[0].feature_dim))
    labels = np.empty(batch_size, dtype=np.int64)
    tags = np.empty(batch_size, dtype=object)
    for j in range(batch_size):
        d = datasets[which[j]]
        feats[j] = d.features[rows[j]]
        labels[j] = d.labels[rows[j]]
        tags[j] = d.domain_id
    return Batch(feats, labels, domain_ids=np.asarray(tags.tolist()))


def _sample_task_with(
    gen: np.random.Generator,
    sources: list[DomainDataset],
    strategy: SamplingStrategy,
    batch_size: int,
) -> Task:
    if strategy is SamplingStrategy.S1_SAME_DOMAIN:
        k = int(gen.integers(0, len(sources)))
        pick = [sources[k]]
        return Task(_draw(gen, pick, batch_size), _draw(gen, pick, batch_size))
    if strategy is SamplingStrategy.S2_ALL_DOMAINS:
        return Task(_draw(gen, sources, batch_size), _draw(gen, sources, batch_size))
    if len(sources) < 2:
        raise StrategyError("the meta-split strategy needs at least 2 source domains")
    k = int(gen.integers(0, len(sources)))
    rest = [d for i, d in enumerate(sources) if i != k]
    meta_train = _draw(gen, rest, batch_size)
    meta_test = _draw(gen, [sources[k]], batch_size)
    return Task(meta_train, meta_test)


def _validate(sources: list[DomainDataset], batch_size: int) -> None:
    if not sources:
        raise StrategyError("no source domains to sample from")
    if batch_size < 1:
        raise ShapeError("batch_size must be positive")
    dim = sources[0].feature_dim
    if any(d.feature_dim != dim for d in sources):
        raise ShapeError("source domains disagree on feature dimension")


def sample_task(
    sources: list[DomainDataset],
    strategy: SamplingStrategy,
    batch_size: int,
    rng: RngStream,
) -> Task:
    """Draw one task; identical for identical ``rng`` values."""
    _validate(sources, batch_size)
    return _sample_task_with(rng.generator(), sources, strategy, batch_size)


def sample_task_sequence(
    sources: list[DomainDataset],
    strategy: SamplingStrategy,
    batch_size: int,
    s: int,
    rng: RngStream,
) -> list[Task]:
    """Draw ``s`` tasks from one stream; S3 redraws the split per task."""
    if s < 1:
        raise ShapeError("a task sequence needs at least one task")
    _validate(sources, batch_size)
    gen = rng.generator()
    return [_sample_task_with(gen, sources, strategy, batch_size) for _ in range(s)]
