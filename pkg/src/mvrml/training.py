"""Trainers: the multi-view regularized meta step, Reptile, ERM, and
batch-norm re-estimation.

One meta step snapshots the current parameters, runs ``T`` independent
inner trajectories (each a sequence of ``s`` tasks, two optimizer steps per
task: meta-train batch then meta-test batch, with a fresh inner-optimizer
state per trajectory), averages the resulting temporary parameters, and
moves the snapshot toward the average:

    theta_{j+1} = theta_j + beta * (mean_t theta_tmp^t - theta_j)

Reptile is the single-trajectory, single-task specialization. ERM is one
optimizer step on a pooled batch. Batch-norm running statistics are
averaged together with the weights inside the meta step and re-estimated
exactly from the training data at every epoch end, because interpolated
statistics no longer match interpolated weights.

Trajectories draw from per-trajectory sub-streams (``rng.child(t)``), so
serial and concurrent execution see identical tasks; the average is always
accumulated in trajectory order, making the two execution modes bitwise
equal.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .domains import DomainDataset, DomainSuite, leave_one_domain_out
from .episodic import SamplingStrategy, Task, sample_task_sequence
from .errors import MvrmlError, ShapeError
from .nn_core import (
    ArchSpec,
    Batch,
    ModelState,
    OptimizerSpec,
    _param_views,
    _stats_views,
    dataset_loss_and_accuracy,
    init_model,
    init_optimizer_state,
    interpolate_params,
    loss_grad_update,
    n_stats,
    optimizer_step,
)
from .rng import RngStream

__all__ = [
    "MetaConfig",
    "TrainReport",
    "inner_trajectory",
    "mvrml_step",
    "reptile_step",
    "erm_step",
    "reestimate_bn",
    "train_model",
]

# Fixed sub-stream indices of a training run's root stream.
_STREAM_INIT = 0
_STREAM_SPLIT = 1
_STREAM_ITER_BASE = 2


@dataclass(frozen=True)
class MetaConfig:
    """Hyperparameters of a training run.

    ``lr_schedule`` holds ``(epoch, alpha, beta)`` breakpoints with strictly
    increasing epochs; from each breakpoint's epoch on, the given rates
    replace ``inner_lr_alpha`` / ``outer_lr_beta``. ``arch`` may be left
    ``None``, in which case :func:`train_model` builds a default suited to
    the suite's dimensions. ``outer_weight_decay`` optionally decays the
    snapshot parameters with the outer step (off by default; the outer
    update is otherwise the plain interpolation above).
    """

    trajectories_T: int = 3
    tasks_per_trajectory_s: int = 3
    inner_lr_alpha: float = 5e-3
    outer_lr_beta: float = 0.5
    inner_optimizer: OptimizerSpec = field(default_factory=lambda: OptimizerSpec(kind="adam"))
    epochs: int = 12
    iterations_per_epoch: int = 50
    batch_size: int = 64
    strategy: SamplingStrategy = SamplingStrategy.S3_META_SPLIT
    lr_schedule: tuple[tuple[int, float, float], ...] = ()
    seed: int = 0
    arch: ArchSpec | None = None
    outer_weight_decay: float = 0.0
    bn_reestimate: bool = True
    validation_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "lr_schedule", tuple(tuple(bp) for bp in self.lr_schedule))
        if self.trajectories_T < 1 or self.tasks_per_trajectory_s < 1:
            raise ShapeError("trajectory and task counts must be positive")
        if self.inner_lr_alpha <= 0.0:
            raise ShapeError("inner_lr_alpha must be positive")
        # beta = 0 is allowed as the degenerate no-op meta step (the update
        # neutrality checks rely on it)
        if not 0.0 <= self.outer_lr_beta <= 1.0:
            raise ShapeError("outer_lr_beta must lie in [0, 1]")
        if self.epochs < 0 or self.iterations_per_epoch < 1 or self.batch_size < 1:
            raise ShapeError("epochs/iterations/batch_size out of range")
        epochs = [bp[0] for bp in self.lr_schedule]
        if any(b >= a for a, b in zip(epochs[1:], epochs)):
            raise ShapeError("lr_schedule epochs must be strictly increasing")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ShapeError("validation_fraction must lie in [0, 1)")

    def rates_at(self, epoch: int) -> tuple[float, float]:
        """Effective (alpha, beta) at an epoch, after schedule breakpoints."""
        alpha, beta = self.inner_lr_alpha, self.outer_lr_beta
        for ep, a, b in self.lr_schedule:
            if epoch >= ep:
                alpha, beta = a, b
        return alpha, beta


@dataclass
class TrainReport:
    """Per-epoch validation history plus the selected checkpoint.

    ``wall_time_seconds`` is informational only and is never serialized
    into artifacts (they must be bitwise reproducible).
    """

    method: str
    epochs: list[dict]
    final_model: ModelState
    best_epoch: int
    best_val_accuracy: float
    wall_time_seconds: float
    config: MetaConfig


def inner_trajectory(
    theta_j: ModelState,
    tasks: list[Task],
    alpha: float,
    inner_optimizer: OptimizerSpec,
    loss_grad_fn=None,
) -> ModelState:
    """Run one optimization trajectory from a snapshot.

    Starting from ``theta_j`` with a fresh optimizer state, applies one step
    on the meta-train batch and one on the meta-test batch of every task in
    order, and returns the temporary parameters. ``alpha`` overrides the
    optimizer spec's learning rate. ``loss_grad_fn`` may replace the network
    loss (test harnesses use scalar stubs); it must return
    ``(loss, flat_grad, new_bn_stats_or_None)``.
    """
    if not tasks:
        raise ShapeError("a trajectory needs at least one task")
    fn = loss_grad_fn or loss_grad_update
    spec = replace(inner_optimizer, learning_rate=alpha)
    state = init_optimizer_state(spec, theta_j.params.size)
    model = theta_j
    for task in tasks:
        for batch in (task.meta_train, task.meta_test):
            _, grad, new_stats = fn(model, batch)
            if new_stats is not None:
                model = replace(model, bn_stats=new_stats)
            model, state = optimizer_step(model, grad, spec, state)
    return model


def _average_states(states: list[ModelState]) -> ModelState:
    """Mean of parameters and BN statistics, accumulated in list order."""
    params = states[0].params.copy()
    stats = states[0].bn_stats.copy()
    for st in states[1:]:
        params += st.params
        stats += st.bn_stats
    params /= len(states)
    stats /= len(states)
    return replace(states[0], params=params, bn_stats=stats)


def mvrml_step(
    theta_j: ModelState,
    sources: list[DomainDataset],
    config: MetaConfig,
    rng: RngStream,
    *,
    task_sequences: list[list[Task]] | None = None,
    trajectory_streams: list[RngStream] | None = None,
    loss_grad_fn=None,
    parallel: bool = False,
) -> ModelState:
    """One multi-view meta step (see the module docstring).

    ``task_sequences`` / ``trajectory_streams`` override the default
    per-trajectory sampling (diagnostic hooks; the default derives stream
    ``t`` as ``rng.child(t)``). With ``parallel=True`` trajectories run on a
    thread pool; the result is bitwise equal to serial execution.
    """
    T = config.trajectories_T
    if task_sequences is None:
        streams = trajectory_streams
        if streams is None:
            streams = [rng.child(t) for t in range(T)]
        if len(streams) != T:
            raise ShapeError("need one rng stream per trajectory")
        task_sequences = [
            sample_task_sequence(
                sources, config.strategy, config.batch_size,
                config.tasks_per_trajectory_s, stream,
            )
            for stream in streams
        ]
    elif len(task_sequences) != T:
        raise ShapeError("need one task sequence per trajectory")

    def run(seq: list[Task]) -> ModelState:
        return inner_trajectory(
            theta_j, seq, config.inner_lr_alpha, config.inner_optimizer, loss_grad_fn
        )

    if parallel and T > 1:
        with ThreadPoolExecutor(max_workers=T) as pool:
            temporaries = list(pool.map(run, task_sequences))
    else:
        temporaries = [run(seq) for seq in task_sequences]

    theta_tmp = _average_states(temporaries)
    updated = interpolate_params(theta_j, theta_tmp, config.outer_lr_beta)
    if config.outer_weight_decay:
        decayed = updated.params - (
            config.outer_lr_beta * config.outer_weight_decay * theta_j.params
        )
        updated = replace(updated, params=decayed)
    return updated


def reptile_step(
    theta_j: ModelState,
    sources: list[DomainDataset],
    config: MetaConfig,
    rng: RngStream,
    **kwargs,
) -> ModelState:
    """Single-trajectory specialization of the meta step."""
    return mvrml_step(theta_j, sources, replace(config, trajectories_T=1), rng, **kwargs)


def erm_step(
    theta: ModelState,
    pooled_batch: Batch,
    optimizer: OptimizerSpec,
    state=None,
    loss_grad_fn=None,
):
    """One optimizer step on a pooled batch; returns (model, state)."""
    fn = loss_grad_fn or loss_grad_update
    if state is None:
        state = init_optimizer_state(optimizer, theta.params.size)
    _, grad, new_stats = fn(theta, pooled_batch)
    if new_stats is not None:
        theta = replace(theta, bn_stats=new_stats)
    return optimizer_step(theta, grad, optimizer, state)


def _pre_bn_activations(model: ModelState, X: np.ndarray, layer: int, stats: np.ndarray):
    """Input of batch-norm layer ``layer``, using the supplied statistics
    for all earlier batch-norm layers (always on the reference path)."""
    Ws, bs, gammas, betas = _param_views(model.arch, model.params)
    means, variances = _stats_views(model.arch, stats)
    from ._kernels_py import BN_EPS

    A = X
    for i in range(layer + 1):
        Z = A @ Ws[i].T + bs[i]
        if i == layer:
            return Z
        if gammas[i] is not None:
            Zh = (Z - means[i]) / np.sqrt(variances[i] + BN_EPS)
            Z = gammas[i] * Zh + betas[i]
        A = np.maximum(Z, 0.0)
    raise AssertionError("unreachable")


def reestimate_bn(
    model: ModelState, sources: list[DomainDataset], batch_size: int = 512
) -> ModelState:
    """Replace running statistics with exact dataset statistics.

    Processes batch-norm layers front to back: the inputs of layer ``j`` are
    computed with the already re-estimated statistics of earlier layers, and
    their exact mean/variance (biased, streamed with Chan's merge over
    fixed-size batches) becomes the new running statistics. Weights are
    untouched; the operation is idempotent. No-op for models without batch
    norm.
    """
    if n_stats(model.arch) == 0:
        return model
    if not sources or sum(d.n for d in sources) == 0:
        raise MvrmlError("cannot re-estimate batch-norm statistics from empty sources")
    X = np.vstack([d.features for d in sources])
    new_stats = model.bn_stats.copy()
    means, variances = _stats_views(model.arch, new_stats)
    for layer in sorted(model.arch.use_batchnorm_after):
        n_tot = 0
        mean = np.zeros(model.arch.hidden_dims[layer])
        m2 = np.zeros_like(mean)
        for start in range(0, X.shape[0], batch_size):
            Z = _pre_bn_activations(model, X[start : start + batch_size], layer, new_stats)
            nb = Z.shape[0]
            mb = Z.mean(axis=0)
            m2b = ((Z - mb) ** 2).sum(axis=0)
            if n_tot == 0:
                n_tot, mean, m2 = nb, mb, m2b
            else:
                delta = mb - mean
                total = n_tot + nb
                mean = mean + delta * (nb / total)
                m2 = m2 + m2b + delta**2 * (n_tot * nb / total)
                n_tot = total
        means[layer][...] = mean
        variances[layer][...] = m2 / n_tot
    return replace(model, bn_stats=new_stats)


def _sample_pooled(gen, features: np.ndarray, labels: np.ndarray, batch_size: int) -> Batch:
    idx = gen.integers(0, features.shape[0], size=batch_size)
    return Batch(features[idx], labels[idx])


def _split_sources(
    sources: list[DomainDataset], fraction: float, rng: RngStream
) -> tuple[list[DomainDataset], np.ndarray, np.ndarray]:
    """Per-domain train/validation split; pooled validation arrays."""
    gen = rng.generator()
    train_sets = []
    val_feats, val_labels = [], []
    for d in sources:
        perm = gen.permutation(d.n)
        n_val = int(round(fraction * d.n))
        n_val = min(n_val, d.n - 1)  # keep at least one training sample
        train_idx = np.sort(perm[n_val:])
        val_idx = np.sort(perm[:n_val])
        train_sets.append(
            DomainDataset(d.domain_id, d.features[train_idx], d.labels[train_idx], d.spec)
        )
        if n_val:
            val_feats.append(d.features[val_idx])
            val_labels.append(d.labels[val_idx])
    if val_feats:
        return train_sets, np.vstack(val_feats), np.concatenate(val_labels)
    return train_sets, np.empty((0, sources[0].feature_dim)), np.empty(0, dtype=np.int64)


def default_arch(feature_dim: int, num_classes: int) -> ArchSpec:
    """Default classifier: two batch-normalized hidden layers of 48 units."""
    return ArchSpec(
        input_dim=feature_dim,
        hidden_dims=(48, 48),
        num_classes=num_classes,
        use_batchnorm_after=(0, 1),
    )


def train_model(
    suite: DomainSuite,
    target_index: int,
    method: str,
    config: MetaConfig,
) -> TrainReport:
    """Train on the leave-one-out sources and return the best checkpoint.

    Every source domain is split 90/10 into train/validation (seeded from
    ``config.seed``). Per epoch, ``iterations_per_epoch`` steps of the
    chosen method run on the training portions; for the meta methods the
    batch-norm statistics are re-estimated at each epoch end (unless
    ``config.bn_reestimate`` is off, the ablation switch), and the
    checkpoint with the best pooled source-validation accuracy wins.
    ``method="reptile"`` forces one trajectory and one task per sequence.
    """
    if method not in ("erm", "reptile", "mvrml"):
        raise ShapeError(f"unknown method {method!r}")
    start = time.perf_counter()
    sources, _ = leave_one_domain_out(suite, target_index)
    root = RngStream(config.seed, 0)
    arch = config.arch or default_arch(suite.feature_dim, suite.num_classes)
    if arch.input_dim != suite.feature_dim or arch.num_classes < suite.num_classes:
        raise ShapeError("architecture does not match the suite dimensions")
    if method == "reptile":
        config = replace(config, trajectories_T=1, tasks_per_trajectory_s=1)

    train_sets, val_X, val_y = _split_sources(sources, config.validation_fraction, root.child(_STREAM_SPLIT))
    pooled_X = np.vstack([d.features for d in train_sets])
    pooled_y = np.concatenate([d.labels for d in train_sets])

    model = init_model(arch, root.child(_STREAM_INIT))
    opt_state = init_optimizer_state(config.inner_optimizer, model.params.size)

    history: list[dict] = []
    best_model, best_acc, best_epoch = model, -1.0, -1
    step = 0
    for epoch in range(config.epochs):
        alpha, beta = config.rates_at(epoch)
        epoch_config = replace(config, inner_lr_alpha=alpha, outer_lr_beta=beta)
        opt_spec = replace(config.inner_optimizer, learning_rate=alpha)
        for _ in range(config.iterations_per_epoch):
            stream = root.child(_STREAM_ITER_BASE + step)
            if method == "erm":
                batch = _sample_pooled(stream.generator(), pooled_X, pooled_y, config.batch_size)
                model, opt_state = erm_step(model, batch, opt_spec, opt_state)
            else:
                model = mvrml_step(model, train_sets, epoch_config, stream)
            step += 1
        if method != "erm" and config.bn_reestimate:
            model = reestimate_bn(model, train_sets)
        if val_X.shape[0]:
            val_loss, val_acc = dataset_loss_and_accuracy(model, val_X, val_y)
        else:
            val_loss, val_acc = dataset_loss_and_accuracy(model, pooled_X, pooled_y)
        history.append({"epoch": epoch, "val_accuracy": val_acc, "val_loss": val_loss})
        if val_acc > best_acc:
            best_model, best_acc, best_epoch = model, val_acc, epoch

    return TrainReport(
        method=method,
        epochs=history,
        final_model=best_model,
        best_epoch=best_epoch,
        best_val_accuracy=best_acc if history else float("nan"),
        wall_time_seconds=time.perf_counter() - start,
        config=config,
    )
