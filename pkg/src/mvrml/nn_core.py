"""Dense-network core: model state, loss gradients, optimizers.

Everything the trainers consume lives here: a flat-parameter model
representation for small fully-connected classifiers with optional batch
normalization, mean cross-entropy with reverse-mode gradients, a
finite-difference gradient oracle, SGD/Adam steps, and parameter
interpolation.

Parameters are kept as one flat float64 vector per model (layout below);
batch-norm running statistics live in a second flat vector because they are
data statistics, not optimized weights. Operations never mutate their
inputs: each returns a fresh :class:`ModelState`.

Flat layout, in layer order: ``W_i`` (row-major, shape ``(fan_out,
fan_in)``), ``b_i``, then ``gamma_i`` and ``beta_i`` when layer ``i``
carries batch norm. Statistics layout per batch-norm layer: running mean
then running variance.

Batch normalization semantics (shared with both kernel backends, see
``_kernels_py``): biased variance, ``BN_EPS = 1e-5``, and gradients that
treat the batch statistics as constants. The finite-difference oracle
freezes the batch statistics at the nominal parameters so that it probes
the same function the analytic gradient differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import _backend
from ._kernels_py import BN_EPS
from .errors import ArchMismatchError, ShapeError
from .rng import RngStream

__all__ = [
    "ArchSpec",
    "Batch",
    "ModelState",
    "OptimizerSpec",
    "OptimizerState",
    "BN_EPS",
    "init_model",
    "init_optimizer_state",
    "forward",
    "loss_and_grad",
    "finite_difference_gradient",
    "optimizer_step",
    "interpolate_params",
    "flatten",
    "unflatten",
    "softmax",
    "eval_logits",
    "dataset_loss_and_accuracy",
    "n_params",
    "n_stats",
]


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor for a dense classifier."""

    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    num_classes: int = 2
    use_batchnorm_after: tuple[int, ...] = ()
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        object.__setattr__(
            self, "use_batchnorm_after", tuple(int(i) for i in self.use_batchnorm_after)
        )
        if self.input_dim <= 0:
            raise ShapeError("input_dim must be positive")
        if any(d <= 0 for d in self.hidden_dims):
            raise ShapeError("hidden_dims entries must be positive")
        if self.num_classes < 2:
            raise ShapeError("num_classes must be at least 2")
        bn = self.use_batchnorm_after
        if len(set(bn)) != len(bn):
            raise ShapeError("use_batchnorm_after has duplicate indices")
        if any(i < 0 or i >= len(self.hidden_dims) for i in bn):
            raise ShapeError("use_batchnorm_after indices must address hidden layers")
        if self.activation != "relu":
            raise ShapeError(f"unsupported activation {self.activation!r}")

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_dims)

    @property
    def layer_dims(self) -> tuple[tuple[int, int], ...]:
        """(fan_in, fan_out) per affine layer, final layer included."""
        ins = (self.input_dim,) + self.hidden_dims
        outs = self.hidden_dims + (self.num_classes,)
        return tuple(zip(ins, outs))

    def has_bn(self, layer: int) -> bool:
        return layer in self.use_batchnorm_after


@lru_cache(maxsize=None)
def _layout(arch: ArchSpec):
    """Slices of every parameter piece within the flat vectors."""
    param_slices = []  # (kind, layer, slice, shape)
    off = 0
    for i, (fin, fout) in enumerate(arch.layer_dims):
        param_slices.append(("W", i, slice(off, off + fout * fin), (fout, fin)))
        off += fout * fin
        param_slices.append(("b", i, slice(off, off + fout), (fout,)))
        off += fout
        if i < arch.n_hidden and arch.has_bn(i):
            param_slices.append(("gamma", i, slice(off, off + fout), (fout,)))
            off += fout
            param_slices.append(("beta", i, slice(off, off + fout), (fout,)))
            off += fout
    stat_slices = []  # (layer, mean slice, var slice)
    soff = 0
    for i in sorted(arch.use_batchnorm_after):
        width = arch.hidden_dims[i]
        stat_slices.append((i, slice(soff, soff + width), slice(soff + width, soff + 2 * width)))
        soff += 2 * width
    return param_slices, off, stat_slices, soff


def n_params(arch: ArchSpec) -> int:
    return _layout(arch)[1]


def n_stats(arch: ArchSpec) -> int:
    return _layout(arch)[3]


def _param_views(arch: ArchSpec, flat: np.ndarray):
    """Per-layer views (Ws, bs, gammas, betas) into a flat vector.

    ``gammas``/``betas`` hold ``None`` for hidden layers without batch norm.
    """
    slices, total, _, _ = _layout(arch)
    n_layers = arch.n_hidden + 1
    Ws: list = [None] * n_layers
    bs: list = [None] * n_layers
    gammas: list = [None] * arch.n_hidden
    betas: list = [None] * arch.n_hidden
    for kind, layer, sl, shape in slices:
        view = flat[sl].reshape(shape)
        if kind == "W":
            Ws[layer] = view
        elif kind == "b":
            bs[layer] = view
        elif kind == "gamma":
            gammas[layer] = view
        else:
            betas[layer] = view
    return Ws, bs, gammas, betas


def _stats_views(arch: ArchSpec, flat_stats: np.ndarray):
    """Per-hidden-layer (means, variances) views; ``None`` without BN."""
    _, _, stat_slices, _ = _layout(arch)
    means: list = [None] * arch.n_hidden
    variances: list = [None] * arch.n_hidden
    for layer, msl, vsl in stat_slices:
        means[layer] = flat_stats[msl]
        variances[layer] = flat_stats[vsl]
    return means, variances


@dataclass
class ModelState:
    """All learnable parameters plus batch-norm running statistics.

    Treat instances as immutable: every operation returns a new state and
    instances may be shared freely between threads.
    """

    arch: ArchSpec
    params: np.ndarray
    bn_stats: np.ndarray
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        self.bn_stats = np.ascontiguousarray(self.bn_stats, dtype=np.float64)
        if self.params.shape != (n_params(self.arch),):
            raise ShapeError(
                f"params has length {self.params.size}, arch needs {n_params(self.arch)}"
            )
        if self.bn_stats.shape != (n_stats(self.arch),):
            raise ShapeError(
                f"bn_stats has length {self.bn_stats.size}, arch needs {n_stats(self.arch)}"
            )
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ShapeError("bn_momentum must lie in (0, 1]")
        _, variances = _stats_views(self.arch, self.bn_stats)
        for var in variances:
            if var is not None and np.any(var < 0.0):
                raise ShapeError("running variances must be non-negative")

    # Per-layer accessors, mainly for tests and checkpoint tooling.
    def weights(self, layer: int) -> np.ndarray:
        return _param_views(self.arch, self.params)[0][layer]

    def biases(self, layer: int) -> np.ndarray:
        return _param_views(self.arch, self.params)[1][layer]

    def bn_gamma(self, layer: int) -> np.ndarray:
        return _param_views(self.arch, self.params)[2][layer]

    def bn_beta(self, layer: int) -> np.ndarray:
        return _param_views(self.arch, self.params)[3][layer]

    def running_mean(self, layer: int) -> np.ndarray:
        return _stats_views(self.arch, self.bn_stats)[0][layer]

    def running_var(self, layer: int) -> np.ndarray:
        return _stats_views(self.arch, self.bn_stats)[1][layer]


@dataclass(frozen=True)
class Batch:
    """A mini-batch of features and integer labels.

    ``domain_ids`` is a diagnostic tag array (one domain name per row) the
    samplers attach so tests can audit meta-split disjointness.
    """

    features: np.ndarray
    labels: np.ndarray
    domain_ids: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "features", np.ascontiguousarray(self.features, dtype=np.float64)
        )
        object.__setattr__(self, "labels", np.ascontiguousarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ShapeError("features must be a non-empty 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError("labels must match the feature row count")
        if np.any(self.labels < 0):
            raise ShapeError("labels must be non-negative")

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class OptimizerSpec:
    """SGD or Adam hyperparameters; fields irrelevant to ``kind`` ignored."""

    kind: str = "sgd"
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ShapeError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0.0:
            raise ShapeError("learning_rate must be positive")
        if self.weight_decay < 0.0:
            raise ShapeError("weight_decay must be non-negative")
        if self.kind == "sgd" and not 0.0 <= self.momentum < 1.0:
            raise ShapeError("sgd momentum must lie in [0, 1)")
        if self.kind == "adam":
            if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
                raise ShapeError("adam betas must lie in (0, 1)")
            if self.epsilon <= 0.0:
                raise ShapeError("adam epsilon must be positive")


@dataclass
class OptimizerState:
    """Slot vectors for an optimizer; lengths match the flat parameters."""

    step_count: int
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None
    velocity: np.ndarray | None = None


def init_optimizer_state(spec: OptimizerSpec, n: int) -> OptimizerState:
    if spec.kind == "adam":
        return OptimizerState(0, np.zeros(n), np.zeros(n))
    return OptimizerState(0, velocity=np.zeros(n))


def init_model(arch: ArchSpec, rng: RngStream | int, bn_momentum: float = 0.1) -> ModelState:
    """Seeded init: per-layer uniform in ±1/sqrt(fan_in); BN stats at (0, 1)."""
    if isinstance(rng, int):
        rng = RngStream(rng, 0)
    gen = rng.generator()
    params = np.zeros(n_params(arch))
    Ws, bs, gammas, betas = _param_views(arch, params)
    for i, (fin, fout) in enumerate(arch.layer_dims):
        bound = 1.0 / np.sqrt(fin)
        Ws[i][...] = gen.uniform(-bound, bound, size=(fout, fin))
        bs[i][...] = gen.uniform(-bound, bound, size=fout)
    for g, b in zip(gammas, betas):
        if g is not None:
            g[...] = 1.0
            b[...] = 0.0
    stats = np.zeros(n_stats(arch))
    means, variances = _stats_views(arch, stats)
    for var in variances:
        if var is not None:
            var[...] = 1.0
    return ModelState(arch, params, stats, bn_momentum)


def flatten(model: ModelState) -> np.ndarray:
    """Copy of the flat learnable-parameter vector."""
    return model.params.copy()


def unflatten(model: ModelState, flat: np.ndarray) -> ModelState:
    """New state with parameters ``flat``; statistics carried over."""
    flat = np.ascontiguousarray(flat, dtype=np.float64)
    if flat.shape != model.params.shape:
        raise ShapeError("flat vector length does not match the architecture")
    return replace(model, params=flat.copy(), bn_stats=model.bn_stats.copy())


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_batch(model: ModelState, batch: Batch) -> None:
    if batch.features.shape[1] != model.arch.input_dim:
        raise ShapeError(
            f"batch feature dim {batch.features.shape[1]} != input_dim {model.arch.input_dim}"
        )
    if np.any(batch.labels >= model.arch.num_classes):
        raise ShapeError("labels exceed num_classes")


def _ema_stats(model: ModelState, batch_means, batch_vars) -> np.ndarray:
    """Running statistics after one train-mode forward."""
    new = model.bn_stats.copy()
    means, variances = _stats_views(model.arch, new)
    m = model.bn_momentum
    for i in range(model.arch.n_hidden):
        if means[i] is not None:
            means[i][...] = (1.0 - m) * means[i] + m * batch_means[i]
            variances[i][...] = (1.0 - m) * variances[i] + m * batch_vars[i]
    return new


def forward(model: ModelState, batch: Batch, mode: str = "eval"):
    """Compute logits; in train mode also advance the running statistics.

    Returns ``(logits, updated_model)``. Eval mode returns the input model
    unchanged and is fully deterministic.
    """
    _check_batch(model, batch)
    Ws, bs, gammas, betas = _param_views(model.arch, model.params)
    if mode == "eval":
        means, variances = _stats_views(model.arch, model.bn_stats)
        logits = _backend.forward_eval(batch.features, Ws, bs, gammas, betas, means, variances)
        return logits, model
    if mode != "train":
        raise ShapeError(f"unknown forward mode {mode!r}")
    logits, bmeans, bvars = _backend.forward_train(batch.features, Ws, bs, gammas, betas)
    if n_stats(model.arch) == 0:
        return logits, model
    return logits, replace(model, bn_stats=_ema_stats(model, bmeans, bvars))


def _loss_grad_raw(model: ModelState, batch: Batch):
    """Loss, flat gradient and the train-mode batch statistics."""
    _check_batch(model, batch)
    Ws, bs, gammas, betas = _param_views(model.arch, model.params)
    grad = np.zeros_like(model.params)
    gWs, gbs, ggammas, gbetas = _param_views(model.arch, grad)
    loss, bmeans, bvars = _backend.loss_grad(
        batch.features, batch.labels, Ws, bs, gammas, betas, gWs, gbs, ggammas, gbetas
    )
    return float(loss), grad, bmeans, bvars


def loss_and_grad(model: ModelState, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its parameter gradient.

    Train-mode batch statistics are used for normalization; they are held
    constant under differentiation (see the module docstring).
    """
    loss, grad, _, _ = _loss_grad_raw(model, batch)
    return loss, grad


def loss_grad_update(model: ModelState, batch: Batch):
    """Like :func:`loss_and_grad` but also returns the post-forward running
    statistics (``None`` when the architecture has no batch norm)."""
    loss, grad, bmeans, bvars = _loss_grad_raw(model, batch)
    if n_stats(model.arch) == 0:
        return loss, grad, None
    return loss, grad, _ema_stats(model, bmeans, bvars)


def _frozen_loss(model: ModelState, batch: Batch):
    """The frozen-statistics loss as a function of the flat parameters."""
    arch = model.arch
    if n_stats(arch) > 0:
        Ws, bs, gammas, betas = _param_views(arch, model.params)
        _, bmeans, bvars = _backend.forward_train(batch.features, Ws, bs, gammas, betas)
        frozen_means = [None if m is None else np.array(m) for m in bmeans]
        frozen_vars = [None if v is None else np.array(v) for v in bvars]
    else:
        frozen_means, frozen_vars = _stats_views(arch, model.bn_stats)

    rows = np.arange(batch.size)

    def f(flat: np.ndarray) -> float:
        Ws, bs, gammas, betas = _param_views(arch, flat)
        logits = _backend.forward_eval(
            batch.features, Ws, bs, gammas, betas, frozen_means, frozen_vars
        )
        zmax = logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(logits - zmax).sum(axis=1)) + zmax[:, 0]
        return float(np.mean(lse - logits[rows, batch.labels]))

    return f


def finite_difference_gradient(model: ModelState, batch: Batch, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle.

    Batch-norm statistics are frozen at the nominal parameters so the probed
    loss is the same smooth function the analytic gradient differentiates.
    """
    if h <= 0.0:
        raise ShapeError("finite-difference step h must be positive")
    f = _frozen_loss(model, batch)
    grad = np.zeros_like(model.params)
    probe = model.params.copy()
    for i in range(probe.size):
        orig = probe[i]
        probe[i] = orig + h
        up = f(probe)
        probe[i] = orig - h
        down = f(probe)
        probe[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad


def optimizer_step(
    model: ModelState, grad: np.ndarray, spec: OptimizerSpec, state: OptimizerState
) -> tuple[ModelState, OptimizerState]:
    """One SGD/Adam step on the flat parameters; running stats untouched."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.params.shape:
        raise ShapeError("gradient length does not match the parameters")
    g = grad + spec.weight_decay * model.params if spec.weight_decay else grad
    if spec.kind == "sgd":
        if state.velocity is None or state.velocity.shape != grad.shape:
            raise ShapeError("optimizer state does not match the parameters")
        velocity = spec.momentum * state.velocity + g
        new_params = model.params - spec.learning_rate * velocity
        new_state = OptimizerState(state.step_count + 1, velocity=velocity)
    else:
        if state.first_moment is None or state.first_moment.shape != grad.shape:
            raise ShapeError("optimizer state does not match the parameters")
        t = state.step_count + 1
        m = spec.beta1 * state.first_moment + (1.0 - spec.beta1) * g
        v = spec.beta2 * state.second_moment + (1.0 - spec.beta2) * g * g
        m_hat = m / (1.0 - spec.beta1**t)
        v_hat = v / (1.0 - spec.beta2**t)
        new_params = model.params - spec.learning_rate * m_hat / (np.sqrt(v_hat) + spec.epsilon)
        new_state = OptimizerState(t, m, v)
    return replace(model, params=new_params, bn_stats=model.bn_stats.copy()), new_state


def interpolate_params(theta_a: ModelState, theta_b: ModelState, beta: float) -> ModelState:
    """``theta_a + beta * (theta_b - theta_a)`` on parameters and BN stats.

    ``beta = 0`` and ``beta = 1`` return exact copies of the respective
    endpoint, bit for bit.
    """
    if theta_a.arch != theta_b.arch:
        raise ArchMismatchError("interpolation endpoints have different architectures")
    if beta == 0.0:
        return replace(theta_a, params=theta_a.params.copy(), bn_stats=theta_a.bn_stats.copy())
    if beta == 1.0:
        return replace(theta_a, params=theta_b.params.copy(), bn_stats=theta_b.bn_stats.copy())
    params = theta_a.params + beta * (theta_b.params - theta_a.params)
    stats = theta_a.bn_stats + beta * (theta_b.bn_stats - theta_a.bn_stats)
    return replace(theta_a, params=params, bn_stats=stats)


def eval_logits(model: ModelState, features: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Eval-mode logits for an arbitrary feature matrix, chunked."""
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.arch.input_dim:
        raise ShapeError("feature matrix does not match the architecture input_dim")
    Ws, bs, gammas, betas = _param_views(model.arch, model.params)
    means, variances = _stats_views(model.arch, model.bn_stats)
    if features.shape[0] <= chunk:
        return _backend.forward_eval(features, Ws, bs, gammas, betas, means, variances)
    pieces = [
        _backend.forward_eval(features[i : i + chunk], Ws, bs, gammas, betas, means, variances)
        for i in range(0, features.shape[0], chunk)
    ]
    return np.vstack(pieces)


def dataset_loss_and_accuracy(
    model: ModelState, features: np.ndarray, labels: np.ndarray
) -> tuple[float, float]:
    """Eval-mode mean cross-entropy and argmax accuracy over a dataset."""
    labels = np.asarray(labels, dtype=np.int64)
    logits = eval_logits(model, features)
    zmax = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - zmax).sum(axis=1)) + zmax[:, 0]
    rows = np.arange(labels.size)
    loss = float(np.mean(lse - logits[rows, labels]))
    accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))
    return loss, accuracy
