"""Multi-view prediction: weak input transforms, logit-average ensembling,
and the prediction-change-rate diagnostic.

A weak transform of a feature vector is ``x' = s * x + eps`` with one scalar
``s ~ U[lo, hi]`` per call (the crop-scale analog for vector inputs),
``eps ~ N(0, jitter_sigma^2 I)``, and an optional coordinate flip applied
with probability 1/2. The ``strong`` tier multiplies ``jitter_sigma`` by 4
and widens the scale interval to three times its half-width about the same
center (floored at 0.05); it exists to demonstrate that aggressive views
hurt, and is not the default.

Multi-view prediction averages the *logits* of ``m`` transformed copies and
applies softmax once. Argmax ties break toward the lowest class index, so
the change rate is well defined even for constant models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domains import DomainDataset
from .errors import ShapeError
from .nn_core import ModelState, eval_logits, softmax
from .rng import RngStream

__all__ = [
    "TransformSpec",
    "MvpConfig",
    "apply_weak_transform",
    "predict_multiview",
    "multiview_accuracy",
    "prediction_change_rate",
    "STRONG_JITTER_FACTOR",
    "STRONG_SCALE_WIDEN",
]

STRONG_JITTER_FACTOR = 4.0
STRONG_SCALE_WIDEN = 3.0
_SCALE_FLOOR = 0.05


@dataclass(frozen=True)
class TransformSpec:
    """Parameters of the weak stochastic input transform."""

    jitter_sigma: float = 0.05
    scale_range: tuple[float, float] = (0.8, 1.0)
    flip_axis: int | None = None
    strength: str = "weak"

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi:
            raise ShapeError("scale_range must satisfy 0 < lo <= hi")
        if self.jitter_sigma < 0.0:
            raise ShapeError("jitter_sigma must be non-negative")
        if self.strength not in ("weak", "strong"):
            raise ShapeError(f"unknown strength {self.strength!r}")

    def effective_jitter(self) -> float:
        if self.strength == "strong":
            return self.jitter_sigma * STRONG_JITTER_FACTOR
        return self.jitter_sigma

    def effective_scale_range(self) -> tuple[float, float]:
        lo, hi = self.scale_range
        if self.strength == "strong":
            center = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo) * STRONG_SCALE_WIDEN
            return (max(center - half, _SCALE_FLOOR), center + half)
        return (lo, hi)


@dataclass(frozen=True)
class MvpConfig:
    """Multi-view prediction settings: view count, transform, seed."""

    num_views_m: int = 32
    transform: TransformSpec = TransformSpec()
    seed: int = 0

    def __post_init__(self):
        if self.num_views_m < 1:
            raise ShapeError("num_views_m must be at least 1")


def _transform_rows(gen: np.random.Generator, x: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """One transformed copy of ``x``; draw order: scale, jitter, flip."""
    lo, hi = spec.effective_scale_range()
    s = gen.uniform(lo, hi)
    eps = gen.normal(0.0, spec.effective_jitter(), size=x.shape)
    out = s * x + eps
    if spec.flip_axis is not None and gen.uniform() < 0.5:
        out[spec.flip_axis] = -out[spec.flip_axis]
    return out


def apply_weak_transform(x: np.ndarray, spec: TransformSpec, rng: RngStream) -> np.ndarray:
    """Apply one stochastic weak transform to a feature vector."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("apply_weak_transform expects a single feature vector")
    _check_flip(spec, x.size)
    return _transform_rows(rng.generator(), x, spec)


def _check_flip(spec: TransformSpec, dim: int) -> None:
    if spec.flip_axis is not None and not 0 <= spec.flip_axis < dim:
        raise ShapeError("flip_axis out of range for the feature dimension")


def _views_of(gen: np.random.Generator, x: np.ndarray, cfg: MvpConfig) -> np.ndarray:
    views = np.empty((cfg.num_views_m, x.size))
    for v in range(cfg.num_views_m):
        views[v] = _transform_rows(gen, x, cfg.transform)
    return views


def predict_multiview(
    model: ModelState, x: np.ndarray, cfg: MvpConfig, rng: RngStream | None = None
) -> np.ndarray:
    """Probability vector from averaging logits over ``m`` transformed views.

    The logits are averaged first and softmax is applied once to the mean;
    averaging softmax outputs would be a different (and wrong) aggregation.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("predict_multiview expects a single feature vector")
    _check_flip(cfg.transform, x.size)
    gen = (rng or RngStream(cfg.seed, 0)).generator()
    views = _views_of(gen, x, cfg)
    logits = eval_logits(model, views)
    return softmax(logits.sum(axis=0) / cfg.num_views_m)


def multiview_accuracy(
    model: ModelState, dataset: DomainDataset, cfg: MvpConfig, chunk: int = 256
) -> float:
    """Dataset accuracy of multi-view prediction.

    Sample ``i`` uses the sub-stream ``RngStream(cfg.seed, 0).child(i)``, so
    per-sample evaluation order (or parallelism) cannot change the result.
    """
    base = RngStream(cfg.seed, 0)
    n, d = dataset.features.shape
    _check_flip(cfg.transform, d)
    m = cfg.num_views_m
    correct = 0
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = np.empty(((stop - start) * m, d))
        for i in range(start, stop):
            gen = base.child(i).generator()
            block[(i - start) * m : (i - start + 1) * m] = _views_of(
                gen, dataset.features[i], cfg
            )
        logits = eval_logits(model, block).reshape(stop - start, m, -1)
        preds = np.argmax(logits.sum(axis=1) / m, axis=1)
        correct += int(np.sum(preds == dataset.labels[start:stop]))
    return correct / n


def prediction_change_rate(
    model: ModelState,
    dataset: DomainDataset,
    spec: TransformSpec,
    trials: int,
    rng: RngStream,
) -> float:
    """Fraction of single-view predictions that flip under the transform.

    For every sample the clean argmax prediction is compared against the
    argmax prediction of one transformed copy, ``trials`` times; the rate is
    ``changed / (samples * trials)``. Sample ``i`` draws from ``rng.child(i)``
    across all its trials.
    """
    if trials < 1:
        raise ShapeError("trials must be positive")
    _check_flip(spec, dataset.feature_dim)
    clean = np.argmax(eval_logits(model, dataset.features), axis=1)
    n, d = dataset.features.shape
    gens = [rng.child(i).generator() for i in range(n)]
    changed = 0
    for _ in range(trials):
        perturbed = np.empty((n, d))
        for i in range(n):
            perturbed[i] = _transform_rows(gens[i], dataset.features[i], spec)
        preds = np.argmax(eval_logits(model, perturbed), axis=1)
        changed += int(np.sum(preds != clean))
    return changed / (n * trials)
