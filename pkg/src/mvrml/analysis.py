"""Diagnostics and theory: sharpness probe, loss-surface plane, and the
uniform-stability generalization-bound evaluator.

Sharpness at radius ``gamma`` is the expected loss increase under Gaussian
weight perturbation,

    sharpness(gamma) = E[L(theta + eps)] - L(theta),   eps ~ N(0, gamma^2 I),

estimated by Monte Carlo over the flat learnable parameters (batch-norm
running statistics are data statistics and are never perturbed). Positive
values near a minimum; the lower, the flatter.

The loss-surface plane through three weight vectors uses the Gram-Schmidt
basis ``u_hat = (w2-w1)/|w2-w1|`` and ``v_hat`` as the normalized rejection
of ``w3-w1`` from ``u_hat`` (its sign convention ``v_hat . (w3-w1) >= 0``
follows from the construction); grid point ``(a, b)`` materializes the
parameters ``w1 + a u_hat + b v_hat``.

The bound evaluator computes, for empirical source risk ``R``, divergence
supremum ``D``, stability constants ``b1`` over ``n`` task sequences and
``b2`` over tasks per sequence, loss bound ``M`` and confidence ``delta``:

    R + D/2 + 2 b1 + (4 n b1 + M) sqrt(ln(1/delta) / (2 n)) + 2 b2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .domains import DomainDataset, class_conditional_kl
from .errors import DegenerateGeometryError, MissingSpecError, ShapeError
from .nn_core import ArchSpec, ModelState, dataset_loss_and_accuracy, n_params, n_stats
from .rng import RngStream
from .training import reestimate_bn

__all__ = [
    "SharpnessConfig",
    "SurfacePlane",
    "BoundInputs",
    "sharpness_probe",
    "sharpness_of_loss",
    "surface_plane_basis",
    "surface_grid_losses",
    "theorem1_bound",
    "estimate_bound_terms",
    "knn_kl_estimate",
]


@dataclass(frozen=True)
class SharpnessConfig:
    """Radii and sample count for the sharpness probe."""

    radii_gamma: tuple[float, ...] = (0.01, 0.05, 0.1, 0.2)
    perturbations_per_radius: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "radii_gamma", tuple(float(g) for g in self.radii_gamma))
        if not self.radii_gamma or any(g <= 0 for g in self.radii_gamma):
            raise ShapeError("radii must be positive")
        if any(nxt <= cur for cur, nxt in zip(self.radii_gamma, self.radii_gamma[1:])):
            raise ShapeError("radii must be strictly increasing")
        if self.perturbations_per_radius < 1:
            raise ShapeError("perturbations_per_radius must be positive")


def sharpness_of_loss(loss_fn, theta: np.ndarray, cfg: SharpnessConfig):
    """Monte-Carlo sharpness of an arbitrary loss over a flat vector.

    Draw order: radii ascending, perturbations sequential, one generator.
    Returns ``[(gamma, sharpness), ...]``.
    """
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    gen = RngStream(cfg.seed, 0).generator()
    base = float(loss_fn(theta))
    out = []
    for gamma in cfg.radii_gamma:
        total = 0.0
        for _ in range(cfg.perturbations_per_radius):
            eps = gen.normal(0.0, gamma, size=theta.size)
            total += float(loss_fn(theta + eps)) - base
        out.append((gamma, total / cfg.perturbations_per_radius))
    return out


def sharpness_probe(model: ModelState, dataset: DomainDataset, cfg: SharpnessConfig):
    """Sharpness of the eval-mode dataset loss around the model's weights."""

    def loss_fn(flat: np.ndarray) -> float:
        probe = ModelState(model.arch, flat, model.bn_stats, model.bn_momentum)
        loss, _ = dataset_loss_and_accuracy(probe, dataset.features, dataset.labels)
        return loss

    return sharpness_of_loss(loss_fn, model.params, cfg)


@dataclass
class SurfacePlane:
    """An affine plane in weight space with an orthonormal basis."""

    origin: np.ndarray
    basis_u: np.ndarray
    basis_v: np.ndarray
    w2_coords: tuple[float, float]
    w3_coords: tuple[float, float]
    grid_extent: float = 1.2
    resolution: int = 25

    def grid_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate axes covering the triangle, widened by the extent."""
        a_pts = np.array([0.0, self.w2_coords[0], self.w3_coords[0]])
        b_pts = np.array([0.0, self.w2_coords[1], self.w3_coords[1]])
        spans = []
        for pts in (a_pts, b_pts):
            center = 0.5 * (pts.max() + pts.min())
            half = max(0.5 * (pts.max() - pts.min()), 1e-12) * self.grid_extent
            spans.append(np.linspace(center - half, center + half, self.resolution))
        return spans[0], spans[1]


def surface_plane_basis(
    w1: np.ndarray,
    w2: np.ndarray,
    w3: np.ndarray,
    grid_extent: float = 1.2,
    resolution: int = 25,
) -> SurfacePlane:
    """Orthonormal in-plane basis through three weight vectors."""
    w1 = np.ascontiguousarray(w1, dtype=np.float64)
    w2 = np.ascontiguousarray(w2, dtype=np.float64)
    w3 = np.ascontiguousarray(w3, dtype=np.float64)
    if w1.shape != w2.shape or w1.shape != w3.shape or w1.ndim != 1:
        raise ShapeError("plane vectors must be flat and equally sized")
    d2 = w2 - w1
    norm2 = float(np.linalg.norm(d2))
    if norm2 == 0.0:
        raise DegenerateGeometryError("w2 coincides with w1")
    u_hat = d2 / norm2
    d3 = w3 - w1
    proj = float(d3 @ u_hat)
    v = d3 - proj * u_hat
    norm_v = float(np.linalg.norm(v))
    if norm_v <= 1e-12 * max(1.0, float(np.linalg.norm(d3))):
        raise DegenerateGeometryError("w3 is colinear with w1 and w2")
    v_hat = v / norm_v
    return SurfacePlane(
        origin=w1.copy(),
        basis_u=u_hat,
        basis_v=v_hat,
        w2_coords=(norm2, 0.0),
        w3_coords=(proj, norm_v),
        grid_extent=grid_extent,
        resolution=resolution,
    )


def surface_grid_losses(
    arch: ArchSpec,
    plane: SurfacePlane,
    dataset: DomainDataset,
    bn_policy: str = "interpolate",
    bn_stats: np.ndarray | None = None,
    a_coords: np.ndarray | None = None,
    b_coords: np.ndarray | None = None,
):
    """Eval-mode dataset loss over a grid in the plane.

    ``bn_policy="interpolate"`` evaluates every grid point under one shared
    set of running statistics (``bn_stats``, defaulting to the init values);
    ``"reestimate_per_point"`` recomputes exact statistics from the dataset
    at every point, at grid x dataset cost. Grid point ``(0, 0)`` is
    materialized as ``w1`` itself, bit for bit.

    Returns ``(a_coords, b_coords, losses)`` with ``losses[i, j]`` the loss
    at ``(a_coords[i], b_coords[j])``.
    """
    if bn_policy not in ("interpolate", "reestimate_per_point"):
        raise ShapeError(f"unknown bn_policy {bn_policy!r}")
    if plane.origin.size != n_params(arch):
        raise ShapeError("plane vectors do not match the architecture parameter count")
    if a_coords is None or b_coords is None:
        auto_a, auto_b = plane.grid_axes()
        a_coords = auto_a if a_coords is None else np.asarray(a_coords, dtype=np.float64)
        b_coords = auto_b if b_coords is None else np.asarray(b_coords, dtype=np.float64)
    else:
        a_coords = np.asarray(a_coords, dtype=np.float64)
        b_coords = np.asarray(b_coords, dtype=np.float64)

    if bn_stats is None:
        stats = np.zeros(n_stats(arch))
        # init-style statistics: mean 0, variance 1
        probe = ModelState(arch, plane.origin, stats)
        for layer in arch.use_batchnorm_after:
            probe.running_var(layer)[...] = 1.0
    else:
        stats = np.ascontiguousarray(bn_stats, dtype=np.float64)

    losses = np.empty((a_coords.size, b_coords.size))
    for i, a in enumerate(a_coords):
        for j, b in enumerate(b_coords):
            if a == 0.0 and b == 0.0:
                flat = plane.origin.copy()
            else:
                flat = plane.origin + a * plane.basis_u + b * plane.basis_v
            point = ModelState(arch, flat, stats)
            if bn_policy == "reestimate_per_point" and n_stats(arch) > 0:
                point = reestimate_bn(point, [dataset])
            loss, _ = dataset_loss_and_accuracy(point, dataset.features, dataset.labels)
            losses[i, j] = loss
    return a_coords, b_coords, losses


@dataclass(frozen=True)
class BoundInputs:
    """Inputs of the generalization-bound evaluator."""

    empirical_risk: float
    sup_divergence: float
    beta1: float
    beta2: float
    n_sequences: int
    delta: float
    loss_bound_M: float

    def __post_init__(self):
        if self.empirical_risk < 0 or self.sup_divergence < 0:
            raise ShapeError("risk and divergence must be non-negative")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ShapeError("stability constants must be non-negative")
        if self.n_sequences < 1:
            raise ShapeError("n_sequences must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ShapeError("delta must lie in (0, 1)")
        if self.loss_bound_M <= 0:
            raise ShapeError("loss_bound_M must be positive")


def theorem1_bound(inputs: BoundInputs) -> float:
    """Exact arithmetic evaluation of the stability bound (module docstring)."""
    n = inputs.n_sequences
    confidence = (4.0 * n * inputs.beta1 + inputs.loss_bound_M) * math.sqrt(
        math.log(1.0 / inputs.delta) / (2.0 * n)
    )
    return (
        inputs.empirical_risk
        + 0.5 * inputs.sup_divergence
        + 2.0 * inputs.beta1
        + confidence
        + 2.0 * inputs.beta2
    )


def knn_kl_estimate(
    samples_p: np.ndarray, samples_q: np.ndarray, k: int = 5
) -> float:
    """k-NN Monte-Carlo KL estimate between two sample sets (approximate).

    Wang-Kulkarni-Verdu estimator: ``d/n * sum log(nu_k / rho_k) +
    log(m / (n - 1))`` with ``rho`` the k-th neighbor distance within ``p``
    (self excluded) and ``nu`` the k-th neighbor distance into ``q``.
    Clearly labeled approximate: used only when generative specs are absent.
    """
    p = np.ascontiguousarray(samples_p, dtype=np.float64)
    q = np.ascontiguousarray(samples_q, dtype=np.float64)
    if p.ndim != 2 or q.ndim != 2 or p.shape[1] != q.shape[1]:
        raise ShapeError("sample sets must be 2-D with equal dimension")
    n, d = p.shape
    m = q.shape[0]
    if n <= k or m < k:
        raise ShapeError("not enough samples for the requested k")
    rho = cKDTree(p).query(p, k=k + 1)[0][:, -1]
    nu = cKDTree(q).query(p, k=k)[0]
    nu = nu[:, -1] if nu.ndim == 2 else nu
    tiny = np.finfo(np.float64).tiny
    ratios = np.log(np.maximum(nu, tiny) / np.maximum(rho, tiny))
    return float(d * ratios.mean() + math.log(m / (n - 1.0)))


def _knn_class_kl(source: DomainDataset, target: DomainDataset, k: int) -> float:
    classes = np.intersect1d(np.unique(source.labels), np.unique(target.labels))
    if classes.size == 0:
        raise ShapeError("source and target share no class labels")
    vals = []
    for c in classes:
        vals.append(
            knn_kl_estimate(
                source.features[source.labels == c], target.features[target.labels == c], k
            )
        )
    # the estimator can dip below zero on finite samples; KL cannot
    return max(0.0, float(np.mean(vals)))


def estimate_bound_terms(
    model: ModelState,
    sources: list[DomainDataset],
    target: DomainDataset,
    reduction: str = "mean_over_classes",
    monte_carlo: bool = False,
    knn_k: int = 5,
) -> tuple[float, float]:
    """Empirical source risk and the divergence supremum over sources.

    Risk is the eval-mode mean cross-entropy over the pooled sources. The
    divergence proxy per source is the closed-form class-conditional KL when
    generative specs are available; otherwise the approximate k-NN estimator
    is used if ``monte_carlo`` is enabled, and an error raised if not.
    """
    if not sources:
        raise ShapeError("need at least one source domain")
    pooled_X = np.vstack([d.features for d in sources])
    pooled_y = np.concatenate([d.labels for d in sources])
    risk, _ = dataset_loss_and_accuracy(model, pooled_X, pooled_y)

    have_specs = target.spec is not None and all(d.spec is not None for d in sources)
    if have_specs:
        divs = [class_conditional_kl(d.spec, target.spec, reduction) for d in sources]
    elif monte_carlo:
        divs = [_knn_class_kl(d, target, knn_k) for d in sources]
    else:
        raise MissingSpecError(
            "divergence needs generative specs; pass monte_carlo=True to use "
            "the approximate k-NN estimator on raw samples"
        )
    return risk, float(np.max(divs))
