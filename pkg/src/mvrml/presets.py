"""Desk-scale default configurations.

The rotated-domain suite below is the reference benchmark: four domains
rotating the same three-class, two-dimensional Gaussian layout by
0/15/30/45 degrees. Class means sit on the first axis, symmetric about it,
so the optional coordinate flip of the weak transform is label preserving
at zero rotation. The covariances alternate orientation (tight/wide vs
wide/tight), giving curved class boundaries whose position moves with the
rotation; pooled training data therefore carries genuinely conflicting
labels where neighboring domains disagree.

Benchmark protocol: both trainers run at a matched gradient-evaluation
budget. One meta iteration evaluates T*s*2 = 18 batch gradients, so the
ERM preset multiplies iterations_per_epoch by 18 (same batch size, same
optimizer, same constant rate). Model selection is best source-validation
accuracy in both cases.
"""

from __future__ import annotations

from dataclasses import replace

from .domains import DomainSpec
from .mvp import MvpConfig, TransformSpec
from .nn_core import ArchSpec, OptimizerSpec
from .training import MetaConfig

BENCHMARK_ROTATIONS = (0.0, 15.0, 30.0, 45.0)
_CLASS_MEANS = ((-1.5, 0.0), (0.0, 0.0), (1.5, 0.0))
_CLASS_COVS = ((0.3, 2.2), (2.2, 0.3), (0.3, 2.2))


def benchmark_domain_specs(
    seed: int = 0,
    rotations: tuple[float, ...] = BENCHMARK_ROTATIONS,
    samples_per_class: int = 500,
) -> list[DomainSpec]:
    """The rotated four-domain suite used by the acceptance benchmark."""
    return [
        DomainSpec(
            domain_id=f"rot{int(rot):02d}",
            class_means=_CLASS_MEANS,
            class_cov_diag=_CLASS_COVS,
            rotation_deg=rot,
            samples_per_class=samples_per_class,
            seed=seed * 1009 + i,
        )
        for i, rot in enumerate(rotations)
    ]


def benchmark_arch(feature_dim: int = 2, num_classes: int = 3) -> ArchSpec:
    return ArchSpec(
        input_dim=feature_dim,
        hidden_dims=(48, 48),
        num_classes=num_classes,
        use_batchnorm_after=(0, 1),
    )


def benchmark_meta_config(seed: int = 0, epochs: int = 20) -> MetaConfig:
    """Meta-method training defaults for the reference benchmark."""
    return MetaConfig(
        trajectories_T=3,
        tasks_per_trajectory_s=3,
        inner_lr_alpha=0.3,
        outer_lr_beta=0.5,
        inner_optimizer=OptimizerSpec(kind="sgd", weight_decay=5e-4),
        epochs=epochs,
        iterations_per_epoch=50,
        batch_size=16,
        lr_schedule=(),
        seed=seed,
        arch=benchmark_arch(),
    )


def benchmark_erm_config(seed: int = 0, epochs: int = 20) -> MetaConfig:
    """ERM at the meta methods' gradient-evaluation budget (18x iterations)."""
    base = benchmark_meta_config(seed=seed, epochs=epochs)
    return replace(
        base,
        iterations_per_epoch=base.iterations_per_epoch
        * (2 * base.trajectories_T * base.tasks_per_trajectory_s),
    )


def two_phase_schedule(epochs: int, alpha: float, beta: float):
    """The paper-style late rate drop, as MetaConfig breakpoints."""
    return ((max(1, int(round(epochs * 0.8))), alpha / 10.0, beta / 10.0),)


def default_transform() -> TransformSpec:
    return TransformSpec(jitter_sigma=0.25, scale_range=(0.8, 1.0))


def default_mvp_config(seed: int = 0) -> MvpConfig:
    return MvpConfig(num_views_m=32, transform=default_transform(), seed=seed)
