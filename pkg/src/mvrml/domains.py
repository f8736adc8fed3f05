"""Multi-domain data: synthetic generator, CSV ingestion, splits, divergence.

The synthetic generator produces labeled Gaussian-mixture domains whose
inter-domain divergence is available in closed form: domain ``d`` draws,
per class ``k``, points from ``N(scale * R(rotation) @ class_means[k] +
shift, diag(class_cov_diag[k]))`` where ``R`` rotates the first two feature
coordinates and leaves the rest alone. Rotating, scaling and shifting the
class means while keeping diagonal covariances makes the class-conditional
KL divergence between two domains exact and monotone in the shift.

CSV contract (also in the README): header ``domain,label,f0,...,f{d-1}``,
UTF-8, ``label`` a non-negative integer, features decimal literals; the
writer emits 17 significant digits so float64 round-trips exactly.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CsvFormatError, MissingSpecError, ShapeError

__all__ = [
    "DomainSpec",
    "DomainDataset",
    "DomainSuite",
    "generate_synthetic_suite",
    "write_csv_suite",
    "load_csv_suite",
    "leave_one_domain_out",
    "class_conditional_kl",
]


@dataclass(frozen=True)
class DomainSpec:
    """Generative parameters of one synthetic domain.

    ``class_means`` and ``class_cov_diag`` are tuples of length-``d`` tuples,
    one per class; covariances are diagonal and strictly positive.
    """

    domain_id: str
    class_means: tuple[tuple[float, ...], ...]
    class_cov_diag: tuple[tuple[float, ...], ...]
    rotation_deg: float = 0.0
    shift: tuple[float, ...] = ()
    scale: float = 1.0
    samples_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        means = tuple(tuple(float(v) for v in row) for row in self.class_means)
        covs = tuple(tuple(float(v) for v in row) for row in self.class_cov_diag)
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "class_cov_diag", covs)
        if len(means) < 2:
            raise ShapeError("a domain needs at least 2 classes")
        dim = len(means[0])
        if dim < 2:
            raise ShapeError("feature dimension must be at least 2 (rotation plane)")
        if any(len(row) != dim for row in means):
            raise ShapeError("class_means rows must share one dimension")
        if len(covs) != len(means) or any(len(row) != dim for row in covs):
            raise ShapeError("class_cov_diag must match class_means in shape")
        if any(v <= 0.0 for row in covs for v in row):
            raise ShapeError("covariance entries must be positive")
        shift = tuple(float(v) for v in self.shift) or (0.0,) * dim
        if len(shift) != dim:
            raise ShapeError("shift dimension must match the class means")
        object.__setattr__(self, "shift", shift)
        if self.scale <= 0.0:
            raise ShapeError("scale must be positive")
        if self.samples_per_class <= 0:
            raise ShapeError("samples_per_class must be positive")

    @property
    def num_classes(self) -> int:
        return len(self.class_means)

    @property
    def feature_dim(self) -> int:
        return len(self.class_means[0])

    def transformed_means(self) -> np.ndarray:
        """(K, d) class means after rotation, scaling and shift."""
        means = np.asarray(self.class_means, dtype=np.float64)
        phi = np.deg2rad(self.rotation_deg)
        c, s = np.cos(phi), np.sin(phi)
        rotated = means.copy()
        rotated[:, 0] = c * means[:, 0] - s * means[:, 1]
        rotated[:, 1] = s * means[:, 0] + c * means[:, 1]
        return self.scale * rotated + np.asarray(self.shift, dtype=np.float64)


@dataclass
class DomainDataset:
    """Labeled samples tagged by domain; ``spec`` present for synthetic data."""

    domain_id: str
    features: np.ndarray
    labels: np.ndarray
    spec: DomainSpec | None = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ShapeError("a domain dataset must hold at least one sample")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError("labels must match the feature rows")
        if np.any(self.labels < 0):
            raise ShapeError("labels must be non-negative")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class DomainSuite:
    """An ordered collection of domains with consistent dims and classes."""

    datasets: list[DomainDataset]
    feature_dim: int
    num_classes: int

    @classmethod
    def from_datasets(cls, datasets: list[DomainDataset]) -> "DomainSuite":
        if not datasets:
            raise ShapeError("a suite needs at least one domain")
        dim = datasets[0].feature_dim
        if any(d.feature_dim != dim for d in datasets):
            raise ShapeError("domains disagree on feature dimension")
        num_classes = int(max(d.labels.max() for d in datasets)) + 1
        ids = [d.domain_id for d in datasets]
        if len(set(ids)) != len(ids):
            raise ShapeError("domain ids must be unique")
        return cls(datasets, dim, num_classes)

    @property
    def n_domains(self) -> int:
        return len(self.datasets)


def generate_synthetic_suite(specs: list[DomainSpec]) -> DomainSuite:
    """Deterministically materialize a suite from generative specs."""
    if not specs:
        raise ShapeError("no domain specs given")
    k, dim = specs[0].num_classes, specs[0].feature_dim
    if any(s.num_classes != k or s.feature_dim != dim for s in specs):
        raise ShapeError("specs disagree on class count or dimension")
    datasets = []
    for spec in specs:
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
        means = spec.transformed_means()
        sigmas = np.sqrt(np.asarray(spec.class_cov_diag, dtype=np.float64))
        feats = []
        labels = []
        for ki in range(k):
            z = gen.standard_normal((spec.samples_per_class, dim))
            feats.append(means[ki] + sigmas[ki] * z)
            labels.append(np.full(spec.samples_per_class, ki, dtype=np.int64))
        datasets.append(
            DomainDataset(spec.domain_id, np.vstack(feats), np.concatenate(labels), spec)
        )
    suite = DomainSuite.from_datasets(datasets)
    suite.num_classes = k
    return suite


def write_csv_suite(suite: DomainSuite, path) -> None:
    """Write a suite per the CSV contract (17 significant digits)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "label"] + [f"f{i}" for i in range(suite.feature_dim)])
        for ds in suite.datasets:
            for row, label in zip(ds.features, ds.labels):
                writer.writerow([ds.domain_id, int(label)] + [f"{v:.17g}" for v in row])


def load_csv_suite(path) -> DomainSuite:
    """Parse a suite CSV; domains are ordered by first appearance."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file") from None
        if len(header) < 3 or header[0] != "domain" or header[1] != "label":
            raise CsvFormatError("header must start with 'domain,label,f0,...'", 1)
        dim = len(header) - 2
        if header[2:] != [f"f{i}" for i in range(dim)]:
            raise CsvFormatError("feature columns must be named f0..f{d-1}", 1)

        order: list[str] = []
        feats: dict[str, list] = {}
        labels: dict[str, list] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise CsvFormatError(f"expected {dim + 2} fields, got {len(row)}", line_no)
            domain = row[0]
            try:
                label = int(row[1])
            except ValueError:
                raise CsvFormatError(f"label {row[1]!r} is not an integer", line_no) from None
            if label < 0:
                raise CsvFormatError("labels must be non-negative", line_no)
            try:
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise CsvFormatError("features must be decimal literals", line_no) from None
            if domain not in feats:
                order.append(domain)
                feats[domain] = []
                labels[domain] = []
            feats[domain].append(values)
            labels[domain].append(label)

    if not order:
        raise CsvFormatError("file holds a header but no data rows")
    if len(order) < 3:
        warnings.warn(
            f"suite has only {len(order)} domain(s); meta-split sampling needs "
            "at least 2 sources after leave-one-out",
            stacklevel=2,
        )
    datasets = [
        DomainDataset(d, np.asarray(feats[d]), np.asarray(labels[d], dtype=np.int64))
        for d in order
    ]
    return DomainSuite.from_datasets(datasets)


def leave_one_domain_out(
    suite: DomainSuite, target_index: int
) -> tuple[list[DomainDataset], DomainDataset]:
    """Split into (sources in original order, held-out target)."""
    if not 0 <= target_index < suite.n_domains:
        raise IndexError(
            f"target_index {target_index} out of range for {suite.n_domains} domains"
        )
    sources = [d for i, d in enumerate(suite.datasets) if i != target_index]
    return sources, suite.datasets[target_index]


def _kl_diag_gaussian(mu_a, cov_a, mu_b, cov_b) -> float:
    # KL(N(mu_a, diag cov_a) || N(mu_b, diag cov_b)), closed form.
    ratio = cov_a / cov_b
    quad = (mu_b - mu_a) ** 2 / cov_b
    return float(0.5 * np.sum(ratio + quad - 1.0 - np.log(ratio)))


def class_conditional_kl(
    spec_a: DomainSpec, spec_b: DomainSpec, reduction: str = "mean_over_classes"
) -> float:
    """Closed-form KL between matched class-conditional Gaussians.

    This is the divergence proxy used for the generalization-bound inputs:
    the joint mixtures admit no closed form, so the per-class KLs are
    reduced by ``mean_over_classes`` (default) or ``max_over_classes``.
    """
    if spec_a is None or spec_b is None:
        raise MissingSpecError(
            "class_conditional_kl needs generative specs; estimate divergence "
            "from samples for CSV-loaded data (analysis.estimate_bound_terms "
            "with monte_carlo=True)"
        )
    if reduction not in ("mean_over_classes", "max_over_classes"):
        raise ShapeError(f"unknown reduction {reduction!r}")
    if spec_a.num_classes != spec_b.num_classes or spec_a.feature_dim != spec_b.feature_dim:
        raise ShapeError("specs disagree on class count or dimension")
    mu_a = spec_a.transformed_means()
    mu_b = spec_b.transformed_means()
    cov_a = np.asarray(spec_a.class_cov_diag, dtype=np.float64)
    cov_b = np.asarray(spec_b.class_cov_diag, dtype=np.float64)
    kls = [
        _kl_diag_gaussian(mu_a[k], cov_a[k], mu_b[k], cov_b[k])
        for k in range(spec_a.num_classes)
    ]
    return float(np.max(kls)) if reduction == "max_over_classes" else float(np.mean(kls))
