"""Command-line driver: experiment orchestration and artifact emission.

Subcommands: ``gen-data``, ``train``, ``eval``, ``mvp-eval``, ``sharpness``,
``surface``, ``bound``, ``report``. Every run is driven by a JSON config
(all keys optional, defaults documented in the README) plus a few override
flags. Given the same config and seed, every emitted artifact is bitwise
identical across runs: floats serialize via their shortest round-trip form,
keys are sorted, and wall-clock times are never written into artifacts.
Payloads are fully computed before any file is opened, so failed runs leave
no partial artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import presets
from .analysis import (
    BoundInputs,
    SharpnessConfig,
    estimate_bound_terms,
    sharpness_probe,
    surface_grid_losses,
    surface_plane_basis,
    theorem1_bound,
)
from .checkpoint import load_model, model_to_dict, model_from_dict
from .domains import (
    DomainSpec,
    DomainSuite,
    generate_synthetic_suite,
    leave_one_domain_out,
    load_csv_suite,
    write_csv_suite,
)
from .episodic import SamplingStrategy
from .errors import ConfigError, MvrmlError
from .mvp import MvpConfig, TransformSpec, multiview_accuracy, prediction_change_rate
from .nn_core import ArchSpec, OptimizerSpec, dataset_loss_and_accuracy
from .rng import RngStream
from .training import MetaConfig, train_model

ARTIFACT_VERSION = 1

_STRATEGIES = {
    "s1": SamplingStrategy.S1_SAME_DOMAIN,
    "s2": SamplingStrategy.S2_ALL_DOMAINS,
    "s3": SamplingStrategy.S3_META_SPLIT,
}


@dataclass
class ExperimentConfig:
    """Validated experiment settings (one suite source, method, toggles)."""

    seed: int
    synthetic_specs: list[DomainSpec] | None
    csv_path: str | None
    target_index: int
    method: str
    training: MetaConfig
    arch: dict | None
    mvp: MvpConfig
    pcr_trials: int
    sharpness: SharpnessConfig
    surface_extent: float
    surface_resolution: int
    surface_bn_policy: str
    bound: dict


@dataclass
class MetricsRecord:
    """One evaluation row; mirrors the aggregate report columns."""

    method: str
    seed: int
    target_domain_id: str
    clean_accuracy: float
    mvp_accuracy: float | None = None
    pcr: float | None = None
    curves: list | None = None


def _expect(section: dict, allowed: set[str], prefix: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}", "unknown key")


def _typed(section: dict, key: str, types, default, prefix: str):
    if key not in section or section[key] is None:
        return default
    value = section[key]
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if types is int and isinstance(value, bool):
        raise ConfigError(f"{prefix}{key}", "expected an integer")
    if not isinstance(value, types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{prefix}{key}", f"expected {getattr(types, '__name__', types)}")
    return value


def _parse_domain_spec(entry: dict, index: int) -> DomainSpec:
    prefix = f"suite.synthetic[{index}]."
    if not isinstance(entry, dict):
        raise ConfigError(f"suite.synthetic[{index}]", "expected an object")
    allowed = {
        "domain_id", "class_means", "class_cov_diag", "rotation_deg",
        "shift", "scale", "samples_per_class", "seed",
    }
    _expect(entry, allowed, prefix)
    try:
        return DomainSpec(
            domain_id=_typed(entry, "domain_id", str, f"domain{index}", prefix),
            class_means=tuple(tuple(row) for row in entry["class_means"]),
            class_cov_diag=tuple(tuple(row) for row in entry["class_cov_diag"]),
            rotation_deg=_typed(entry, "rotation_deg", float, 0.0, prefix),
            shift=tuple(entry.get("shift") or ()),
            scale=_typed(entry, "scale", float, 1.0, prefix),
            samples_per_class=_typed(entry, "samples_per_class", int, 100, prefix),
            seed=_typed(entry, "seed", int, 0, prefix),
        )
    except KeyError as exc:
        raise ConfigError(f"{prefix}{exc.args[0]}", "missing required key") from None
    except MvrmlError as exc:
        raise ConfigError(f"suite.synthetic[{index}]", str(exc)) from None


def _parse_optimizer(section: dict, prefix: str) -> OptimizerSpec:
    allowed = {"kind", "learning_rate", "weight_decay", "momentum", "beta1", "beta2", "epsilon"}
    _expect(section, allowed, prefix)
    kind = _typed(section, "kind", str, "adam", prefix)
    if kind not in ("sgd", "adam"):
        raise ConfigError(f"{prefix}kind", f"unknown optimizer {kind!r}")
    try:
        return OptimizerSpec(
            kind=kind,
            learning_rate=_typed(section, "learning_rate", float, 5e-3, prefix),
            weight_decay=_typed(section, "weight_decay", float, 5e-4, prefix),
            momentum=_typed(section, "momentum", float, 0.0, prefix),
            beta1=_typed(section, "beta1", float, 0.9, prefix),
            beta2=_typed(section, "beta2", float, 0.999, prefix),
            epsilon=_typed(section, "epsilon", float, 1e-8, prefix),
        )
    except MvrmlError as exc:
        raise ConfigError(prefix.rstrip("."), str(exc)) from None


def _parse_arch(section: dict, prefix: str) -> dict:
    allowed = {"hidden_dims", "use_batchnorm_after"}
    _expect(section, allowed, prefix)
    return {
        "hidden_dims": tuple(_typed(section, "hidden_dims", list, [48, 48], prefix)),
        "use_batchnorm_after": tuple(
            _typed(section, "use_batchnorm_after", list, [0, 1], prefix)
        ),
    }


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a config dict and apply documented defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    _expect(
        raw,
        {"format_version", "seed", "suite", "target_index", "method",
         "training", "mvp", "sharpness", "surface", "bound"},
        "",
    )
    seed = _typed(raw, "seed", int, 0, "")
    target_index = _typed(raw, "target_index", int, 0, "")
    method = _typed(raw, "method", str, "mvrml", "")
    if method not in ("erm", "reptile", "mvrml"):
        raise ConfigError("method", f"unknown method {method!r}")

    suite = raw.get("suite") or {}
    _expect(suite, {"synthetic", "csv"}, "suite.")
    synthetic_specs = None
    csv_path = None
    if "synthetic" in suite and "csv" in suite:
        raise ConfigError("suite", "give exactly one of 'synthetic' or 'csv'")
    if "csv" in suite:
        csv_path = _typed(suite, "csv", str, None, "suite.")
    else:
        entries = suite.get("synthetic")
        if entries is None:
            synthetic_specs = presets.benchmark_domain_specs(seed=0)
        else:
            if not isinstance(entries, list) or not entries:
                raise ConfigError("suite.synthetic", "expected a non-empty list")
            synthetic_specs = [_parse_domain_spec(e, i) for i, e in enumerate(entries)]

    tr = raw.get("training") or {}
    _expect(
        tr,
        {"trajectories", "tasks_per_trajectory", "inner_lr_alpha", "outer_lr_beta",
         "inner_optimizer", "epochs", "iterations_per_epoch", "batch_size", "strategy",
         "lr_schedule", "arch", "outer_weight_decay", "bn_reestimate",
         "validation_fraction"},
        "training.",
    )
    strategy_name = _typed(tr, "strategy", str, "s3", "training.")
    if strategy_name not in _STRATEGIES:
        raise ConfigError("training.strategy", f"unknown strategy {strategy_name!r}")
    schedule_raw = _typed(tr, "lr_schedule", list, None, "training.")
    base = presets.benchmark_meta_config(seed=seed)
    arch_section = tr.get("arch")
    arch_kwargs = _parse_arch(arch_section, "training.arch.") if arch_section else None
    try:
        training = MetaConfig(
            trajectories_T=_typed(tr, "trajectories", int, 3, "training."),
            tasks_per_trajectory_s=_typed(tr, "tasks_per_trajectory", int, 3, "training."),
            inner_lr_alpha=_typed(tr, "inner_lr_alpha", float, base.inner_lr_alpha, "training."),
            outer_lr_beta=_typed(tr, "outer_lr_beta", float, base.outer_lr_beta, "training."),
            inner_optimizer=(
                _parse_optimizer(tr["inner_optimizer"], "training.inner_optimizer.")
                if tr.get("inner_optimizer")
                else base.inner_optimizer
            ),
            epochs=_typed(tr, "epochs", int, base.epochs, "training."),
            iterations_per_epoch=_typed(
                tr, "iterations_per_epoch", int, base.iterations_per_epoch, "training."
            ),
            batch_size=_typed(tr, "batch_size", int, base.batch_size, "training."),
            strategy=_STRATEGIES[strategy_name],
            lr_schedule=(
                tuple((int(e), float(a), float(b)) for e, a, b in schedule_raw)
                if schedule_raw is not None
                else base.lr_schedule
            ),
            seed=seed,
            arch=None,
            outer_weight_decay=_typed(tr, "outer_weight_decay", float, 0.0, "training."),
            bn_reestimate=_typed(tr, "bn_reestimate", bool, True, "training."),
            validation_fraction=_typed(tr, "validation_fraction", float, 0.1, "training."),
        )
    except MvrmlError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("training", str(exc)) from None
    mv = raw.get("mvp") or {}
    _expect(mv, {"views", "seed", "pcr_trials", "transform"}, "mvp.")
    tf = mv.get("transform") or {}
    _expect(tf, {"jitter_sigma", "scale_range", "flip_axis", "strength"}, "mvp.transform.")
    default_tf = presets.default_transform()
    try:
        transform = TransformSpec(
            jitter_sigma=_typed(tf, "jitter_sigma", float, default_tf.jitter_sigma, "mvp.transform."),
            scale_range=tuple(
                _typed(tf, "scale_range", list, list(default_tf.scale_range), "mvp.transform.")
            ),
            flip_axis=_typed(tf, "flip_axis", int, None, "mvp.transform."),
            strength=_typed(tf, "strength", str, "weak", "mvp.transform."),
        )
        mvp_cfg = MvpConfig(
            num_views_m=_typed(mv, "views", int, 32, "mvp."),
            transform=transform,
            seed=_typed(mv, "seed", int, seed, "mvp."),
        )
    except MvrmlError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("mvp", str(exc)) from None
    pcr_trials = _typed(mv, "pcr_trials", int, 8, "mvp.")

    sh = raw.get("sharpness") or {}
    _expect(sh, {"radii", "perturbations_per_radius", "seed"}, "sharpness.")
    try:
        sharp_cfg = SharpnessConfig(
            radii_gamma=tuple(_typed(sh, "radii", list, [0.01, 0.05, 0.1, 0.2], "sharpness.")),
            perturbations_per_radius=_typed(sh, "perturbations_per_radius", int, 10, "sharpness."),
            seed=_typed(sh, "seed", int, seed, "sharpness."),
        )
    except MvrmlError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("sharpness", str(exc)) from None

    su = raw.get("surface") or {}
    _expect(su, {"extent", "resolution", "bn_policy"}, "surface.")
    bn_policy = _typed(su, "bn_policy", str, "interpolate", "surface.")
    if bn_policy not in ("interpolate", "reestimate_per_point"):
        raise ConfigError("surface.bn_policy", f"unknown policy {bn_policy!r}")

    bd = raw.get("bound") or {}
    _expect(
        bd,
        {"empirical_risk", "sup_divergence", "beta1", "beta2", "n_sequences",
         "delta", "loss_bound_M"},
        "bound.",
    )
    bound = {
        "empirical_risk": _typed(bd, "empirical_risk", float, None, "bound."),
        "sup_divergence": _typed(bd, "sup_divergence", float, None, "bound."),
        "beta1": _typed(bd, "beta1", float, 0.01, "bound."),
        "beta2": _typed(bd, "beta2", float, 0.01, "bound."),
        "n_sequences": _typed(bd, "n_sequences", int, 100, "bound."),
        "delta": _typed(bd, "delta", float, 0.1, "bound."),
        "loss_bound_M": _typed(bd, "loss_bound_M", float, 1.0, "bound."),
    }

    return ExperimentConfig(
        seed=seed,
        synthetic_specs=synthetic_specs,
        csv_path=csv_path,
        target_index=target_index,
        method=method,
        training=training,
        arch=arch_kwargs,
        mvp=mvp_cfg,
        pcr_trials=pcr_trials,
        sharpness=sharp_cfg,
        surface_extent=_typed(su, "extent", float, 1.2, "surface."),
        surface_resolution=_typed(su, "resolution", int, 25, "surface."),
        surface_bn_policy=bn_policy,
        bound=bound,
    )


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON config file, applying defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical serialized form; parsing it again is semantically equal."""
    suite: dict = {}
    if cfg.csv_path is not None:
        suite["csv"] = cfg.csv_path
    else:
        suite["synthetic"] = [
            {
                "domain_id": s.domain_id,
                "class_means": [list(row) for row in s.class_means],
                "class_cov_diag": [list(row) for row in s.class_cov_diag],
                "rotation_deg": s.rotation_deg,
                "shift": list(s.shift),
                "scale": s.scale,
                "samples_per_class": s.samples_per_class,
                "seed": s.seed,
            }
            for s in cfg.synthetic_specs
        ]
    t = cfg.training
    opt = t.inner_optimizer
    return {
        "format_version": ARTIFACT_VERSION,
        "seed": cfg.seed,
        "suite": suite,
        "target_index": cfg.target_index,
        "method": cfg.method,
        "training": {
            "trajectories": t.trajectories_T,
            "tasks_per_trajectory": t.tasks_per_trajectory_s,
            "inner_lr_alpha": t.inner_lr_alpha,
            "outer_lr_beta": t.outer_lr_beta,
            "inner_optimizer": {
                "kind": opt.kind,
                "learning_rate": opt.learning_rate,
                "weight_decay": opt.weight_decay,
                "momentum": opt.momentum,
                "beta1": opt.beta1,
                "beta2": opt.beta2,
                "epsilon": opt.epsilon,
            },
            "epochs": t.epochs,
            "iterations_per_epoch": t.iterations_per_epoch,
            "batch_size": t.batch_size,
            "strategy": t.strategy.value,
            "lr_schedule": [list(bp) for bp in t.lr_schedule],
            "outer_weight_decay": t.outer_weight_decay,
            "bn_reestimate": t.bn_reestimate,
            "validation_fraction": t.validation_fraction,
            **(
                {"arch": {
                    "hidden_dims": list(cfg.arch["hidden_dims"]),
                    "use_batchnorm_after": list(cfg.arch["use_batchnorm_after"]),
                }}
                if cfg.arch is not None
                else {}
            ),
        },
        "mvp": {
            "views": cfg.mvp.num_views_m,
            "seed": cfg.mvp.seed,
            "pcr_trials": cfg.pcr_trials,
            "transform": {
                "jitter_sigma": cfg.mvp.transform.jitter_sigma,
                "scale_range": list(cfg.mvp.transform.scale_range),
                "flip_axis": cfg.mvp.transform.flip_axis,
                "strength": cfg.mvp.transform.strength,
            },
        },
        "sharpness": {
            "radii": list(cfg.sharpness.radii_gamma),
            "perturbations_per_radius": cfg.sharpness.perturbations_per_radius,
            "seed": cfg.sharpness.seed,
        },
        "surface": {
            "extent": cfg.surface_extent,
            "resolution": cfg.surface_resolution,
            "bn_policy": cfg.surface_bn_policy,
        },
        "bound": dict(cfg.bound),
    }


def _load_suite(cfg: ExperimentConfig) -> DomainSuite:
    if cfg.csv_path is not None:
        return load_csv_suite(cfg.csv_path)
    return generate_synthetic_suite(cfg.synthetic_specs)


def _resolve_training(cfg: ExperimentConfig, suite: DomainSuite) -> MetaConfig:
    """Materialize the architecture against the suite dimensions."""
    if cfg.arch is not None:
        arch = ArchSpec(
            input_dim=suite.feature_dim,
            hidden_dims=cfg.arch["hidden_dims"],
            num_classes=suite.num_classes,
            use_batchnorm_after=cfg.arch["use_batchnorm_after"],
        )
        return replace(cfg.training, arch=arch)
    return cfg.training


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _metrics_payload(record: MetricsRecord) -> dict:
    return {
        "format_version": ARTIFACT_VERSION,
        "kind": "metrics",
        "method": record.method,
        "seed": record.seed,
        "target_domain_id": record.target_domain_id,
        "clean_accuracy": record.clean_accuracy,
        "mvp_accuracy": record.mvp_accuracy,
        "pcr": record.pcr,
        "curves": record.curves or [],
    }


def _cmd_gen_data(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.synthetic_specs is None:
        raise ConfigError("suite", "gen-data needs a synthetic suite")
    suite = generate_synthetic_suite(cfg.synthetic_specs)
    out.mkdir(parents=True, exist_ok=True)
    write_csv_suite(suite, out / "suite.csv")
    print(f"wrote {out / 'suite.csv'} ({sum(d.n for d in suite.datasets)} samples, "
          f"{suite.n_domains} domains)")
    return 0


def _cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    suite = _load_suite(cfg)
    training = _resolve_training(cfg, suite)
    report = train_model(suite, cfg.target_index, cfg.method, training)
    target_id = suite.datasets[cfg.target_index].domain_id
    payload = {
        "format_version": ARTIFACT_VERSION,
        "kind": "train-report",
        "method": cfg.method,
        "seed": cfg.seed,
        "target_index": cfg.target_index,
        "target_domain_id": target_id,
        "best_epoch": report.best_epoch,
        "best_val_accuracy": report.best_val_accuracy,
        "epochs": report.epochs,
        "config": config_to_dict(cfg),
    }
    _write_json(out / "checkpoint.json", model_to_dict(report.final_model))
    _write_json(out / "train_report.json", payload)
    print(f"trained {cfg.method} (target {target_id}); "
          f"best val acc {report.best_val_accuracy:.4f} @ epoch {report.best_epoch}; "
          f"{report.wall_time_seconds:.1f}s", file=sys.stderr)
    print(f"wrote {out / 'checkpoint.json'} and {out / 'train_report.json'}")
    return 0


def _target_and_model(cfg: ExperimentConfig, checkpoint: str):
    suite = _load_suite(cfg)
    model = load_model(checkpoint)
    _, target = leave_one_domain_out(suite, cfg.target_index)
    return suite, model, target


def _cmd_eval(cfg: ExperimentConfig, out: Path, checkpoint: str, with_mvp: bool) -> int:
    suite, model, target = _target_and_model(cfg, checkpoint)
    _, clean_acc = dataset_loss_and_accuracy(model, target.features, target.labels)
    record = MetricsRecord(cfg.method, cfg.seed, target.domain_id, clean_acc)
    if with_mvp:
        record.mvp_accuracy = multiview_accuracy(model, target, cfg.mvp)
        record.pcr = prediction_change_rate(
            model, target, cfg.mvp.transform, cfg.pcr_trials, RngStream(cfg.mvp.seed, 1)
        )
    _write_json(out / "metrics.json", _metrics_payload(record))
    line = f"clean accuracy {clean_acc:.4f}"
    if with_mvp:
        line += f", mvp accuracy {record.mvp_accuracy:.4f}, pcr {record.pcr:.4f}"
    print(f"{line} on target {target.domain_id}")
    print(f"wrote {out / 'metrics.json'}")
    return 0


def _cmd_sharpness(cfg: ExperimentConfig, out: Path, checkpoint: str) -> int:
    _, model, target = _target_and_model(cfg, checkpoint)
    records = sharpness_probe(model, target, cfg.sharpness)
    payload = {
        "format_version": ARTIFACT_VERSION,
        "kind": "sharpness",
        "method": cfg.method,
        "seed": cfg.seed,
        "target_domain_id": target.domain_id,
        "records": [{"gamma": g, "sharpness": s} for g, s in records],
    }
    _write_json(out / "sharpness.json", payload)
    print(f"wrote {out / 'sharpness.json'}")
    return 0


def _cmd_surface(cfg: ExperimentConfig, out: Path, checkpoints: list[str]) -> int:
    suite = _load_suite(cfg)
    _, target = leave_one_domain_out(suite, cfg.target_index)
    models = [load_model(p) for p in checkpoints]
    plane = surface_plane_basis(
        models[0].params, models[1].params, models[2].params,
        grid_extent=cfg.surface_extent, resolution=cfg.surface_resolution,
    )
    a, b, losses = surface_grid_losses(
        models[0].arch, plane, target,
        bn_policy=cfg.surface_bn_policy, bn_stats=models[0].bn_stats,
    )
    payload = {
        "format_version": ARTIFACT_VERSION,
        "kind": "surface",
        "target_domain_id": target.domain_id,
        "bn_policy": cfg.surface_bn_policy,
        "plane": {
            "w2_coords": list(plane.w2_coords),
            "w3_coords": list(plane.w3_coords),
            "grid_extent": plane.grid_extent,
            "resolution": plane.resolution,
        },
        "a_coords": a.tolist(),
        "b_coords": b.tolist(),
        "losses": losses.tolist(),
    }
    _write_json(out / "surface.json", payload)
    print(f"wrote {out / 'surface.json'}")
    return 0


def _cmd_bound(cfg: ExperimentConfig, out: Path, checkpoint: str | None) -> int:
    bound = dict(cfg.bound)
    risk, supdiv = bound.pop("empirical_risk"), bound.pop("sup_divergence")
    if checkpoint is not None:
        suite = _load_suite(cfg)
        model = load_model(checkpoint)
        sources, target = leave_one_domain_out(suite, cfg.target_index)
        risk, supdiv = estimate_bound_terms(model, sources, target)
    if risk is None or supdiv is None:
        raise ConfigError(
            "bound.empirical_risk",
            "give empirical_risk and sup_divergence, or pass --checkpoint to estimate them",
        )
    inputs = BoundInputs(empirical_risk=risk, sup_divergence=supdiv, **bound)
    value = theorem1_bound(inputs)
    payload = {
        "format_version": ARTIFACT_VERSION,
        "kind": "bound",
        "inputs": {
            "empirical_risk": inputs.empirical_risk,
            "sup_divergence": inputs.sup_divergence,
            "beta1": inputs.beta1,
            "beta2": inputs.beta2,
            "n_sequences": inputs.n_sequences,
            "delta": inputs.delta,
            "loss_bound_M": inputs.loss_bound_M,
        },
        "value": value,
    }
    _write_json(out / "bound.json", payload)
    print(f"bound value {value!r}")
    print(f"wrote {out / 'bound.json'}")
    return 0


def _cmd_report(out: Path, inputs: list[str]) -> int:
    records = []
    for path in inputs:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("kind") != "metrics":
            raise ConfigError("<report>", f"{path} is not a metrics artifact")
        records.append(payload)
    groups: dict[tuple[str, str], list[dict]] = {}
    for rec in records:
        groups.setdefault((rec["method"], rec["target_domain_id"]), []).append(rec)

    def stats(vals):
        vals = [v for v in vals if v is not None]
        if not vals:
            return "", ""
        arr = np.asarray(vals, dtype=np.float64)
        return repr(float(arr.mean())), repr(float(arr.std()))

    rows = []
    for (method, target), recs in sorted(groups.items()):
        clean_m, clean_s = stats([r["clean_accuracy"] for r in recs])
        mvp_m, mvp_s = stats([r.get("mvp_accuracy") for r in recs])
        pcr_m, pcr_s = stats([r.get("pcr") for r in recs])
        rows.append([method, target, len(recs), clean_m, clean_s, mvp_m, mvp_s, pcr_m, pcr_s])

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "method", "target", "n_runs", "clean_acc_mean", "clean_acc_std",
            "mvp_acc_mean", "mvp_acc_std", "pcr_mean", "pcr_std",
        ])
        writer.writerows(rows)
    print(f"wrote {out / 'report.csv'} ({len(rows)} aggregate rows)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvrml",
        description="Multi-view regularized meta-learning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, checkpoints=False):
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--out", type=str, default="out", help="artifact directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--method", choices=["erm", "reptile", "mvrml"], default=None)
        p.add_argument("--target-index", type=int, default=None)
        p.add_argument("--views", type=int, default=None)
        p.add_argument("--strategy", choices=["s1", "s2", "s3"], default=None)
        if checkpoint:
            p.add_argument("--checkpoint", type=str, required=True)
        if checkpoints:
            p.add_argument("--checkpoints", type=str, nargs=3, required=True,
                           metavar=("W1", "W2", "W3"))
        return p

    common(sub.add_parser("gen-data", help="write the synthetic suite as CSV"))
    common(sub.add_parser("train", help="train and write checkpoint + report"))
    common(sub.add_parser("eval", help="clean target-accuracy metrics"), checkpoint=True)
    common(sub.add_parser("mvp-eval", help="metrics incl. multi-view accuracy and PCR"),
           checkpoint=True)
    common(sub.add_parser("sharpness", help="sharpness probe on the target domain"),
           checkpoint=True)
    common(sub.add_parser("surface", help="loss-surface grid through three checkpoints"),
           checkpoints=True)
    bound_p = common(sub.add_parser("bound", help="evaluate the generalization bound"))
    bound_p.add_argument("--checkpoint", type=str, default=None)
    report_p = sub.add_parser("report", help="aggregate metrics files into a CSV table")
    report_p.add_argument("--out", type=str, default="out")
    report_p.add_argument("inputs", nargs="+", help="metrics.json files")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.training = replace(cfg.training, seed=args.seed)
        cfg.mvp = replace(cfg.mvp, seed=args.seed)
        cfg.sharpness = replace(cfg.sharpness, seed=args.seed)
    if args.method is not None:
        cfg.method = args.method
    if args.target_index is not None:
        cfg.target_index = args.target_index
    if args.views is not None:
        cfg.mvp = replace(cfg.mvp, num_views_m=args.views)
    if args.strategy is not None:
        cfg.training = replace(cfg.training, strategy=_STRATEGIES[args.strategy])
    return cfg


def run_command(argv: list[str] | None = None) -> int:
    """Entry point; returns the process exit status."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return _cmd_report(Path(args.out), args.inputs)
        cfg = load_config(args.config) if args.config else config_from_dict({})
        cfg = _apply_overrides(cfg, args)
        out = Path(args.out)
        if args.command == "gen-data":
            return _cmd_gen_data(cfg, out)
        if args.command == "train":
            return _cmd_train(cfg, out)
        if args.command == "eval":
            return _cmd_eval(cfg, out, args.checkpoint, with_mvp=False)
        if args.command == "mvp-eval":
            return _cmd_eval(cfg, out, args.checkpoint, with_mvp=True)
        if args.command == "sharpness":
            return _cmd_sharpness(cfg, out, args.checkpoint)
        if args.command == "surface":
            return _cmd_surface(cfg, out, args.checkpoints)
        if args.command == "bound":
            return _cmd_bound(cfg, out, args.checkpoint)
        raise AssertionError("unreachable")
    except MvrmlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
