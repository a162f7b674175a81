"""Run configuration and the pipeline entry points.

Subcommands:
  extract   preprocess images and populate the feature cache
  evaluate  cached/fresh features -> repeated CV -> tables + ROC + results
  report    re-render tables (and optional plots) from an existing results file

Every emitted number is determined by (config file, inputs): per-run seeds
are master_seed + run_index, floats are serialized via repr, and reruns
with the same config produce byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .dataset import DatasetManifest, Ear, Label, load_manifest
from .evaluation import (
    METRIC_NAMES,
    AggregateReport,
    RunResult,
    aggregate,
    cross_validate,
    roc_curve,
)
from .features import (
    FeatureVector,
    extract_features,
    load_model,
    load_model_manifest,
    read_cache,
    write_cache,
)
from .preprocess import CropRect, crop, load_image, prepare_input
from .report import plot_roc_curves, read_roc_points, write_roc_points, write_tables
from .svm import KernelSpec, SvmParams

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for missing/invalid run configuration; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    manifest_path: Path
    model_manifest_paths: tuple[Path, ...]
    output_dir: Path
    cache_dir: Path
    backend: str
    k: int
    repeats: int
    master_seed: int
    svm: SvmParams
    crop_rects: dict[Ear, CropRect]
    jobs: int
    group_by_patient: bool
    plot_roc: bool
    config_hash: str


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"missing required config key {key!r}")
    return cfg[key]


def _parse_svm(raw: dict) -> SvmParams:
    kind = str(raw.get("kernel", "rbf")).lower()
    gamma = raw.get("gamma", "scale")
    if isinstance(gamma, str):
        if gamma != "scale":
            raise ConfigError(f"svm.gamma must be a positive number or 'scale', got {gamma!r}")
        gamma = None
    try:
        return SvmParams(
            C=float(raw.get("C", 1.0)),
            kernel=KernelSpec(kind=kind, gamma=gamma),
            tolerance=float(raw.get("tolerance", 1e-3)),
            max_passes=int(raw.get("max_passes", 0)),
            class_weighting=str(raw.get("class_weighting", "off")).lower(),
            standardize=bool(raw.get("standardize", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid svm settings: {exc}") from exc


def _parse_crop(raw: dict) -> dict[Ear, CropRect]:
    rects: dict[Ear, CropRect] = {}
    for ear_name, rect_raw in raw.items():
        try:
            ear = Ear(str(ear_name).lower())
        except ValueError:
            raise ConfigError(f"crop keys must be left/right, got {ear_name!r}")
        try:
            rects[ear] = CropRect(
                x=int(rect_raw["x"]),
                y=int(rect_raw["y"]),
                width=int(rect_raw["width"]),
                height=int(rect_raw["height"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad crop rect for {ear_name}: {exc}") from exc
    return rects


def parse_config(path: str | Path) -> RunConfig:
    """Load and validate a YAML run configuration, applying defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw_bytes = path.read_bytes()
    try:
        cfg = yaml.safe_load(raw_bytes)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a mapping")

    manifest_path = Path(_require(cfg, "manifest"))
    if not manifest_path.is_absolute():
        manifest_path = path.parent / manifest_path
    if not manifest_path.exists():
        raise ConfigError(f"sample manifest not found: {manifest_path}")

    models_raw = _require(cfg, "models")
    if isinstance(models_raw, (str, Path)):
        models_raw = [models_raw]
    if not models_raw:
        raise ConfigError("config lists no model manifests")
    model_paths = []
    for m in models_raw:
        p = Path(m)
        if not p.is_absolute():
            p = path.parent / p
        if not p.exists():
            raise ConfigError(f"model manifest not found: {p}")
        model_paths.append(p)

    output_dir = Path(_require(cfg, "output_dir"))
    if not output_dir.is_absolute():
        output_dir = path.parent / output_dir
    cache_dir = Path(cfg.get("cache_dir", output_dir / "cache"))
    if not cache_dir.is_absolute():
        cache_dir = path.parent / cache_dir

    backend = str(cfg.get("backend", "interchange")).lower()
    if backend not in ("interchange", "mock"):
        raise ConfigError(f"unknown backend {backend!r}: valid values are interchange, mock")

    k = int(cfg.get("k", 5))
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    repeats = int(cfg.get("repeats", 100))
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    jobs = int(cfg.get("jobs", 0)) or (os.cpu_count() or 1)
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")

    return RunConfig(
        manifest_path=manifest_path,
        model_manifest_paths=tuple(model_paths),
        output_dir=output_dir,
        cache_dir=cache_dir,
        backend=backend,
        k=k,
        repeats=repeats,
        master_seed=int(cfg.get("master_seed", 0)),
        svm=_parse_svm(cfg.get("svm", {}) or {}),
        crop_rects=_parse_crop(cfg.get("crop", {}) or {}),
        jobs=jobs,
        group_by_patient=bool(cfg.get("group_by_patient", False)),
        plot_roc=bool(cfg.get("plot_roc", False)),
        config_hash=hashlib.sha256(raw_bytes).hexdigest(),
    )


def _labels_vector(manifest: DatasetManifest) -> np.ndarray:
    """+1 for abnormal (positive class), -1 for normal, in manifest order."""
    return np.array(
        [1 if s.label is Label.ABNORMAL else -1 for s in manifest.samples], dtype=np.int64
    )


def _cache_path(config: RunConfig, model_name: str) -> Path:
    return config.cache_dir / f"{model_name}.feat"


def _extract_one_model(config: RunConfig, samples: DatasetManifest, manifest_path: Path) -> Path:
    """Preprocess + run inference for one model, writing its feature cache."""
    mm = load_model_manifest(manifest_path)
    handle = load_model(mm, backend=config.backend)
    inputs = []
    for s in samples.samples:
        image_path = Path(s.image_path)
        if not image_path.is_absolute():
            image_path = config.manifest_path.parent / image_path
        image = load_image(image_path)
        rect = config.crop_rects.get(s.ear)
        if rect is not None:
            image = crop(image, rect)
        inputs.append((s.sample_id, prepare_input(image, mm)))
    vectors = extract_features(handle, inputs)
    config.cache_dir.mkdir(parents=True, exist_ok=True)
    out = _cache_path(config, mm.model_name)
    write_cache(vectors, out)
    log.info("extracted %d feature vectors for %s -> %s", len(vectors), mm.model_name, out)
    return out


def _feature_matrix(
    vectors: list[FeatureVector], samples: DatasetManifest
) -> np.ndarray:
    by_id = {v.sample_id: v for v in vectors}
    missing = [s.sample_id for s in samples.samples if s.sample_id not in by_id]
    if missing or len(vectors) != len(samples):
        raise ValueError(
            f"feature cache does not match the sample manifest "
            f"(missing {missing[:3]}{'...' if len(missing) > 3 else ''}, "
            f"{len(vectors)} cached vs {len(samples)} samples)"
        )
    return np.stack([by_id[s.sample_id].values for s in samples.samples])


def _evaluate_one_model(
    config: RunConfig, samples: DatasetManifest, manifest_path: Path
) -> dict:
    mm = load_model_manifest(manifest_path)
    cache = _cache_path(config, mm.model_name)
    if cache.exists():
        vectors = read_cache(cache, mm)
    else:
        _extract_one_model(config, samples, manifest_path)
        vectors = read_cache(cache, mm)
    X = _feature_matrix(vectors, samples)
    y = _labels_vector(samples)

    def one_run(i: int) -> RunResult:
        return cross_validate(
            X,
            y,
            config.svm,
            config.k,
            seed=config.master_seed + i,
            model_name=mm.model_name,
            run_index=i,
        )

    if config.jobs > 1 and config.repeats > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            runs = list(pool.map(one_run, range(config.repeats)))
    else:
        runs = [one_run(i) for i in range(config.repeats)]

    final = runs[-1]
    curve = roc_curve(final.pooled_labels, final.pooled_scores)
    result: dict = {
        "model_name": mm.model_name,
        "runs": runs,
        "curve": curve,
    }
    if config.repeats >= 2:
        result["aggregate"] = aggregate(runs)
    return result


def _results_payload(config: RunConfig, ok: dict[str, dict], failed: dict[str, str]) -> dict:
    models: dict[str, dict] = {}
    for name, res in ok.items():
        entry: dict = {
            "status": "ok",
            "runs": [
                {
                    "run_index": r.run_index,
                    "seed": config.master_seed + r.run_index,
                    "metrics": {m: r.run_metrics.value(m) for m in METRIC_NAMES},
                    "degenerate_flags": sorted(r.run_metrics.degenerate_flags),
                }
                for r in res["runs"]
            ],
        }
        if "aggregate" in res:
            agg = res["aggregate"]
            entry["aggregate"] = {
                "max": agg.max,
                "mean": agg.mean,
                "std": agg.std,
                "auc_final_run": agg.auc_final_run,
                "n_runs": agg.n_runs,
            }
        models[name] = entry
    for name, err in failed.items():
        models[name] = {"status": "failed", "error": err}
    return {
        "version": __version__,
        "config_hash": config.config_hash,
        "master_seed": config.master_seed,
        "k": config.k,
        "repeats": config.repeats,
        "backend": config.backend,
        "models": models,
    }


def _write_run_log(config: RunConfig, ok: dict, failed: dict) -> None:
    lines = [
        f"abrsvm {__version__}",
        f"config_hash {config.config_hash}",
        f"master_seed {config.master_seed}",
        f"k {config.k} repeats {config.repeats} backend {config.backend}",
        f"seeds {config.master_seed}..{config.master_seed + config.repeats - 1}",
    ]
    for name in ok:
        lines.append(f"model {name} ok")
    for name, err in failed.items():
        lines.append(f"model {name} FAILED: {err}")
    (config.output_dir / "run.log").write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_pipeline(config: RunConfig) -> int:
    """Evaluate every configured model; returns the process exit code."""
    config.output_dir.mkdir(parents=True, exist_ok=True)
    try:
        samples = load_manifest(config.manifest_path)
    except Exception as exc:
        log.error("cannot load sample manifest: %s", exc)
        failed = {p.stem: f"sample manifest: {exc}" for p in config.model_manifest_paths}
        payload = _results_payload(config, {}, failed)
        (config.output_dir / "results.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        _write_run_log(config, {}, failed)
        return 1

    ok: dict[str, dict] = {}
    failed: dict[str, str] = {}
    for manifest_path in config.model_manifest_paths:
        try:
            res = _evaluate_one_model(config, samples, manifest_path)
            ok[res["model_name"]] = res
        except Exception as exc:
            log.error("model %s failed: %s", manifest_path.name, exc)
            failed[manifest_path.stem] = str(exc)

    reports = [res["aggregate"] for res in ok.values() if "aggregate" in res]
    if reports:
        write_tables(reports, config.output_dir)
    curves = {}
    for name, res in ok.items():
        curves[name] = res["curve"]
        write_roc_points(res["curve"], config.output_dir / f"{name}_roc.csv")
    if config.plot_roc and curves:
        plot_roc_curves(curves, config.output_dir / "roc.svg")

    payload = _results_payload(config, ok, failed)
    (config.output_dir / "results.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _write_run_log(config, ok, failed)
    return 1 if failed else 0


def run_extract(config: RunConfig) -> int:
    """Populate the feature cache for every configured model."""
    try:
        samples = load_manifest(config.manifest_path)
    except Exception as exc:
        log.error("cannot load sample manifest: %s", exc)
        return 1
    status = 0
    for manifest_path in config.model_manifest_paths:
        try:
            _extract_one_model(config, samples, manifest_path)
        except Exception as exc:
            log.error("model %s failed: %s", manifest_path.name, exc)
            status = 1
    return status


def run_report(config: RunConfig) -> int:
    """Re-render tables (and optional plot) from an existing results file."""
    results_path = config.output_dir / "results.json"
    if not results_path.exists():
        raise ConfigError(f"no results file at {results_path}; run 'evaluate' first")
    payload = json.loads(results_path.read_text(encoding="utf-8"))
    reports = []
    for name, entry in payload.get("models", {}).items():
        if entry.get("status") != "ok" or "aggregate" not in entry:
            continue
        agg = entry["aggregate"]
        reports.append(
            AggregateReport(
                model_name=name,
                max=agg["max"],
                mean=agg["mean"],
                std=agg["std"],
                auc_final_run=agg["auc_final_run"],
                n_runs=agg["n_runs"],
            )
        )
    if reports:
        write_tables(reports, config.output_dir)
    if config.plot_roc:
        curves = {}
        for name in payload.get("models", {}):
            roc_file = config.output_dir / f"{name}_roc.csv"
            if roc_file.exists():
                curves[name] = read_roc_points(roc_file)
        if curves:
            plot_roc_curves(curves, config.output_dir / "roc.svg")
    return 0


def _apply_overrides(config: RunConfig, backend, seed, jobs) -> RunConfig:
    from dataclasses import replace

    if backend is not None:
        config = replace(config, backend=backend)
    if seed is not None:
        config = replace(config, master_seed=seed)
    if jobs is not None:
        if jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {jobs}")
        config = replace(config, jobs=jobs)
    return config


def _load_config_or_exit(config_path, backend, seed, jobs) -> RunConfig:
    try:
        return _apply_overrides(parse_config(config_path), backend, seed, jobs)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)


_common_options = [
    click.option("--config", "config_path", required=True, type=click.Path(), help="Run config file (YAML)"),
    click.option("--backend", type=click.Choice(["interchange", "mock"]), default=None, help="Override the configured inference backend"),
    click.option("--seed", type=int, default=None, help="Override master_seed"),
    click.option("--jobs", type=int, default=None, help="Worker pool size (default: logical cores)"),
]


def _with_common(fn):
    for opt in reversed(_common_options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """ABR report-image classification pipeline."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@_with_common
def extract(config_path, backend, seed, jobs):
    """Extract features for all configured models into the cache."""
    config = _load_config_or_exit(config_path, backend, seed, jobs)
    sys.exit(run_extract(config))


@main.command()
@_with_common
def evaluate(config_path, backend, seed, jobs):
    """Run repeated cross-validation and write tables, ROC files, results."""
    config = _load_config_or_exit(config_path, backend, seed, jobs)
    sys.exit(run_pipeline(config))


@main.command()
@_with_common
def report(config_path, backend, seed, jobs):
    """Re-render tables/plots from an existing results.json."""
    config = _load_config_or_exit(config_path, backend, seed, jobs)
    try:
        sys.exit(run_report(config))
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
