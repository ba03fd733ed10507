"""Run orchestration: dataset construction from a config, seeded training
runs with all artifacts written to disk, sweep expansion, and the analysis
commands. The CLI is a thin argparse layer over this module.

Artifact layout for one training run:

    <out>/config.json               full canonical config
    <out>/summary.json              per-seed results and medians
    <out>/seed-<s>/metrics.jsonl    {"epoch", "train_loss", "val_map"} per epoch
    <out>/seed-<s>/timing.jsonl     {"epoch", "wall_time_s"} per epoch
    <out>/seed-<s>/checkpoint_best.csv / checkpoint_final.csv
    <out>/seed-<s>/eval_report.json
    <out>/seed-<s>/manifest.json

Only metrics.jsonl is required to be byte-identical across reruns of one
config+seed; wall times live in the separate timing file for that reason.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ExperimentConfig,
    SweepConfig,
    apply_dotted_overrides,
    config_digest,
    config_to_json_dict,
    parse_experiment_config,
)
from .data import (
    LabeledDataset,
    SyntheticSpec,
    dataset_stats,
    generate_synthetic,
    load_csv,
    make_split_datasets,
    mask_single_positive,
    scar_rate,
    save_csv,
)
from .errors import ConfigError, DomainError
from .evaluation import (
    build_eval_report,
    distinguishability,
    fn_ratio_buckets,
    gradient_curves,
    mean_average_precision,
)
from .numerics import make_rng
from .robust_loss import (
    GrLossParams,
    RobustnessParams,
    ScheduleSpec,
    pseudo_label_params_from_prior,
    scar_posterior,
)
from .trainer import (
    AblationToggles,
    ModelParams,
    TrainSettings,
    predict_confidences,
    train_run,
)

ANALYSES = ("grad-curves", "fn-buckets", "distinguishability")


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


def build_datasets(cfg: ExperimentConfig):
    """Materialize (train, val, test) from the dataset section."""
    if cfg.dataset.source == "synthetic":
        syn = cfg.dataset.synthetic
        spec = SyntheticSpec(
            n_instances=syn.n_train + syn.n_val + syn.n_test,
            n_classes=syn.n_classes,
            n_features=syn.n_features,
            positive_rate=syn.positive_rate,
            class_spread=syn.class_spread,
            feature_noise=syn.feature_noise,
            seed=syn.seed,
        )
        return make_split_datasets(spec, syn.n_train, syn.n_val, syn.n_test)
    paths = cfg.dataset.csv
    train = load_csv(paths.train, split="train")
    if paths.mask_train:
        masked = mask_single_positive(train.labels, make_rng(paths.mask_seed, stream=1))
        train = LabeledDataset(
            train.features, train.labels, masked,
            split="train", scar_rate_a=scar_rate(train.labels, masked),
        )
    if not train.is_single_positive:
        raise ConfigError(
            "csv train split is not single-positive; set dataset.csv.mask_train"
        )
    val = load_csv(paths.val, split="val")
    test = load_csv(paths.test, split="test")
    return train, val, test


def resolve_gr_params(cfg: ExperimentConfig, train_ds: LabeledDataset) -> GrLossParams:
    g = cfg.gr
    horizon = max(cfg.trainer.epochs, 1)
    if g.bias_start_from_prior:
        prior = dataset_stats(train_ds).prior_missing_positive_rate
        if not 0.0 < prior < 1.0:
            raise ConfigError(
                "cannot infer the pseudo-label prior from the train split; "
                "set gr.bias_start explicitly"
            )
        bias_start = pseudo_label_params_from_prior(prior).bias
    else:
        bias_start = float(g.bias_start)
    return GrLossParams(
        slope=ScheduleSpec(g.slope_start, g.slope_end, horizon),
        bias=ScheduleSpec(bias_start, g.bias_end, horizon),
        center=ScheduleSpec(g.center_start, g.center_end, horizon),
        width=ScheduleSpec(g.width_start, g.width_end, horizon),
        robust=RobustnessParams(g.q1, g.q2, g.q3),
    )


def resolve_hyper(cfg: ExperimentConfig, train_ds: LabeledDataset) -> dict:
    hyper = dict(cfg.method.hyper)
    if cfg.method.id == "EN":
        counts = hyper.get("en_expected_positives", "auto")
        if counts == "auto":
            hyper["en_expected_positives"] = [int(v) for v in train_ds.labels.sum(axis=0)]
    return hyper


def train_settings(cfg: ExperimentConfig) -> TrainSettings:
    tr = cfg.trainer
    return TrainSettings(
        epochs=tr.epochs,
        arch=tr.arch,
        hidden=tr.hidden,
        learning_rate=tr.learning_rate,
        batch_size=tr.batch_size,
        optimizer=tr.optimizer,
        momentum=tr.momentum,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: ModelParams, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "i", "j", "value"])
        writer.writerow(["arch", 0, 0, model.arch])
        for idx, w in enumerate(model.weights):
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    writer.writerow([f"weight{idx}", i, j, repr(float(w[i, j]))])
        for idx, b in enumerate(model.biases):
            for j in range(b.shape[0]):
                writer.writerow([f"bias{idx}", 0, j, repr(float(b[j]))])


def load_checkpoint(path) -> ModelParams:
    arch = None
    cells: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) is None:
            raise ConfigError(f"checkpoint {path} is empty")
        for name, i, j, value in reader:
            if name == "arch":
                arch = value
            else:
                cells.setdefault(name, {})[(int(i), int(j))] = float(value)
    if arch is None:
        raise ConfigError(f"checkpoint {path} is missing its arch row")
    weights, biases = [], []
    for idx in itertools.count():
        key = f"weight{idx}"
        if key not in cells:
            break
        entries = cells[key]
        rows = 1 + max(i for i, _ in entries)
        cols = 1 + max(j for _, j in entries)
        w = np.zeros((rows, cols))
        for (i, j), v in entries.items():
            w[i, j] = v
        weights.append(w)
    for idx in itertools.count():
        key = f"bias{idx}"
        if key not in cells:
            break
        entries = cells[key]
        b = np.zeros(1 + max(j for _, j in entries))
        for (_, j), v in entries.items():
            b[j] = v
        biases.append(b)
    return ModelParams(arch, weights, biases)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Training runs
# ---------------------------------------------------------------------------


def run_seed(cfg: ExperimentConfig, seed: int, seed_dir: Path) -> dict:
    """Train one seed, write its artifacts, and return the summary row."""
    started = datetime.now(timezone.utc).isoformat()
    train_ds, val_ds, test_ds = build_datasets(cfg)
    gr_params = resolve_gr_params(cfg, train_ds) if cfg.method.id == "GR" else None
    toggles = AblationToggles(
        use_pseudo_labels=cfg.ablation.use_pseudo_labels,
        use_instance_weights=cfg.ablation.use_instance_weights,
        use_robust_losses=cfg.ablation.use_robust_losses,
    )
    run = train_run(
        cfg.method.id,
        train_ds,
        val_ds,
        train_settings(cfg),
        seed,
        hyper=resolve_hyper(cfg, train_ds),
        gr_params=gr_params,
        toggles=toggles if cfg.method.id == "GR" else None,
    )

    seed_dir.mkdir(parents=True, exist_ok=True)
    with open(seed_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for record in run.history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    with open(seed_dir / "timing.jsonl", "w", encoding="utf-8") as fh:
        for t, wall in enumerate(run.epoch_seconds):
            fh.write(json.dumps({"epoch": t, "wall_time_s": wall}, sort_keys=True) + "\n")
    save_checkpoint(run.best_model, seed_dir / "checkpoint_best.csv")
    save_checkpoint(run.final_model, seed_dir / "checkpoint_final.csv")

    test_scores = predict_confidences(run.best_model, test_ds.features)
    train_conf = predict_confidences(run.best_model, train_ds.features)
    try:
        distinguish = distinguishability(train_conf, train_ds.labels, train_ds.observed)
    except DomainError:
        # Degenerate split without unannotated positives; the report simply
        # omits the separation analysis.
        distinguish = None
    report = build_eval_report(
        test_scores,
        test_ds.labels,
        distinguish=distinguish,
        fn_curve=fn_ratio_buckets(train_conf, train_ds.labels, train_ds.observed),
        extras={
            "seed": seed,
            "method": cfg.method.id,
            "best_epoch": run.best_epoch,
            "best_val_map": run.best_val_map,
            "scar_rate": train_ds.scar_rate_a,
        },
    )
    with open(seed_dir / "eval_report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")

    outputs = {
        name: _sha256(seed_dir / name)
        for name in (
            "metrics.jsonl",
            "timing.jsonl",
            "checkpoint_best.csv",
            "checkpoint_final.csv",
            "eval_report.json",
        )
    }
    manifest = {
        "config_digest": config_digest(cfg),
        "code_version": __version__,
        "seed": seed,
        "started_utc": started,
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "outputs": outputs,
    }
    _write_json(seed_dir / "manifest.json", manifest)
    return {
        "seed": seed,
        "best_epoch": run.best_epoch,
        "best_val_map": run.best_val_map,
        "test_map": float(mean_average_precision(test_scores, test_ds.labels)),
    }


def _run_seed_job(args):
    cfg_doc, seed, seed_dir = args
    return run_seed(parse_experiment_config(cfg_doc), seed, Path(seed_dir))


def run_training(cfg: ExperimentConfig, out_dir, jobs: int = 1) -> dict:
    """Run every configured seed and write the run summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", config_to_json_dict(cfg))
    seeds = list(cfg.trainer.seeds)
    dirs = [out / f"seed-{s}" for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        doc = config_to_json_dict(cfg)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_seed_job, [(doc, s, str(d)) for s, d in zip(seeds, dirs)]))
    else:
        rows = [run_seed(cfg, s, d) for s, d in zip(seeds, dirs)]
    best_maps = [
        float("nan") if r["best_val_map"] is None else r["best_val_map"] for r in rows
    ]
    summary = {
        "method": cfg.method.id,
        "seeds": rows,
        "median_best_val_map": float(np.median(best_maps)),
        "median_test_map": float(np.median([r["test_map"] for r in rows])),
    }
    _write_json(out / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def expand_sweep(base_doc: dict, sweep: SweepConfig):
    """Cartesian grid over the dotted keys, in sorted-key order."""
    keys = sorted(sweep.grid)
    combos = list(itertools.product(*(sweep.grid[k] for k in keys)))
    if len(combos) > sweep.max_points:
        raise ConfigError(
            f"sweep grid has {len(combos)} points, above the cap of {sweep.max_points}"
        )
    points = []
    for combo in combos:
        overrides = dict(zip(keys, combo))
        points.append((overrides, apply_dotted_overrides(base_doc, overrides)))
    return keys, points


def run_sweep(base_doc: dict, sweep: SweepConfig, out_dir, jobs: int = 1) -> Path:
    """Train every grid point and write one tidy CSV row per point and seed."""
    keys, points = expand_sweep(base_doc, sweep)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sweep.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point", *keys, "seed", "best_epoch", "best_val_map", "test_map"])
        for index, (overrides, doc) in enumerate(points):
            cfg = parse_experiment_config({k: v for k, v in doc.items() if k != "sweep"})
            summary = run_training(cfg, out / f"point-{index:03d}", jobs=jobs)
            for row in summary["seeds"]:
                writer.writerow(
                    [index, *(overrides[k] for k in keys), row["seed"],
                     row["best_epoch"], row["best_val_map"], row["test_map"]]
                )
    return csv_path


# ---------------------------------------------------------------------------
# Data generation and analyses
# ---------------------------------------------------------------------------


def run_generate_data(spec_doc: dict, out_dir) -> Path:
    allowed = {
        "n_instances", "n_classes", "n_features",
        "positive_rate", "class_spread", "feature_noise", "seed",
    }
    unknown = set(spec_doc) - allowed
    if unknown:
        raise ConfigError(f"generate-data spec: unknown keys {sorted(unknown)}")
    try:
        spec = SyntheticSpec(**spec_doc)
    except TypeError as exc:
        raise ConfigError(f"generate-data spec: {exc}") from exc
    dataset = generate_synthetic(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "dataset.csv"
    save_csv(dataset, csv_path)
    _write_json(out / "stats.json", dataset_stats(dataset).to_json_dict())
    return csv_path


def run_analyze(doc: dict, out_override=None) -> list:
    """Consume a finished run directory and write the requested analyses."""
    unknown = set(doc) - {"run_dir", "analyses", "seed", "output_dir"}
    if unknown:
        raise ConfigError(f"analyze config: unknown keys {sorted(unknown)}")
    run_dir = Path(doc.get("run_dir", ""))
    analyses = doc.get("analyses", list(ANALYSES))
    if not isinstance(analyses, list) or not analyses:
        raise ConfigError("analyze config: analyses must be a nonempty list")
    bad = set(analyses) - set(ANALYSES)
    if bad:
        raise ConfigError(f"analyze config: unknown analyses {sorted(bad)}")

    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise FileNotFoundError(f"missing run config {config_path}")
    cfg = parse_experiment_config(json.loads(config_path.read_text(encoding="utf-8")))
    out = Path(out_override or doc.get("output_dir") or run_dir / "analysis")
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if "grad-curves" in analyses:
        train_ds, _, _ = build_datasets(cfg)
        params = resolve_gr_params(cfg, train_ds)
        series = gradient_curves(
            np.linspace(0.01, 0.99, 99),
            pseudo_start=(params.slope.start, params.bias.start),
            pseudo_end=(params.slope.end, params.bias.end),
            q2=params.robust.q2,
            q3=params.robust.q3,
        )
        path = out / "grad_curves.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["series", "p", "gradient"])
            for label, grid, values in series:
                for p, g in zip(grid, values):
                    writer.writerow([label, repr(float(p)), repr(float(g))])
        written.append(path)

    if {"fn-buckets", "distinguishability"} & set(analyses):
        seed = doc.get("seed", cfg.trainer.seeds[0])
        checkpoint = run_dir / f"seed-{seed}" / "checkpoint_best.csv"
        if not checkpoint.exists():
            raise FileNotFoundError(f"missing checkpoint {checkpoint}")
        model = load_checkpoint(checkpoint)
        train_ds, _, _ = build_datasets(cfg)
        conf = predict_confidences(model, train_ds.features)

        if "fn-buckets" in analyses:
            curve = fn_ratio_buckets(conf, train_ds.labels, train_ds.observed)
            rate = train_ds.scar_rate_a
            path = out / "fn_buckets.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["bucket_lo", "bucket_hi", "ratio", "count", "posterior"])
                centers = (curve.edges[:-1] + curve.edges[1:]) / 2.0
                for b in range(curve.ratios.size):
                    ratio = curve.ratios[b]
                    posterior = (
                        scar_posterior(float(centers[b]), rate) if rate is not None else ""
                    )
                    writer.writerow(
                        [
                            repr(float(curve.edges[b])),
                            repr(float(curve.edges[b + 1])),
                            "" if np.isnan(ratio) else repr(float(ratio)),
                            int(curve.occupancy[b]),
                            posterior if posterior == "" else repr(float(posterior)),
                        ]
                    )
            written.append(path)

        if "distinguishability" in analyses:
            report = distinguishability(conf, train_ds.labels, train_ds.observed)
            payload = {
                "w1": report.w1,
                "per_class_w1": report.per_class_w1,
                "n_positive": report.n_positive,
                "n_negative": report.n_negative,
            }
            path = out / "distinguishability.json"
            _write_json(path, payload)
            written.append(path)
            hist_path = out / "distinguishability_hist.csv"
            with open(hist_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["bin_lo", "bin_hi", "positive_count", "negative_count"])
                edges = np.linspace(0.0, 1.0, report.positive_hist.size + 1)
                for b in range(report.positive_hist.size):
                    writer.writerow(
                        [
                            repr(float(edges[b])),
                            repr(float(edges[b + 1])),
                            int(report.positive_hist[b]),
                            int(report.negative_hist[b]),
                        ]
                    )
            written.append(hist_path)

    return written
