"""Experiment configuration: one self-contained JSON document.

Parsing normalizes every field (defaults filled in), serialization emits
the full canonical form, and parse(serialize(parse(x))) is the identity on
the parsed object. Validation collects every violation before reporting so
a bad config fails with the complete list, not just the first problem.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .adapters import METHOD_IDS
from .errors import ConfigError

_SOURCES = ("synthetic", "csv")
_ARCHS = ("linear", "mlp")
_OPTIMIZERS = ("adam", "sgd")


def _check_keys(section: str, given: dict, allowed, errors: list):
    unknown = set(given) - set(allowed)
    if unknown:
        errors.append(f"{section}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class SyntheticDataConfig:
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    n_classes: int = 10
    n_features: int = 20
    positive_rate: float = 0.2
    class_spread: float = 0.0
    feature_noise: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class CsvDataConfig:
    train: str = ""
    val: str = ""
    test: str = ""
    mask_train: bool = False
    mask_seed: int = 0


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    synthetic: SyntheticDataConfig = field(default_factory=SyntheticDataConfig)
    csv: CsvDataConfig = field(default_factory=CsvDataConfig)


@dataclass(frozen=True)
class MethodConfig:
    id: str = "GR"
    hyper: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GrConfig:
    """Schedule anchors for the generalized robust loss. `bias_start` may be
    None when `bias_start_from_prior` is set; it is then inferred from the
    train split's share of unannotated entries that are actually positive."""

    slope_start: float = 0.0
    slope_end: float = 2.0
    bias_start: Optional[float] = None
    bias_start_from_prior: bool = True
    bias_end: float = -2.0
    center_start: float = 0.8
    center_end: float = 0.8
    width_start: float = 10.0
    width_end: float = 0.5
    q1: float = 0.01
    q2: float = 0.01
    q3: float = 1.0


@dataclass(frozen=True)
class AblationConfig:
    use_pseudo_labels: bool = True
    use_instance_weights: bool = True
    use_robust_losses: bool = True


@dataclass(frozen=True)
class TrainerConfig:
    arch: str = "linear"
    hidden: int = 32
    learning_rate: float = 0.05
    batch_size: int = 64
    epochs: int = 20
    optimizer: str = "adam"
    momentum: float = 0.0
    seeds: tuple = (0,)


@dataclass(frozen=True)
class SweepConfig:
    grid: dict = field(default_factory=dict)
    max_points: int = 512


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DataConfig = field(default_factory=DataConfig)
    method: MethodConfig = field(default_factory=MethodConfig)
    gr: GrConfig = field(default_factory=GrConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    output_dir: str = "runs"


def _parse_section(cls, section: str, given, errors: list):
    if given is None:
        given = {}
    if not isinstance(given, dict):
        errors.append(f"{section}: expected an object")
        return cls()
    names = [f.name for f in fields(cls)]
    _check_keys(section, given, names, errors)
    kwargs = {k: v for k, v in given.items() if k in names}
    if cls is MethodConfig and "hyper" in kwargs and not isinstance(kwargs["hyper"], dict):
        errors.append("method.hyper: expected an object")
        kwargs.pop("hyper")
    if cls is TrainerConfig and "seeds" in kwargs:
        seeds = kwargs["seeds"]
        if not isinstance(seeds, (list, tuple)) or not seeds or not all(
            isinstance(s, int) and not isinstance(s, bool) for s in seeds
        ):
            errors.append("trainer.seeds: expected a nonempty list of integers")
            kwargs.pop("seeds")
        else:
            kwargs["seeds"] = tuple(seeds)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{section}: {exc}")
        return cls()


def _validate(cfg: ExperimentConfig, errors: list) -> None:
    if cfg.dataset.source not in _SOURCES:
        errors.append(f"dataset.source: must be one of {_SOURCES}")
    if cfg.dataset.source == "synthetic":
        syn = cfg.dataset.synthetic
        if min(syn.n_train, syn.n_val, syn.n_test) < 1:
            errors.append("dataset.synthetic: split sizes must be >= 1")
        if min(syn.n_classes, syn.n_features) < 1:
            errors.append("dataset.synthetic: class and feature counts must be >= 1")
        if not 0.0 < syn.positive_rate < 1.0:
            errors.append("dataset.synthetic.positive_rate: must lie in (0, 1)")
        if syn.class_spread < 0.0 or syn.feature_noise < 0.0:
            errors.append("dataset.synthetic: spread and noise must be >= 0")
    else:
        for name in ("train", "val", "test"):
            if not getattr(cfg.dataset.csv, name):
                errors.append(f"dataset.csv.{name}: path required for csv source")
    if cfg.method.id not in METHOD_IDS:
        errors.append(f"method.id: unknown {cfg.method.id!r}, expected one of {METHOD_IDS}")
    if cfg.method.id == "GR":
        g = cfg.gr
        if g.slope_start < 0.0 or g.slope_end < 0.0:
            errors.append("gr: slope anchors must be >= 0")
        if not g.bias_start_from_prior and g.bias_start is None:
            errors.append("gr.bias_start: required when bias_start_from_prior is false")
        for name in ("q1", "q2", "q3"):
            q = getattr(g, name)
            if not 0.0 < q <= 2.0:
                errors.append(f"gr.{name}: must lie in (0, 2]")
        for name in ("center_start", "center_end"):
            if not 0.0 <= getattr(g, name) <= 1.0:
                errors.append(f"gr.{name}: must lie in [0, 1]")
        for name in ("width_start", "width_end"):
            if getattr(g, name) <= 0.0:
                errors.append(f"gr.{name}: must be > 0")
    if cfg.method.id != "GR" and cfg.ablation != AblationConfig():
        errors.append("ablation: toggles only apply to method GR")
    tr = cfg.trainer
    if tr.arch not in _ARCHS:
        errors.append(f"trainer.arch: must be one of {_ARCHS}")
    if tr.optimizer not in _OPTIMIZERS:
        errors.append(f"trainer.optimizer: must be one of {_OPTIMIZERS}")
    if tr.epochs < 0:
        errors.append("trainer.epochs: must be >= 0")
    if tr.hidden < 1 or tr.batch_size < 1:
        errors.append("trainer: hidden and batch_size must be >= 1")
    if tr.learning_rate <= 0.0:
        errors.append("trainer.learning_rate: must be > 0")
    if not 0.0 <= tr.momentum < 1.0:
        errors.append("trainer.momentum: must lie in [0, 1)")
    if not cfg.output_dir:
        errors.append("output_dir: must be nonempty")


def parse_experiment_config(document: dict) -> ExperimentConfig:
    """Parse and validate a config document; raises ConfigError listing
    every violation found."""
    if not isinstance(document, dict):
        raise ConfigError("config: expected a JSON object")
    errors: list = []
    _check_keys(
        "config", document,
        ("dataset", "method", "gr", "ablation", "trainer", "output_dir", "sweep"),
        errors,
    )
    data_doc = document.get("dataset") or {}
    if isinstance(data_doc, dict):
        _check_keys("dataset", data_doc, ("source", "synthetic", "csv"), errors)
        dataset = DataConfig(
            source=data_doc.get("source", "synthetic"),
            synthetic=_parse_section(
                SyntheticDataConfig, "dataset.synthetic", data_doc.get("synthetic"), errors
            ),
            csv=_parse_section(CsvDataConfig, "dataset.csv", data_doc.get("csv"), errors),
        )
    else:
        errors.append("dataset: expected an object")
        dataset = DataConfig()
    cfg = ExperimentConfig(
        dataset=dataset,
        method=_parse_section(MethodConfig, "method", document.get("method"), errors),
        gr=_parse_section(GrConfig, "gr", document.get("gr"), errors),
        ablation=_parse_section(AblationConfig, "ablation", document.get("ablation"), errors),
        trainer=_parse_section(TrainerConfig, "trainer", document.get("trainer"), errors),
        output_dir=document.get("output_dir", "runs"),
    )
    if not errors:
        _validate(cfg, errors)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def parse_sweep_config(document: dict) -> SweepConfig:
    section = document.get("sweep")
    if section is None:
        return SweepConfig()
    errors: list = []
    sweep = _parse_section(SweepConfig, "sweep", section, errors)
    if not isinstance(sweep.grid, dict) or not all(
        isinstance(v, list) and v for v in sweep.grid.values()
    ):
        errors.append("sweep.grid: expected {dotted.key: nonempty list}")
    if sweep.max_points < 1:
        errors.append("sweep.max_points: must be >= 1")
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return sweep


def config_to_json_dict(cfg: ExperimentConfig, sweep: Optional[SweepConfig] = None) -> dict:
    doc = asdict(cfg)
    doc["trainer"]["seeds"] = list(cfg.trainer.seeds)
    if sweep is not None:
        doc["sweep"] = asdict(sweep)
    return doc


def config_digest(cfg: ExperimentConfig, sweep: Optional[SweepConfig] = None) -> str:
    canonical = json.dumps(
        config_to_json_dict(cfg, sweep), sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON ({exc})") from exc


def apply_dotted_overrides(document: dict, overrides: dict) -> dict:
    """Return a deep copy of `document` with {"a.b.c": value} entries set."""
    doc = json.loads(json.dumps(document))
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted}: {part} is not an object")
        node[parts[-1]] = value
    return doc
