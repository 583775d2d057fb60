"""Experiment configuration: YAML (or JSON) in, validated dataclasses out.

Every violation in a file is collected and reported together.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .clkd import KD_REDUCTIONS, METRIC_KINDS, SCHEDULE_MODES
from .errors import ConfigurationError
from .federation import METHOD_KINDS

DATASET_KINDS = ("synthetic", "csv")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    # synthetic
    dim: int = 10
    n_per_client: int = 600
    n_classes: int = 3
    angle_step_deg: float = 90.0
    separation: float = 2.0
    noise: float = 1.0
    domain_seed: int | None = None
    # csv
    path: str | None = None
    label_column: str | None = None
    numeric_columns: tuple[str, ...] = ()
    categorical_columns: tuple[str, ...] = ()
    max_bad_rows: int = 0


@dataclass(frozen=True)
class PartitionConfig:
    niid1_fraction: float | None = None
    niid2_alpha: float | None = None


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (64, 64)
    head_depth: int = 1
    hetero: bool = False
    depth_range: tuple[int, ...] = (1, 3)
    width_range: tuple[int, ...] = (16, 64)
    head_in_dim: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[str, ...]
    dataset: DatasetConfig
    n_clients: int = 3
    rounds: int = 50
    local_epochs: int = 2
    lr: float = 0.003
    batch_size: int = 32
    alpha: float = 1.0
    kd_reduction: str = "batchmean"
    schedule: str = "linear_kept"
    schedule_reset: bool = False
    metric: str = "cosine"
    metric_epsilon: float = 1e-8
    weighted_aggregation: bool = False
    sample_fraction: float = 1.0
    accuracy_target: float = 0.5
    test_fraction: float = 0.25
    workers: int = 1
    seeds: tuple[int, ...] = tuple(range(10))
    out_dir: str = "runs"
    partition: PartitionConfig = PartitionConfig()
    model: ModelConfig = ModelConfig()


_REQUIRED = {"methods", "dataset"}
_BLOCKS = {"dataset": DatasetConfig, "partition": PartitionConfig, "model": ModelConfig}


def _type_ok(value: Any, annotation: str) -> bool:
    ann = annotation.replace(" ", "")
    optional = "|None" in ann
    if value is None:
        return optional
    base = ann.replace("|None", "")
    if base == "bool":
        return isinstance(value, bool)
    if base == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if base == "float":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if base == "str":
        return isinstance(value, str)
    if base.startswith("tuple[int"):
        return isinstance(value, (list, tuple)) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    if base.startswith("tuple[str"):
        return isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value)
    return True


def _coerce(value: Any, annotation: str) -> Any:
    if isinstance(value, list):
        return tuple(value)
    if annotation.replace(" ", "").replace("|None", "") == "float" and isinstance(value, int):
        return float(value)
    return value


def _build(cls, raw: Any, where: str, errors: list[str], required: set[str] = frozenset()):
    if not isinstance(raw, dict):
        errors.append(f"{where or 'config'} must be a mapping")
        return None
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    prefix = f"{where}." if where else ""
    for key, value in raw.items():
        if key not in fields:
            errors.append(f"unknown key '{prefix}{key}'")
            continue
        if key in _BLOCKS and not where:
            built = _build(_BLOCKS[key], value, key, errors)
            if built is not None:
                kwargs[key] = built
            continue
        ann = str(fields[key].type)
        if not _type_ok(value, ann):
            errors.append(f"key '{prefix}{key}' has invalid value {value!r} (expected {ann})")
            continue
        kwargs[key] = _coerce(value, ann)
    for key in sorted(required):
        if key not in raw:
            errors.append(f"missing required key '{prefix}{key}'")
    try:
        return cls(**kwargs)
    except TypeError:
        return None


def _check_semantics(cfg: ExperimentConfig, errors: list[str]) -> None:
    if not cfg.methods:
        errors.append("'methods' must list at least one method")
    for m in cfg.methods:
        kind, _, metric = m.partition(":")
        if kind not in METHOD_KINDS:
            errors.append(f"unknown method '{kind}' (expected one of {list(METHOD_KINDS)})")
        if metric and metric not in METRIC_KINDS:
            errors.append(f"unknown metric '{metric}' in method '{m}' (expected one of {sorted(METRIC_KINDS)})")
    if cfg.metric not in METRIC_KINDS:
        errors.append(f"unknown metric '{cfg.metric}' (expected one of {sorted(METRIC_KINDS)})")
    if cfg.kd_reduction not in KD_REDUCTIONS:
        errors.append(f"unknown kd_reduction '{cfg.kd_reduction}' (expected one of {list(KD_REDUCTIONS)})")
    if cfg.schedule not in SCHEDULE_MODES:
        errors.append(f"unknown schedule '{cfg.schedule}' (expected one of {list(SCHEDULE_MODES)})")
    positive = {
        "n_clients": cfg.n_clients,
        "rounds": cfg.rounds,
        "local_epochs": cfg.local_epochs,
        "batch_size": cfg.batch_size,
        "workers": cfg.workers,
    }
    for name, v in positive.items():
        if v < 1:
            errors.append(f"'{name}' must be at least 1")
    if cfg.lr < 0:
        errors.append("'lr' must be non-negative")
    if cfg.alpha < 0:
        errors.append("'alpha' must be non-negative")
    if not cfg.metric_epsilon > 0:
        errors.append("'metric_epsilon' must be positive")
    if not 0 < cfg.sample_fraction <= 1:
        errors.append("'sample_fraction' must lie in (0, 1]")
    if not 0 < cfg.test_fraction < 1:
        errors.append("'test_fraction' must lie in (0, 1)")
    if not cfg.seeds:
        errors.append("'seeds' must not be empty")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        errors.append("'seeds' must not repeat")

    ds = cfg.dataset
    if ds.kind not in DATASET_KINDS:
        errors.append(f"unknown dataset kind '{ds.kind}' (expected one of {list(DATASET_KINDS)})")
    elif ds.kind == "synthetic":
        if ds.dim < 2:
            errors.append("'dataset.dim' must be at least 2")
        if ds.n_classes < 2:
            errors.append("'dataset.n_classes' must be at least 2")
        if ds.n_per_client < ds.n_classes:
            errors.append("'dataset.n_per_client' must be at least n_classes")
        if not ds.noise > 0:
            errors.append("'dataset.noise' must be positive")
    else:
        if not ds.path:
            errors.append("missing required key 'dataset.path' for a csv dataset")
        if not ds.label_column:
            errors.append("missing required key 'dataset.label_column' for a csv dataset")
        if not ds.numeric_columns and not ds.categorical_columns:
            errors.append("a csv dataset needs numeric_columns or categorical_columns")

    p = cfg.partition
    if p.niid1_fraction is not None and not 0 < p.niid1_fraction <= 1:
        errors.append("'partition.niid1_fraction' must lie in (0, 1]")
    if p.niid2_alpha is not None and not p.niid2_alpha > 0:
        errors.append("'partition.niid2_alpha' must be positive")

    m = cfg.model
    if any(h < 1 for h in m.hidden):
        errors.append("'model.hidden' widths must be positive")
    if not 1 <= m.head_depth <= len(m.hidden) + 1:
        errors.append("'model.head_depth' must lie in [1, len(hidden) + 1]")
    if m.hetero:
        if len(m.depth_range) != 2 or len(m.width_range) != 2:
            errors.append("'model.depth_range' and 'model.width_range' need two entries")
        elif m.depth_range[0] < 1 or m.depth_range[1] < m.depth_range[0]:
            errors.append("'model.depth_range' must be [min >= 1, max >= min]")
        elif m.width_range[0] < 1 or m.width_range[1] < m.width_range[0]:
            errors.append("'model.width_range' must be [min >= 1, max >= min]")
        if m.head_depth != 1:
            errors.append("heterogeneous models use head_depth 1")
        for meth in cfg.methods:
            if meth.partition(":")[0] in ("fedavg", "fedrep"):
                errors.append(f"method '{meth}' requires homogeneous architectures (model.hetero is true)")


def config_from_dict(raw: Any) -> ExperimentConfig:
    errors: list[str] = []
    cfg = _build(ExperimentConfig, raw, "", errors, _REQUIRED)
    if cfg is not None and not errors:
        _check_semantics(cfg, errors)
    if errors:
        raise ConfigurationError(errors)
    return cfg


def parse_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a YAML/JSON experiment file.

    A relative CSV path is resolved against the config file's directory.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path} is not well-formed: {exc}") from exc
    if isinstance(raw, dict) and isinstance(raw.get("dataset"), dict):
        ds_path = raw["dataset"].get("path")
        if isinstance(ds_path, str) and not Path(ds_path).is_absolute():
            raw["dataset"]["path"] = str((path.parent / ds_path).resolve())
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    return plain(cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def parse_seed_range(text: str) -> tuple[int, ...]:
    """``"0..9"`` (inclusive) or ``"1,4,7"``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            a, b = int(lo), int(hi)
            if b < a:
                raise ValueError
            return tuple(range(a, b + 1))
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigurationError(f"invalid seed range {text!r}") from None
