"""Experiment configuration: JSON document <-> validated dataclasses."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .acquisition import StrategyKind
from .data import CsvSchema, SyntheticSpec
from .ensemble import EnsembleConfig
from .errors import ConfigError
from .net import TrainSchedule
from .objective import ObjectiveKind

SECTIONS = ("data", "model", "objective", "strategy", "loop", "output_dir")


@dataclass
class DataConfig:
    source: str = "synthetic"
    synthetic: Optional[SyntheticSpec] = None
    csv_path: Optional[str] = None
    schema: Optional[CsvSchema] = None
    n_test: int = 200
    n_val: int = 100
    n_initial: int = 50
    split_seed: Optional[int] = None


@dataclass
class LoopConfig:
    T: int = 10
    B: int = 20
    group_level: bool = False
    base_seed: int = 0
    dump_scores: bool = False
    save_ensemble: bool = True
    full_reference: bool = False

    def __post_init__(self):
        if self.T < 0:
            raise ConfigError("loop.T must be >= 0")
        if self.B < 1:
            raise ConfigError("loop.B must be >= 1")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: EnsembleConfig = field(default_factory=EnsembleConfig)
    objective: ObjectiveKind = field(default_factory=ObjectiveKind)
    strategy: StrategyKind = field(default_factory=StrategyKind)
    loop: LoopConfig = field(default_factory=LoopConfig)
    output_dir: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            cfg = cls(
                data=_data(doc.get("data", {})),
                model=_model(doc.get("model", {})),
                objective=_objective(doc.get("objective", {})),
                strategy=_strategy(doc.get("strategy", {})),
                loop=_loop(doc.get("loop", {})),
                output_dir=doc.get("output_dir"),
                raw=copy.deepcopy(doc),
            )
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        return cfg

    def with_overrides(self, section: str, **values) -> "ExperimentConfig":
        doc = copy.deepcopy(self.raw)
        doc.setdefault(section, {}).update(values)
        return ExperimentConfig.from_dict(doc)

    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    return ExperimentConfig.from_dict(doc)


def _check_keys(section, doc, allowed):
    if not isinstance(doc, dict):
        raise ConfigError(f"section {section!r} must be an object")
    extra = set(doc) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(extra)}")


def _data(doc) -> DataConfig:
    _check_keys("data", doc, ("source", "name", "n", "seed", "group_size", "sigma_low", "sigma_high",
                              "band", "particles", "path", "features", "target", "group",
                              "transform", "splits"))
    splits = doc.get("splits", {})
    _check_keys("data.splits", splits, ("test", "val", "initial", "seed"))
    source = doc.get("source", "synthetic")
    out = DataConfig(source=source, n_test=int(splits.get("test", 200)),
                     n_val=int(splits.get("val", 100)), n_initial=int(splits.get("initial", 50)),
                     split_seed=splits.get("seed"))
    if source == "synthetic":
        keys = ("name", "n", "seed", "group_size", "sigma_low", "sigma_high", "band", "particles")
        out.synthetic = SyntheticSpec(**{k: doc[k] for k in keys if k in doc})
    elif source == "csv":
        if "path" not in doc or "features" not in doc or "target" not in doc:
            raise ConfigError("csv data needs path, features and target")
        out.csv_path = doc["path"]
        out.schema = CsvSchema(list(doc["features"]), doc["target"], doc.get("group"),
                               doc.get("transform", "identity"))
    else:
        raise ConfigError(f"unknown data source {source!r}")
    return out


def _model(doc) -> EnsembleConfig:
    _check_keys("model", doc, ("n_members", "hidden", "trunk_layers", "head_hidden", "schedule"))
    sched = doc.get("schedule", {})
    _check_keys("model.schedule", sched, TrainSchedule.__dataclass_fields__)
    kw = {k: doc[k] for k in ("n_members", "hidden", "trunk_layers", "head_hidden") if k in doc}
    return EnsembleConfig(schedule=TrainSchedule(**sched), **kw)


def _objective(doc) -> ObjectiveKind:
    _check_keys("objective", doc, ("kind", "lambda", "beta_nll"))
    return ObjectiveKind(doc.get("kind", "decoupled"), float(doc.get("lambda", 0.1)),
                         float(doc.get("beta_nll", 0.5)))


def _strategy(doc) -> StrategyKind:
    _check_keys("strategy", doc, ("kind", "beta"))
    return StrategyKind(doc.get("kind", "caal"), float(doc.get("beta", 1.0)))


def _loop(doc) -> LoopConfig:
    _check_keys("loop", doc, LoopConfig.__dataclass_fields__)
    return LoopConfig(**doc)
