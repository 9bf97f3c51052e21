"""Run configuration: one YAML key-tree per run, validated before any work."""
from __future__ import annotations

import os
import re
from dataclasses import asdict, dataclass, field, fields

import yaml

from .graph import SimilarityConfig
from .harness.data import SyntheticSpec
from .harness.training import TrainConfig
from .optim import OptimizerConfig
from .sparse import ValidationError
from .transform import SEvoConfig


@dataclass
class DataPaths:
    interactions: str | None = None  # TSV; None -> synthetic data
    categories: str | None = None
    graph: str | None = None  # triplet file; None -> built from the training split

    def check_exist(self):
        for name in ("interactions", "categories", "graph"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise ValidationError(f"data.{name}: {path} does not exist")


@dataclass
class BenchConfig:
    graphs: int = 5
    nodes: int = 30
    density: float = 0.2
    dim: int = 4
    lr: float = 1.0
    dense_lr: float = 1.0
    threshold: float = 1e-6
    max_iter: int = 200_000

    def __post_init__(self):
        if self.graphs < 1 or self.nodes < 2 or self.dim < 1 or self.max_iter < 1:
            raise ValidationError("benchmark sizes must be positive (nodes >= 2)")
        if not (self.lr > 0 and self.dense_lr > 0 and self.threshold > 0):
            raise ValidationError("benchmark rates and threshold must be > 0")


OPTIMIZER_KEYS = [f.name for f in fields(OptimizerConfig) if f.name != "sevo"]


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataPaths = field(default_factory=DataPaths)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    graph: SimilarityConfig = field(default_factory=SimilarityConfig)
    sevo: SEvoConfig = field(default_factory=SEvoConfig)
    optimizer: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    benchmark: BenchConfig = field(default_factory=BenchConfig)

    def __post_init__(self):
        unknown = set(self.optimizer) - set(OPTIMIZER_KEYS)
        if unknown:
            raise ValidationError(f"unknown optimizer keys: {sorted(unknown)}")
        self.optimizer_config()  # validate ranges now

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(**self.optimizer, sevo=self.sevo)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**asdict(self.train), "seed": self.seed})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, tree):
        tree = dict(tree or {})
        sections = {
            "data": DataPaths,
            "synthetic": SyntheticSpec,
            "graph": SimilarityConfig,
            "sevo": SEvoConfig,
            "train": TrainConfig,
            "benchmark": BenchConfig,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(tree) - known
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for key, value in tree.items():
            if key in sections:
                kwargs[key] = _build(sections[key], value, key)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(f"config: {exc}") from None


def _build(kind, value, where):
    value = value or {}
    if not isinstance(value, dict):
        raise ValidationError(f"section {where} must be a mapping")
    names = {f.name for f in fields(kind)}
    unknown = set(value) - names
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return kind(**value)
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from None


_NUMBER = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+")


def _coerce(text):
    value = yaml.safe_load(text)
    # YAML 1.1 reads "1e6" (no dot) as a string
    if isinstance(value, str) and _NUMBER.fullmatch(value):
        return float(value)
    return value


def apply_overrides(tree, assignments):
    """Apply ``section.key=value`` strings to a config tree (values parsed as YAML)."""
    tree = {k: (dict(v) if isinstance(v, dict) else v) for k, v in tree.items()}
    for assignment in assignments or []:
        if "=" not in assignment:
            raise ValidationError(f"override {assignment!r} must look like key=value")
        path, raw = assignment.split("=", 1)
        keys = path.strip().split(".")
        node = tree
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {path}: {key} is not a section")
        node[keys[-1]] = _coerce(raw)
    return tree


def loads(text) -> RunConfig:
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"config is not valid YAML: {exc}") from None
    return RunConfig.from_dict(tree)


def dumps(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def load(path, overrides=None) -> RunConfig:
    tree = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                tree = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ValidationError(f"{path} is not valid YAML: {exc}") from None
    return RunConfig.from_dict(apply_overrides(tree, overrides))
