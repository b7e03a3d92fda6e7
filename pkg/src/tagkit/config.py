"""Run configuration: view, training, walk and evaluation settings.

Configs are stored as YAML with one mapping per section::

    data: {nodes: toy/nodes.jsonl, edges: toy/edges.txt, labels: toy/labels.txt}
    provider: {kind: hash, dimension: 128}
    view: {max_order: 2, tofg_mode: full}
    walk: {jump_probability: 0.3, max_length: null, num_walks: 8, seed: 0}
    train: {steps: 500, batch_size: 8, learning_rate: 0.001}
    eval: {shots: [0, 5], seeds: 20, mode: taga}
    out: runs/toy

Unknown keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .embeddings import ProviderDescriptor
from .walks import WalkConfig

__all__ = ["ViewConfig", "TrainConfig", "EvalConfig", "DataConfig", "RunConfig", "ConfigError"]

TOFG_MODES = ("full", "random_walk")
OPTIMIZERS = ("adam", "sgd")
NEGATIVE_NORMALIZATIONS = ("batch", "pairs")
EVAL_MODES = ("taga", "taga-rw", "tofg-k", "glo-goft")


class ConfigError(ValueError):
    pass


def _build(cls, data: dict | None, section: str):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] settings: {exc}") from None


@dataclass(frozen=True)
class ViewConfig:
    """Views up to order ``max_order``.

    The GofT view b[k, l] runs ``k - l`` GNN layers over l-order TofG
    embeddings, so the network needs ``max_order`` layers in total.
    """

    max_order: int = 3
    tofg_mode: str = "full"
    walk: WalkConfig = field(default_factory=WalkConfig)

    def __post_init__(self):
        if self.max_order < 1:
            raise ValueError("max_order must be at least 1")
        if self.tofg_mode not in TOFG_MODES:
            raise ValueError(f"tofg_mode must be one of {TOFG_MODES}, got {self.tofg_mode!r}")
        if isinstance(self.walk, dict):
            object.__setattr__(self, "walk", _build(WalkConfig, self.walk, "walk"))

    def pairs(self, global_only: bool = False) -> list[tuple[int, int]]:
        """(k, l) view pairs, 0 <= l < k <= max_order; ``global_only`` keeps l = 0."""
        return [(k, l) for k in range(1, self.max_order + 1) for l in range(k) if not (global_only and l)]

    @staticmethod
    def layers(k: int, l: int) -> int:
        if not 0 <= l < k:
            raise ValueError(f"invalid view pair ({k}, {l})")
        return k - l

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ViewConfig":
        return _build(cls, d, "view")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 40_000
    batch_size: int = 8
    learning_rate: float = 1e-3
    decay: float = 0.999
    decay_every: int = 10
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    architecture: str = "gcn"
    glo_goft_only: bool = False
    temperature: float = 1.0
    negative_normalization: str = "batch"
    dtype: str = "float32"
    log_every: int = 1

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 so negative pairs exist")
        for name in ("learning_rate", "decay", "decay_every", "temperature", "log_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.negative_normalization not in NEGATIVE_NORMALIZATIONS:
            raise ValueError(f"negative_normalization must be one of {NEGATIVE_NORMALIZATIONS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.architecture not in ("gcn", "sage", "gin"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def learning_rate_at(self, step: int) -> float:
        """Rate for 0-based ``step``: multiplied by ``decay`` every ``decay_every`` steps."""
        return self.learning_rate * self.decay ** (step // self.decay_every)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _build(cls, d, "train")


@dataclass(frozen=True)
class EvalConfig:
    shots: tuple[int, ...] = (0, 1, 3, 5, 10, 20, 50, 100)
    seeds: int = 20
    mode: str = "taga"
    order: int | None = None
    label_template: str = "{}"
    few_shot_epochs: int = 100
    few_shot_lr: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "shots", tuple(int(s) for s in self.shots))
        if any(s < 0 for s in self.shots):
            raise ValueError("shot counts must be non-negative")
        if self.seeds < 1:
            raise ValueError("need at least one seed")
        if self.mode not in EVAL_MODES:
            raise ValueError(f"mode must be one of {EVAL_MODES}")
        if "{}" not in self.label_template:
            raise ValueError("label_template must contain '{}'")


@dataclass(frozen=True)
class DataConfig:
    nodes: str | None = None
    edges: str | None = None
    labels: str | None = None
    toy: str | None = None


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    provider: ProviderDescriptor = field(default_factory=ProviderDescriptor)
    cache: str | None = None
    view: ViewConfig = field(default_factory=ViewConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out: str = "runs/default"
    threads: int = 1

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["walk"] = d["view"].pop("walk")
        d["eval"]["shots"] = list(d["eval"]["shots"])
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)} | {"walk"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
        view = dict(d.get("view") or {})
        if "walk" in d:
            view["walk"] = d["walk"]
        return cls(
            data=_build(DataConfig, d.get("data"), "data"),
            provider=_build(ProviderDescriptor, d.get("provider"), "provider"),
            cache=d.get("cache"),
            view=_build(ViewConfig, view, "view"),
            train=_build(TrainConfig, d.get("train"), "train"),
            eval=_build(EvalConfig, d.get("eval"), "eval"),
            out=d.get("out", "runs/default"),
            threads=int(d.get("threads", 1)),
        )

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls.from_dict(yaml.safe_load(text) or {})

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")
