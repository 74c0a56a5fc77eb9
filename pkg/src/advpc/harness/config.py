"""Experiment configuration: a TOML file with dotted sections and arrays of tables.

Every random stream in an experiment is derived from the single top-level
``seed``; component sections carry no seeds of their own.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..attack import AttackConfig, BaselineConfig
from ..core import SHAPE_KINDS, derive_seed
from ..defenses import SorConfig, SrsConfig
from ..diffusion import DiffusionTrainConfig
from ..nn import ARCHITECTURES, TrainConfig

ATTACK_KINDS = ("none", "diffusion", "fgsm", "ifgsm", "pgd")
DEFENSE_KINDS = ("none", "sor", "srs")
MIN_TEST_CLOUDS = 50


class ConfigError(ValueError):
    pass


def _fields(cls, exclude=("seed",)) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)} - set(exclude)


def _check_keys(where: str, raw: dict, allowed: set[str]) -> None:
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(unknown)}")


def _build(where: str, cls, raw: dict, **fixed):
    try:
        return cls(**raw, **fixed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


@dataclass(frozen=True)
class DatasetConfig:
    kinds: tuple[str, ...] = SHAPE_KINDS
    n_points: int = 256
    train_per_class: int = 200
    test_per_class: int = 50

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        bad = [k for k in self.kinds if k not in SHAPE_KINDS]
        if bad or len(set(self.kinds)) < 2:
            raise ValueError(f"kinds must be at least two of {SHAPE_KINDS}, got {list(self.kinds)}")
        if self.n_points < 8 or self.train_per_class < 1 or self.test_per_class < 1:
            raise ValueError("n_points >= 8 and positive per-class counts required")

    @property
    def n_test(self) -> int:
        return self.test_per_class * len(self.kinds)


@dataclass(frozen=True)
class ClassifierSpec:
    name: str
    arch: str = "pointnet-lite"
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")


@dataclass(frozen=True)
class AttackSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.guidance not in ("deterministic", "stochastic"):
            raise ValueError(f"guidance must be deterministic or stochastic, got {self.guidance!r}")
        if self.kind != "diffusion" and "guidance" in self.params:
            raise ValueError("only diffusion attacks take a guidance mode")
        self.build(0)

    def build(self, seed: int):
        params = {k: v for k, v in self.params.items() if k != "guidance"}
        if self.kind == "diffusion":
            return AttackConfig(**params, seed=seed)
        if self.kind in ("fgsm", "ifgsm", "pgd"):
            return BaselineConfig(**params, seed=seed)
        if params:
            raise ValueError("attack 'none' takes no parameters")
        return None

    @property
    def guidance(self) -> str:
        return self.params.get("guidance", "deterministic")


@dataclass(frozen=True)
class DefenseSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise ValueError(f"unknown defense kind {self.kind!r}")
        self.build(0)

    def build(self, seed: int):
        if self.kind == "sor":
            return SorConfig(**self.params)
        if self.kind == "srs":
            return SrsConfig(**self.params, seed=seed)
        if self.params:
            raise ValueError("defense 'none' takes no parameters")
        return None


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    proxy: ClassifierSpec = field(default_factory=lambda: ClassifierSpec("proxy"))
    targets: tuple[ClassifierSpec, ...] = ()
    diffusion: DiffusionTrainConfig = field(default_factory=DiffusionTrainConfig)
    attacks: tuple[AttackSpec, ...] = ()
    defenses: tuple[DefenseSpec, ...] = ()
    out_dir: str = "runs/default"
    workers: int = 1

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.dataset.n_test < MIN_TEST_CLOUDS:
            raise ConfigError(f"test set has {self.dataset.n_test} clouds; at least {MIN_TEST_CLOUDS} required")
        if not self.targets:
            raise ConfigError("at least one target classifier is required")
        # seeds derive from names, so a distinct name is a distinct model
        names = [self.proxy.name, *(t.name for t in self.targets)]
        if len(set(names)) != len(names):
            raise ConfigError(f"classifier names must be unique, got {names}")
        for label, items in (("attack", self.attacks), ("defense", self.defenses)):
            if not items:
                raise ConfigError(f"at least one {label} is required")
            item_names = [i.name for i in items]
            if len(set(item_names)) != len(item_names):
                raise ConfigError(f"{label} names must be unique, got {item_names}")

    def component_seed(self, *keys) -> int:
        return derive_seed(self.seed, *keys)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """SHA-256 over everything that can change results (not out_dir or workers)."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=_jsonable).encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _classifier(where: str, raw: dict) -> ClassifierSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"[{where}] must be a table")
    _check_keys(where, raw, {"name", "arch"} | _fields(TrainConfig))
    raw = dict(raw)
    name = raw.pop("name", where)
    arch = raw.pop("arch", "pointnet-lite")
    for key in ("scale_range",):
        if key in raw:
            raw[key] = tuple(raw[key])
    train = _build(where, TrainConfig, raw, seed=0)
    return _build(where, ClassifierSpec, {"name": name, "arch": arch, "train": train})


def _named_items(section: str, raw, cls, kinds) -> tuple:
    if not isinstance(raw, list):
        raise ConfigError(f"[[{section}]] must be an array of tables")
    items = []
    for i, entry in enumerate(raw):
        entry = dict(entry)
        where = f"{section}.{i}"
        kind = entry.pop("kind", None)
        if kind not in kinds:
            raise ConfigError(f"[{where}] kind must be one of {kinds}, got {kind!r}")
        name = entry.pop("name", kind)
        items.append(_build(where, cls, {"name": name, "kind": kind, "params": entry}))
    return tuple(items)


def parse_config(raw: dict) -> ExperimentConfig:
    top = {"seed", "out_dir", "workers", "dataset", "proxy", "targets", "diffusion", "attacks", "defenses"}
    _check_keys("top level", raw, top)
    ds_raw = raw.get("dataset", {})
    _check_keys("dataset", ds_raw, _fields(DatasetConfig, ()))
    dataset = _build("dataset", DatasetConfig, ds_raw)
    diff_raw = dict(raw.get("diffusion", {}))
    _check_keys("diffusion", diff_raw, _fields(DiffusionTrainConfig))
    if "denoiser_hidden" in diff_raw:
        diff_raw["denoiser_hidden"] = tuple(diff_raw["denoiser_hidden"])
    diffusion = _build("diffusion", DiffusionTrainConfig, diff_raw, seed=0)
    targets = raw.get("targets", [])
    if not isinstance(targets, list):
        raise ConfigError("[[targets]] must be an array of tables")
    kwargs = dict(
        dataset=dataset,
        proxy=_classifier("proxy", raw.get("proxy", {"name": "proxy"})),
        targets=tuple(_classifier(f"targets.{i}", t) for i, t in enumerate(targets)),
        diffusion=diffusion,
        attacks=_named_items("attacks", raw.get("attacks", []), AttackSpec, ATTACK_KINDS),
        defenses=_named_items("defenses", raw.get("defenses", []), DefenseSpec, DEFENSE_KINDS),
    )
    for key in ("seed", "out_dir", "workers"):
        if key in raw:
            kwargs[key] = raw[key]
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw)
