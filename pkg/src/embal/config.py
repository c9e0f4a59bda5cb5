"""Experiment configuration and its TOML representation.

Unknown keys anywhere in a config file are errors: a stored config has to
be a complete record of what was run.
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .core import EmbalError, validate_schedule
from .models import TIERS, TrainConfig, default_train_config
from .semisl import METHODS, RESERVED_METHODS, SemiConfig
from .strategies import StrategyParams, check_strategy

MODES = ("proxy", "end_to_end")


class ConfigError(EmbalError, ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    k: int = 10
    n: int = 5000
    d: int = 32
    v: int = 2
    separation: float = 3.0
    noise: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    synthetic: SyntheticSpec | None = None
    name: str | None = None
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    split_seed: int = 0

    @property
    def dataset_name(self) -> str:
        if self.name:
            return self.name
        if self.path:
            return Path(self.path).stem
        s = self.synthetic
        return f"synthetic-k{s.k}-n{s.n}-d{s.d}-sep{s.separation:g}-seed{s.seed}"


def _default_train():
    return {t: default_train_config(t) for t in TIERS}


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    budget_schedule: tuple[int, ...]
    strategy: str = "random"
    semi_sl: str = "supervised_only"
    mode: str = "proxy"
    proxy_tier: str = "linear"
    final_tier: str = "shallow"
    final_semi_sl: str = "flexmatch"
    seed: int = 0
    output_dir: str = "results"
    train: dict = field(default_factory=_default_train)
    semi: SemiConfig = field(default_factory=SemiConfig)
    strategy_params: StrategyParams = field(default_factory=StrategyParams)

    def __post_init__(self):
        object.__setattr__(self, "budget_schedule", validate_schedule(self.budget_schedule))
        if (self.data.path is None) == (self.data.synthetic is None):
            raise ConfigError("data needs exactly one of 'path' or a [data.synthetic] table")
        check_strategy(self.strategy)
        for key in ("semi_sl", "final_semi_sl"):
            m = getattr(self, key)
            if m not in METHODS and m not in RESERVED_METHODS:
                raise ConfigError(f"{key}={m!r} is not one of {METHODS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode={self.mode!r} is not one of {MODES}")
        for key in ("proxy_tier", "final_tier"):
            if getattr(self, key) not in TIERS:
                raise ConfigError(f"{key}={getattr(self, key)!r} is not one of {TIERS}")
        if set(self.train) != set(TIERS):
            raise ConfigError(f"train must configure exactly the tiers {TIERS}")

    @property
    def loop_tier(self) -> str:
        return self.proxy_tier if self.mode == "proxy" else self.final_tier

    @property
    def dataset_name(self) -> str:
        return self.data.dataset_name

    def run_dir(self, root=None) -> Path:
        root = Path(root if root is not None else self.output_dir)
        return root / self.dataset_name / self.strategy / self.mode / str(self.seed)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def to_dict(self, include_output: bool = True) -> dict:
        d = {
            "seed": self.seed,
            "strategy": self.strategy,
            "semi_sl": self.semi_sl,
            "mode": self.mode,
            "proxy_tier": self.proxy_tier,
            "final_tier": self.final_tier,
            "final_semi_sl": self.final_semi_sl,
            "budget_schedule": list(self.budget_schedule),
        }
        if include_output:
            d["output_dir"] = self.output_dir
        data = {k: v for k, v in asdict(self.data).items() if v is not None and k != "synthetic"}
        if self.data.synthetic is not None:
            data["synthetic"] = asdict(self.data.synthetic)
        d["data"] = data
        d["train"] = {t: asdict(c) for t, c in self.train.items()}
        d["semi"] = asdict(self.semi)
        d["strategy_params"] = asdict(self.strategy_params)
        return d

    def snapshot(self) -> str:
        """Canonical TOML text of everything that affects results."""
        return tomli_w.dumps(self.to_dict(include_output=False))


def _take(cls, table: dict, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    try:
        return cls(**table)
    except (TypeError, ValueError, EmbalError) as e:
        raise ConfigError(f"[{where}]: {e}") from e


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "data" not in d or "budget_schedule" not in d:
        raise ConfigError("config needs a [data] table and a budget_schedule")
    data = dict(d.pop("data"))
    synth = data.pop("synthetic", None)
    if synth is not None:
        data["synthetic"] = _take(SyntheticSpec, synth, "data.synthetic")
    d["data"] = _take(DataConfig, data, "data")
    train = _default_train()
    for tier, tbl in d.pop("train", {}).items():
        if tier not in TIERS:
            raise ConfigError(f"unknown tier [train.{tier}]")
        base = asdict(train[tier])
        unknown = sorted(set(tbl) - set(base))
        if unknown:
            raise ConfigError(f"unknown key(s) in [train.{tier}]: {', '.join(unknown)}")
        base.update(tbl)
        train[tier] = _take(TrainConfig, base, f"train.{tier}")
    d["train"] = train
    if "semi" in d:
        d["semi"] = _take(SemiConfig, d["semi"], "semi")
    if "strategy_params" in d:
        d["strategy_params"] = _take(StrategyParams, d["strategy_params"], "strategy_params")
    try:
        return ExperimentConfig(**d)
    except ConfigError:
        raise
    except (TypeError, ValueError, EmbalError) as e:
        raise ConfigError(str(e)) from e


def loads_config(text: str) -> ExperimentConfig:
    try:
        return config_from_dict(tomllib.loads(text))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}") from e


def load_config(path) -> ExperimentConfig:
    return loads_config(Path(path).read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def synthetic_benchmark_config(strategy: str = "random", seed: int = 0, **kw) -> ExperimentConfig:
    """The 10-class mixture benchmark: n=5000, d=32, two views, ten rounds of 100."""
    base = dict(
        data=DataConfig(synthetic=SyntheticSpec()),
        budget_schedule=(100,) * 10,
        strategy=strategy,
        seed=seed,
    )
    base.update(kw)
    return ExperimentConfig(**base)
