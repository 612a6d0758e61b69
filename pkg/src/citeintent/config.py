"""Run configuration: one YAML/JSON file plus command-line overrides."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .prompt import DEFAULT_PATTERN
from .refine import RefinementConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    schema: str = "scicite"
    data: dict = field(default_factory=dict)
    template: str = DEFAULT_PATTERN
    mlm: str = "mock"
    verbalizer: str | None = None
    build: dict = field(default_factory=dict)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out: str | None = None
    base_dir: Path = field(default_factory=Path.cwd, repr=False, compare=False)

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any] | None, base_dir=None) -> "RunConfig":
        raw = dict(raw or {})
        known = {"schema", "data", "template", "mlm", "verbalizer", "build", "refinement", "train", "out"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            refinement = RefinementConfig(**(raw.pop("refinement", None) or {}))
            train = TrainConfig(**(raw.pop("train", None) or {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        data = raw.pop("data", None) or {}
        bad = set(data) - {"train", "dev", "test"}
        if bad:
            raise ConfigError(f"unknown data splits: {sorted(bad)}")
        return cls(refinement=refinement, train=train, data=dict(data),
                   base_dir=Path(base_dir) if base_dir else Path.cwd(), **raw)

    def resolve(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def mlm_identity(self) -> str:
        """The MLM identity with a relative checkpoint path resolved against the config directory."""
        if self.mlm in ("mock", "toy-bow") or self.mlm.startswith("hf:"):
            return self.mlm
        candidate = self.resolve(self.mlm)
        return str(candidate) if candidate.exists() else self.mlm

    def data_path(self, split: str) -> Path:
        if split not in self.data:
            raise ConfigError(f"no dataset path configured for the {split} split")
        return self.resolve(self.data[split])

    def require_paths(self, *keys: str) -> None:
        """Check that every named path exists (``data.train``, ``verbalizer``, ``build.corpus`` ...)."""
        for key in keys:
            head, _, tail = key.partition(".")
            value = getattr(self, head)
            if tail:
                value = (value or {}).get(tail)
            if value is None:
                raise ConfigError(f"config value {key} is required")
            if not self.resolve(value).exists():
                raise ConfigError(f"{key}: path {value} does not exist")

    def with_overrides(self, **overrides) -> "RunConfig":
        """Flags win over the file; nested keys use dotted names (``train.epochs``)."""
        new = copy.deepcopy(self)
        train, refinement = new.train.to_dict(), new.refinement.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            head, _, tail = key.partition(".")
            if head == "train":
                train[tail] = value
            elif head == "refinement":
                refinement[tail] = value
            elif head in ("data", "build"):
                getattr(new, head)[tail] = value
            elif hasattr(new, head) and head != "base_dir":
                setattr(new, head, value)
            else:
                raise ConfigError(f"unknown override {key}")
        new.train = TrainConfig(**train)
        new.refinement = RefinementConfig(**refinement)
        return new

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "data": dict(sorted(self.data.items())),
            "template": self.template,
            "mlm": self.mlm,
            "verbalizer": self.verbalizer,
            "build": dict(sorted(self.build.items())),
            "refinement": self.refinement.to_dict(),
            "train": self.train.to_dict(),
            "out": self.out,
        }


def load_config(path=None, **overrides) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        cfg = RunConfig.from_mapping(raw, base_dir=path.parent)
    return cfg.with_overrides(**overrides) if overrides else cfg
