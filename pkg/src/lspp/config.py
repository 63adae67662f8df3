"""Run configuration: profile defaults, key-value files and flag overrides.

Every hyperparameter lives in one dataclass per pipeline stage.  On disk a
configuration is a ``section.field = value`` file; see :func:`RunConfig.to_text`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .baselines import PotentialFieldConfig, RrtConnectConfig
from .classifier import ClassifierConfig
from .kvfile import ConfigFormatError, as_bool, format_kv, parse_kv
from .planner import PlannerConfig
from .vae import VaeConfig

PROFILES = ("desk", "paper")


@dataclass(frozen=True)
class DataConfig:
    n_states: int = 20_000
    n_collision: int = 20_000
    n_scenarios: int = 100
    obstacle_counts: tuple[int, ...] = (1, 2, 3)
    collision_holdout: float = 0.1

    @classmethod
    def paper(cls) -> "DataConfig":
        return cls(n_states=100_000, n_collision=100_000, n_scenarios=1000, obstacle_counts=(1, 2, 3, 4, 5))

    @classmethod
    def desk(cls) -> "DataConfig":
        # the classifier overfits 18k training pairs; pairs are cheap to label
        return cls(n_collision=100_000)


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.01
    resolution: float = 0.02
    frequency: float = 50.0
    consistency_samples: int = 10_000
    histogram_bins: int = 50


_SECTIONS = {
    "data": DataConfig,
    "vae": VaeConfig,
    "classifier": ClassifierConfig,
    "planner": PlannerConfig,
    "pf": PotentialFieldConfig,
    "rrtc": RrtConnectConfig,
    "eval": EvalConfig,
}


def _profile_default(cls, profile: str):
    if profile == "paper" and hasattr(cls, "paper"):
        return cls.paper()
    if profile == "desk" and hasattr(cls, "desk"):
        return cls.desk()
    return cls()


@dataclass(frozen=True)
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    robot_config: str = ""
    data: DataConfig = field(default_factory=DataConfig.desk)
    vae: VaeConfig = field(default_factory=VaeConfig.desk)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig.desk)
    planner: PlannerConfig = field(default_factory=PlannerConfig.desk)
    pf: PotentialFieldConfig = field(default_factory=PotentialFieldConfig)
    rrtc: RrtConnectConfig = field(default_factory=RrtConnectConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def for_profile(cls, profile: str = "desk", seed: int = 0) -> "RunConfig":
        if profile not in PROFILES:
            raise ConfigFormatError(f"unknown profile {profile!r}; expected one of {PROFILES}")
        parts = {name: _profile_default(c, profile) for name, c in _SECTIONS.items()}
        return cls(profile=profile, seed=seed, **parts)

    def with_overrides(self, kv: Mapping[str, str]) -> "RunConfig":
        """Apply ``section.field -> raw string`` overrides; unknown keys are errors."""
        top: dict[str, Any] = {}
        sections: dict[str, dict[str, Any]] = {}
        for key, raw in kv.items():
            if "." not in key:
                if key not in ("profile", "seed", "robot_config"):
                    raise ConfigFormatError(f"unknown config key {key!r}")
                top[key] = int(raw) if key == "seed" else raw
                continue
            sec, name = key.split(".", 1)
            if sec not in _SECTIONS:
                raise ConfigFormatError(f"unknown config section {sec!r}")
            current = getattr(self, sec)
            fmap = {f.name: f for f in fields(current)}
            if name not in fmap:
                raise ConfigFormatError(f"unknown config key {key!r}")
            sections.setdefault(sec, {})[name] = _convert(getattr(current, name), raw, key)
        out = replace(self, **top)
        for sec, vals in sections.items():
            try:
                out = replace(out, **{sec: replace(getattr(out, sec), **vals)})
            except (TypeError, ValueError) as exc:
                raise ConfigFormatError(f"invalid {sec} settings: {exc}") from exc
        return out

    def items(self) -> list[tuple[str, Any]]:
        out: list[tuple[str, Any]] = [("profile", self.profile), ("seed", self.seed),
                                      ("robot_config", self.robot_config)]
        for sec in _SECTIONS:
            obj = getattr(self, sec)
            for f in fields(obj):
                out.append((f"{sec}.{f.name}", getattr(obj, f.name)))
        return out

    def to_text(self) -> str:
        return format_kv(self.items(), header="resolved run configuration")

    @classmethod
    def from_text(cls, text: str, source: str = "<string>", profile: str | None = None) -> "RunConfig":
        kv = parse_kv(text, source)
        prof = profile or kv.get("profile", "desk")
        return cls.for_profile(prof).with_overrides(kv)

    @classmethod
    def from_file(cls, path: str | Path, profile: str | None = None) -> "RunConfig":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), str(path), profile)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _convert(current: Any, raw: str, key: str) -> Any:
    try:
        if isinstance(current, bool):
            return as_bool(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(t) if isinstance(current[0] if current else 0, int) else float(t) for t in raw.split())
        return raw
    except ValueError as exc:
        raise ConfigFormatError(f"{key}: cannot parse {raw!r}") from exc


def section_dict(obj) -> dict[str, Any]:
    return dataclasses.asdict(obj)
