"""Experiment configuration: one TOML file drives a full run.

Sections map one-to-one onto the module config dataclasses. Parsing is
strict (unknown keys are rejected) and the emitter is lossless: parsing the
emitted text reconstructs an equal RunConfig, which is what makes the
resolved-config snapshots written next to every artifact trustworthy.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, is_dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bgm import BgmSpec
from .errors import ConfigError
from .features import FeatureConfig
from .network import ModelConfig
from .roomsim import DatasetPlan, SceneConfig
from .training import TrainConfig


@dataclass
class EvalConfig:
    protocol: str = "single_music"
    split: str = "test"
    batch_size: int = 64
    use_ema: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    bgm: dict = field(default_factory=dict)  # bgm_id -> BgmSpec
    dataset: DatasetPlan = field(default_factory=DatasetPlan)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def plan(self):
        """Dataset plan with the BGM table attached."""
        plan = DatasetPlan(**{
            f.name: getattr(self.dataset, f.name) for f in fields(DatasetPlan)
        })
        plan.bgm_specs = dict(self.bgm)
        return plan


def default_run_config():
    """The standard desk-scale experiment: two ambient tracks plus one
    jazz-like track, all five motions."""
    cfg = RunConfig()
    cfg.bgm = {
        "groove": BgmSpec(kind="ambient-like", base_freq=110.0),
        "pad": BgmSpec(kind="ambient-like", base_freq=160.0),
        "swing": BgmSpec(kind="jazz-like"),
    }
    cfg.dataset.cross_music_holdout = "pad"
    cfg.dataset.cross_genre_holdout = "jazz-like"
    return cfg


_TUPLE_FIELDS = {"speaker_positions", "mic_position", "subject_position",
                 "room_min", "room_max", "motions", "pre_widths",
                 "post_widths", "freq_strides"}


def _coerce(name, value, ftype):
    if name in _TUPLE_FIELDS and isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if ftype == "float | None" and value is not None:
        return float(value)
    if ftype == "float" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"section [{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        ftype = known[key].type if isinstance(known[key].type, str) else str(known[key].type)
        kwargs[key] = _coerce(key, value, ftype)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid [{where}] section: {exc}") from exc


_SECTIONS = {
    "scene": SceneConfig,
    "dataset": DatasetPlan,
    "features": FeatureConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def from_dict(data):
    known = set(_SECTIONS) | {"seed", "bgm"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    cfg = RunConfig()
    if "seed" in data:
        if isinstance(data["seed"], bool) or not isinstance(data["seed"], int):
            raise ConfigError("seed must be an integer")
        cfg.seed = data["seed"]
    for name, cls in _SECTIONS.items():
        if name in data:
            section = dict(data[name])
            if name == "dataset" and "bgm_specs" in section:
                raise ConfigError("BGM specs belong in the [bgm.<id>] sections")
            setattr(cfg, name, _build(cls, section, name))
    if "bgm" in data:
        if not isinstance(data["bgm"], dict):
            raise ConfigError("[bgm] must hold one sub-table per BGM id")
        cfg.bgm = {
            bid: _build(BgmSpec, spec, f"bgm.{bid}")
            for bid, spec in data["bgm"].items()
        }
    return cfg


def load(path):
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)


def loads(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from exc
    return from_dict(data)


# -- emitter -------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = repr(value)
        return text if any(c in text for c in ".einf") else text + ".0"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise ConfigError(f"cannot encode {type(value).__name__} in TOML")


def _emit_section(name, obj, out):
    rows = []
    for f in fields(obj):
        value = getattr(obj, f.name)
        if value is None or f.name == "bgm_specs":
            continue
        if f.name == "extra" and not value:
            continue
        rows.append(f"{f.name} = {_fmt(value)}")
    if rows:
        out.append(f"[{name}]")
        out.extend(rows)
        out.append("")


def to_toml(cfg):
    out = [f"seed = {cfg.seed}", ""]
    _emit_section("scene", cfg.scene, out)
    for bid in sorted(cfg.bgm):
        _emit_section(f"bgm.{bid}", cfg.bgm[bid], out)
    for name in ("dataset", "features", "model", "train", "eval"):
        _emit_section(name, getattr(cfg, name), out)
    return "\n".join(out).rstrip() + "\n"


def save(cfg, path):
    with open(path, "w") as f:
        f.write(to_toml(cfg))
