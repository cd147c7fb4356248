"""Line-based run configuration: `[section]` headers with `key = value` pairs.

Every key has a default; unknown sections or keys fail parsing with the
offending line.  Distances are configured in millimeters and angles in
degrees (converted to meters/radians at this boundary)."""

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .agent import EpsilonSchedule, TrainConfig
from .env import EnvConfig
from .tcs import SafetyThresholds
from .world import CameraParams, ContactParams, HoleSpec, PegSpec, SensorParams


class ConfigError(ValueError):
    pass


@dataclass
class WorldConfig:
    peg_radius_mm: float = 10.0
    peg_length_mm: float = 100.0
    clearance_mm: float = 0.05
    hole_depth_mm: float = 12.0
    hole_center_x_mm: float = 0.0
    hole_center_y_mm: float = 0.0
    k_z_n_per_mm: float = 100.0
    k_xy_n_per_mm: float = 50.0
    sensor_noise: bool = True
    sigma_f: float = 0.05
    sigma_m: float = 0.005


@dataclass
class RunSection:
    seed: int = 0
    step_budget: int = 200_000
    train_mode: str = "random"          # start distribution used while training
    checkpoint_every: int = 50_000      # env steps between checkpoints
    episode_step_max: int = 5000        # per-episode cap during training
    net_seed: int = 1


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    tcs: SafetyThresholds = field(default_factory=SafetyThresholds)
    world: WorldConfig = field(default_factory=WorldConfig)
    env: EnvConfig = field(default_factory=EnvConfig)

    def build_world_parts(self) -> tuple[PegSpec, HoleSpec, ContactParams, SensorParams]:
        w = self.world
        peg = PegSpec(radius=w.peg_radius_mm * 1e-3, length=w.peg_length_mm * 1e-3)
        hole = HoleSpec(center_true=np.array([w.hole_center_x_mm * 1e-3,
                                              w.hole_center_y_mm * 1e-3, 0.0]),
                        radius=(w.peg_radius_mm + w.clearance_mm) * 1e-3,
                        depth=w.hole_depth_mm * 1e-3)
        contact = ContactParams(k_z=w.k_z_n_per_mm * 1e3, k_xy=w.k_xy_n_per_mm * 1e3)
        sensor = SensorParams(noise_enabled=w.sensor_noise, sigma_f=w.sigma_f,
                              sigma_m=w.sigma_m)
        return peg, hole, contact, sensor


_SECTIONS = {
    "run": ("run", RunSection),
    "train": ("train", TrainConfig),
    "epsilon": ("epsilon", EpsilonSchedule),
    "tcs": ("tcs", SafetyThresholds),
    "world": ("world", WorldConfig),
    "env": ("env", EnvConfig),
}

# env distances are configured in millimeters; these map config keys to the
# meter-valued EnvConfig fields
_ENV_MM_KEYS = {
    "start_height_mm": "start_height",
    "fixed_offset_mm": "fixed_offset",
    "random_offset_max_mm": "random_offset_max",
    "success_depth_mm": "success_depth",
    "out_of_region_mm": "out_of_region",
    "grasp_offset_max_mm": "grasp_offset_max",
}


def _convert(raw: str, current, line_no: int, key: str):
    raw = raw.strip()
    if current is None or isinstance(current, float):
        if raw.lower() in ("none", ""):
            return None
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"line {line_no}: value for {key!r} is not a number: {raw!r}")
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"line {line_no}: value for {key!r} is not a boolean: {raw!r}")
    if isinstance(current, int):
        try:
            return int(float(raw))
        except ValueError:
            raise ConfigError(f"line {line_no}: value for {key!r} is not an integer: {raw!r}")
    return raw


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    section = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            name = stripped[1:-1].strip().lower()
            if name not in _SECTIONS:
                raise ConfigError(f"line {line_no}: unknown section [{name}]")
            section = name
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigError(f"line {line_no}: key outside any [section]")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        attr_name, _ = _SECTIONS[section]
        target = getattr(cfg, attr_name)
        field_key = _ENV_MM_KEYS.get(key, key) if section == "env" else key
        if not hasattr(target, field_key) or field_key not in {f.name for f in fields(target)}:
            raise ConfigError(f"line {line_no}: unknown key {key!r} in section [{section}]")
        value = _convert(raw, getattr(target, field_key), line_no, key)
        if section == "env" and key in _ENV_MM_KEYS:
            value = value * 1e-3
        setattr(cfg, attr_name, replace(target, **{field_key: value}))
    # revalidate composed dataclasses
    cfg.train = replace(cfg.train)
    cfg.tcs = replace(cfg.tcs)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Serialize the effective configuration; dump -> parse round-trips."""
    out = []
    for section, (attr_name, _) in _SECTIONS.items():
        obj = getattr(cfg, attr_name)
        out.append(f"[{section}]")
        inverse_mm = {v: k for k, v in _ENV_MM_KEYS.items()}
        for f in fields(obj):
            if section == "epsilon" and f.name == "steps_accu":
                continue
            value = getattr(obj, f.name)
            key = f.name
            if section == "env" and f.name in inverse_mm:
                key = inverse_mm[f.name]
                value = value * 1e3
            if value is None:
                value = "none"
            elif isinstance(value, float):
                value = repr(value)
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
