"""INI-style pipeline configuration.

Example::

    [workspace]
    aabb_min = -0.3, -0.5, 0.6
    aabb_max = 0.7, 0.5, 1.6
    floor_z = 0.752

    [repair]
    saliency_min_dist = 0.02
    risk_zone.shelf = 0.1,0.1,0.8, 0.3,0.3,1.0,  0.2,0.2,1.1, 0,0,0,1

    [buffer]
    interval = 10
    strategy = optimized

Unknown sections and keys are rejected. Command-line flags override file
values, which override the defaults below.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from demoforge.demo import Pose, Workspace
from demoforge.mixup import MixupPolicy
from demoforge.render import AXES, DEFAULT_AXES
from demoforge.repair import RepairConfig, RiskZone

ENV_VAR = "DEMOFORGE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    views: tuple[str, ...] = DEFAULT_AXES
    resolution: int = 224
    splat: int = 0
    invert_mode: str = "occupied"
    sigma: float = 1.5


@dataclass(frozen=True)
class BufferConfig:
    interval: int = 10
    strategy: str = "optimized"


@dataclass(frozen=True)
class LocalizeConfig:
    coarse_grid: int = 100
    zoom_side: float = 0.2
    fine_grid: int = 100


@dataclass(frozen=True)
class PipelineConfig:
    workspace: Workspace = field(default_factory=Workspace)
    repair: RepairConfig = field(default_factory=RepairConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    buffer: BufferConfig = field(default_factory=BufferConfig)
    mixup: MixupPolicy = field(default_factory=MixupPolicy)
    localize: LocalizeConfig = field(default_factory=LocalizeConfig)
    seed: int = 0
    threads: int = 1


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    vals = tuple(float(v) for v in text.replace(",", " ").split())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {len(vals)}")
    return vals


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_zone(text: str) -> RiskZone:
    v = _floats(text, 13)
    return RiskZone(v[0:3], v[3:6], Pose(v[6:9], v[9:13]))


_SCALARS = {
    "workspace": {
        "aabb_min": lambda s: _floats(s, 3),
        "aabb_max": lambda s: _floats(s, 3),
        "floor_z": float,
        "boundary_margin": float,
    },
    "repair": {
        "saliency_min_dist": float,
        "retreat_alpha": float,
        "clearance_delta": float,
        "via_count": int,
        "gripper_change_detect": _bool,
        "velocity_epsilon": float,
        "retreat_along_path": _bool,
    },
    "render": {
        "views": lambda s: tuple(a.strip() for a in s.split(",") if a.strip()),
        "resolution": int,
        "splat": int,
        "invert_mode": str,
        "sigma": float,
    },
    "buffer": {"interval": int, "strategy": str},
    "mixup": {"intra_rate": float, "cross_rate": float, "max_distractors": int, "renormalize": _bool},
    "localize": {"coarse_grid": int, "zoom_side": float, "fine_grid": int},
    "run": {"seed": int, "threads": int},
}


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    values: dict[str, dict] = {name: {} for name in _SCALARS}
    zones: list[RiskZone] = []
    for section in cp.sections():
        if section not in _SCALARS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            try:
                if section == "repair" and key.startswith("risk_zone."):
                    zones.append(_parse_zone(raw))
                    continue
                conv = _SCALARS[section].get(key)
                if conv is None:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
                values[section][key] = conv(raw)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from exc

    try:
        if zones:
            values["repair"]["risk_zones"] = tuple(zones)
        cfg = PipelineConfig(
            workspace=Workspace(**values["workspace"]),
            repair=RepairConfig(**values["repair"]),
            render=RenderConfig(**values["render"]),
            buffer=BufferConfig(**values["buffer"]),
            mixup=MixupPolicy(**values["mixup"]),
            localize=LocalizeConfig(**values["localize"]),
            **values["run"],
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    _check(cfg, source)
    return cfg


def _check(cfg: PipelineConfig, source: str) -> None:
    bad = [a for a in cfg.render.views if a not in AXES]
    if bad or not cfg.render.views:
        raise ConfigError(f"{source}: bad view axes {bad or '(none)'}")
    if cfg.render.invert_mode not in ("occupied", "image"):
        raise ConfigError(f"{source}: invert_mode must be 'occupied' or 'image'")
    if cfg.buffer.strategy not in ("conventional", "optimized"):
        raise ConfigError(f"{source}: strategy must be 'conventional' or 'optimized'")
    if cfg.buffer.interval < 1:
        raise ConfigError(f"{source}: interval must be >= 1")
    if cfg.render.resolution < 1 or cfg.render.splat < 0 or cfg.render.sigma <= 0:
        raise ConfigError(f"{source}: bad render settings")
    if cfg.threads < 1:
        raise ConfigError(f"{source}: threads must be >= 1")


def load_config(path: str | os.PathLike | None = None) -> PipelineConfig:
    """Read ``path``, else the file named by ``$DEMOFORGE_CONFIG``, else defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return PipelineConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))


def override(cfg: PipelineConfig, section: str, **values) -> PipelineConfig:
    """Replace fields of one block, ignoring None values (flags left unset)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    if section == "run":
        return replace(cfg, **values)
    try:
        return replace(cfg, **{section: replace(getattr(cfg, section), **values)})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def format_repair_section(cfg: RepairConfig) -> str:
    lines = ["[repair]"]
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "risk_zones":
            for i, z in enumerate(v):
                nums = [*z.lo, *z.hi, *z.prep_pose.position, *z.prep_pose.orientation]
                lines.append(f"risk_zone.{i} = " + ", ".join(repr(float(x)) for x in nums))
        elif isinstance(v, bool):
            lines.append(f"{f.name} = {'true' if v else 'false'}")
        else:
            lines.append(f"{f.name} = {v!r}")
    return "\n".join(lines) + "\n"
