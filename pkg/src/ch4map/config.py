"""Strict, namespaced pipeline configuration shared by every CLI subcommand."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError, MissingFile
from .synth import SynthConfig

VARIANTS = ("cmf", "ctmf", "cw-cmf")


@dataclass
class WindowConfig:
    lo_nm: float = 2100.0
    hi_nm: float = 2450.0


@dataclass
class BackgroundConfig:
    kappa: float = 3.0
    theta_max_rad: float = 0.15
    max_iter: int = 5
    shrinkage_gamma: float = 0.01
    min_pixels_factor: float = 10.0
    kmeans_k: int = 4
    kmeans_seed: int = 0
    block_width: int = 1
    buffer_px: int = 0


@dataclass
class SegmentConfig:
    tau: float = 2.0
    tau_peak: float = 5.0
    scales: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0])
    min_pixels: int = 5


@dataclass
class FluxConfig:
    wind_calib_a: float = 1.0
    wind_calib_b: float = 0.0
    bg_correlated: bool = False
    clip_negative: bool = False
    molar_mass_kg_per_mol: float = 0.01604
    pressure_pa: float = 101325.0
    temperature_k: float = 298.15


@dataclass
class DiagConfig:
    n_signal_components: int = 5
    detrend_halfwidth: int = 15
    crop: Optional[list] = None  # [row0, row1, col0, col1], half-open


@dataclass
class PathsConfig:
    """Input and output locations; ``None`` means "the conventional file in out_dir"."""

    cube: Optional[str] = None
    absorption: Optional[str] = None
    wind_csv: Optional[str] = None
    maps: Optional[str] = None
    reference_cube: Optional[str] = None
    out_dir: str = "out"


@dataclass
class SynthSection:
    scene: SynthConfig = field(default_factory=SynthConfig)
    wind_sigma_mps: float = 0.0
    write_wind_csv: bool = True


@dataclass
class PipelineConfig:
    scene_id: str = "scene"
    variant: str = "cw-cmf"
    window: WindowConfig = field(default_factory=WindowConfig)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    flux: FluxConfig = field(default_factory=FluxConfig)
    diag: DiagConfig = field(default_factory=DiagConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    synth: SynthSection = field(default_factory=SynthSection)

    def validate(self) -> "PipelineConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {list(VARIANTS)}, got {self.variant!r}", key="variant")
        if not self.window.lo_nm < self.window.hi_nm:
            raise ConfigError("window.lo_nm must be below window.hi_nm", key="window")
        b = self.background
        if not 0 <= b.shrinkage_gamma < 1:
            raise ConfigError("background.shrinkage_gamma must be in [0, 1)", key="background.shrinkage_gamma")
        if b.max_iter < 1 or b.block_width < 1 or b.kmeans_k < 1 or b.buffer_px < 0:
            raise ConfigError("background.max_iter, block_width and kmeans_k must be >= 1, buffer_px >= 0")
        if b.kappa <= 0 or b.theta_max_rad <= 0 or b.min_pixels_factor <= 0:
            raise ConfigError("background.kappa, theta_max_rad and min_pixels_factor must be > 0")
        s = self.segment
        if s.tau <= 0 or s.tau_peak <= 0 or s.min_pixels < 1 or not s.scales or min(s.scales) < 0:
            raise ConfigError("segment thresholds must be positive and scales non-negative")
        if self.diag.crop is not None and len(self.diag.crop) != 4:
            raise ConfigError("diag.crop must be [row0, row1, col0, col1]", key="diag.crop")
        if self.synth.wind_sigma_mps < 0:
            raise ConfigError("synth.wind_sigma_mps must be >= 0", key="synth.wind_sigma_mps")
        return self

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["synth"]["scene"] = self.synth.scene.to_dict()
        return out

    def out_path(self, name: str) -> Path:
        return Path(self.paths.out_dir) / name

    def input_path(self, key: str, default_name: str) -> Path:
        value = getattr(self.paths, key)
        return Path(value) if value is not None else self.out_path(default_name)


def _build(cls, data, where: str):
    if cls is SynthConfig:
        return SynthConfig.from_dict(data)
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object", key=where)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config keys: {[prefix + k for k in unknown]}", unknown=unknown)
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        key = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, key)
        else:
            kwargs[name] = _coerce(hint, value, key)
    return cls(**kwargs)


def _coerce(hint, value, key):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        if value is None:
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false", key=key)
        return value
    if hint in (int, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number", key=key)
        if hint is int and float(value) != int(value):
            raise ConfigError(f"{key} must be an integer", key=key)
        return hint(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string", key=key)
        return value
    if hint is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list", key=key)
        return list(value)
    return value


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "").validate()


def load_config(path: Optional[str | Path]) -> PipelineConfig:
    """Parse a JSON config file; ``None`` gives the defaults.

    Relative paths in ``paths`` are resolved against the config file's folder.
    """
    if path is None:
        return PipelineConfig().validate()
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config file not found: {path}", module="config", path=str(path))
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", module="config") from exc
    cfg = config_from_dict(data)
    base = path.resolve().parent
    for f in dataclasses.fields(PathsConfig):
        value = getattr(cfg.paths, f.name)
        if value is not None and not Path(value).is_absolute():
            setattr(cfg.paths, f.name, str(base / value))
    return cfg
