"""Synthetic pushbroom scenes with known methane truth.

Generation order is fixed: clutter -> plume injection -> column gains and
offsets -> noise. Noise is added last, so its level is not modulated by the
column gains.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.polynomial import legendre
from scipy import ndimage

from .cube import RadianceCube
from .errors import ConfigError, NonPositiveGain, NonPositiveWind, ShapeMismatch
from .plume import GasConstants
from .target import builtin_absorption, load_absorption, resample_absorption


@dataclass
class PlumeConfig:
    source_row: float = 64.0
    source_col: float = 20.0
    q_true_kg_s: float = 0.5
    wind_mps: float = 3.0
    wind_dir_deg: float = 0.0  # downwind heading; 0 = +col, 90 = +row
    sigma_y0_m: float = 30.0
    growth: float = 0.9
    x0_m: float = 100.0


@dataclass
class SynthConfig:
    """Scene recipe. Radiances are in the cube's (opaque) units."""

    rows: int = 128
    cols: int = 128
    bands: int = 40
    wl_start_nm: float = 2100.0
    wl_end_nm: float = 2450.0
    fwhm_nm: float = 9.0
    pixel_size_m: tuple = (30.0, 30.0)
    base_radiance: float = 0.5
    n_endmembers: int = 4
    clutter_amplitude: float = 0.05
    clutter_smoothing_px: float = 4.0
    column_gain_sigma: float = 0.0
    gain_common_mode: bool = False
    column_offset_sigma: float = 0.0
    noise_floor: float = 0.0
    noise_shot: float = 0.0
    plume: Optional[PlumeConfig] = None
    truth_threshold_ppm_m: float = 200.0
    absorption_path: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.plume, dict):
            self.plume = _strict(PlumeConfig, self.plume, "synth.plume")
        self.pixel_size_m = tuple(float(p) for p in self.pixel_size_m)
        self.validate()

    def validate(self):
        for name in ("column_gain_sigma", "column_offset_sigma", "noise_floor", "noise_shot", "clutter_amplitude"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}", key=name)
        for name in ("rows", "cols", "bands", "n_endmembers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1", key=name)
        if self.base_radiance <= 0 or self.fwhm_nm <= 0 or min(self.pixel_size_m) <= 0:
            raise ConfigError("base_radiance, fwhm_nm and pixel_size_m must be > 0")
        if self.bands > 1 and not self.wl_end_nm > self.wl_start_nm:
            raise ConfigError("wl_end_nm must exceed wl_start_nm")
        if self.plume is not None:
            p = self.plume
            if p.q_true_kg_s < 0 or p.sigma_y0_m <= 0 or p.x0_m <= 0 or p.growth < 0:
                raise ConfigError("plume needs q_true_kg_s >= 0, sigma_y0_m > 0, x0_m > 0, growth >= 0")
            if p.wind_mps <= 0:
                raise ConfigError("plume wind_mps must be > 0", key="plume.wind_mps")

    @property
    def wavelengths_nm(self) -> np.ndarray:
        return np.linspace(self.wl_start_nm, self.wl_end_nm, self.bands)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["pixel_size_m"] = list(self.pixel_size_m)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return _strict(cls, d, "synth")

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _strict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}", unknown=unknown)
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad value in {where}: {exc}") from exc


@dataclass(eq=False)
class SceneTruth:
    delta_x_true: np.ndarray
    plume_mask_true: np.ndarray
    gains: np.ndarray
    offsets: np.ndarray
    noise_sigma: np.ndarray
    clutter: np.ndarray
    k_band: np.ndarray
    q_true_kg_s: float
    u_true_mps: float
    pixel_size_m: tuple = (30.0, 30.0)
    constants: GasConstants = field(default_factory=GasConstants)

    @property
    def q_true_t_per_h(self) -> float:
        return self.q_true_kg_s * 3.6

    def ime_true(self, mask: np.ndarray) -> float:
        area = self.pixel_size_m[0] * self.pixel_size_m[1]
        return float(self.constants.mass_factor * area * self.delta_x_true[mask].sum())

    def calibrated_wind(self, mask: np.ndarray | None = None) -> float:
        """Effective wind making the IME method exact on ``mask``.

        ``u_eff = Q_true * sqrt(A) / IME_true`` evaluated on the truth field;
        this is the "true u_eff" that closure tests feed to the flux step.
        """
        mask = self.plume_mask_true if mask is None else mask
        if not mask.any() or self.q_true_kg_s == 0:
            return float(self.u_true_mps)
        area = mask.sum() * self.pixel_size_m[0] * self.pixel_size_m[1]
        return float(self.q_true_kg_s * np.sqrt(area) / self.ime_true(mask))

    def to_dict(self) -> dict:
        return {
            "q_true_kg_s": self.q_true_kg_s,
            "q_true_t_per_h": self.q_true_t_per_h,
            "u_true_mps": self.u_true_mps,
            "u_eff_true_mps": self.calibrated_wind(),
            "plume_pixels_true": int(self.plume_mask_true.sum()),
            "ime_true_kg": self.ime_true(self.plume_mask_true),
            "max_delta_x_true_ppm_m": float(self.delta_x_true.max()),
            "gains": self.gains.tolist(),
            "offsets": self.offsets.tolist(),
            "noise_sigma_mean_per_band": self.noise_sigma.mean(axis=(1, 2)).tolist(),
            "k_band": self.k_band.tolist(),
            "pixel_size_m": list(self.pixel_size_m),
        }


def gaussian_plume_field(
    q_true_kg_s: float,
    u_mps: float,
    direction_deg: float,
    sigma_y0_m: float,
    growth: float,
    shape: tuple[int, int],
    source: tuple[float, float],
    pixel_size_m=(30.0, 30.0),
    x0_m: float = 100.0,
    constants: GasConstants = GasConstants(),
) -> np.ndarray:
    """Steady-state column-integrated Gaussian plume, in ppm·m on the pixel grid.

    ``X(x, y) = Q / (sqrt(2 pi) sigma_y(x) u) exp(-y^2 / (2 sigma_y(x)^2))`` in
    kg m-2 for downwind distance ``x >= 0`` (zero upwind), with
    ``sigma_y(x) = sigma_y0 (1 + x / x0)^growth``. ``source`` is (row, col) in
    pixel units; pixel size is (along-track/rows, across-track/cols).
    """
    if not u_mps > 0:
        raise NonPositiveWind(f"wind must be > 0, got {u_mps}", module="synth")
    rows, cols = shape
    rr, cc = np.meshgrid(np.arange(rows, dtype=float), np.arange(cols, dtype=float), indexing="ij")
    east = (cc - source[1]) * pixel_size_m[1]
    north = (rr - source[0]) * pixel_size_m[0]
    theta = np.deg2rad(direction_deg)
    x = east * np.cos(theta) + north * np.sin(theta)
    y = -east * np.sin(theta) + north * np.cos(theta)
    downwind = x >= 0
    xs = np.where(downwind, x, 0.0)
    sigma_y = sigma_y0_m * (1.0 + xs / x0_m) ** growth
    column = q_true_kg_s / (np.sqrt(2 * np.pi) * sigma_y * u_mps) * np.exp(-0.5 * (y / sigma_y) ** 2)
    return np.where(downwind, column, 0.0) / constants.mass_factor


def inject_plume(clean, delta_x_true, k_band):
    """Beer-Lambert attenuation ``L * exp(-k_band * dX)`` per band and pixel."""
    is_cube = isinstance(clean, RadianceCube)
    data = clean.data.astype(np.float64) if is_cube else np.asarray(clean, dtype=np.float64)
    delta_x_true = np.asarray(delta_x_true, dtype=np.float64)
    k_band = np.asarray(k_band, dtype=np.float64).ravel()
    if data.shape[1:] != delta_x_true.shape or data.shape[0] != k_band.shape[0]:
        raise ShapeMismatch(
            f"cube {data.shape}, field {delta_x_true.shape}, k_band {k_band.shape} disagree", module="synth"
        )
    out = data * np.exp(-k_band[:, None, None] * delta_x_true[None])
    return clean.with_data(out) if is_cube else out


def apply_column_artifacts(cube, gain, offset):
    """``gain * L + offset`` with gain and offset given per (band, column)."""
    is_cube = isinstance(cube, RadianceCube)
    data = cube.data.astype(np.float64) if is_cube else np.asarray(cube, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    expected = (data.shape[0], data.shape[2])
    if gain.shape != expected or offset.shape != expected:
        raise ShapeMismatch(f"gain/offset must be (bands, cols) = {expected}", module="synth")
    if np.any(gain <= 0):
        raise NonPositiveGain("column gains must be > 0")
    out = gain[:, None, :] * data + offset[:, None, :]
    return cube.with_data(out) if is_cube else out


def noise_sigma(radiance: np.ndarray, noise_floor: float, noise_shot: float) -> np.ndarray:
    return noise_floor + noise_shot * np.sqrt(np.clip(radiance, 0.0, None))


def add_noise(cube, noise_floor: float, noise_shot: float, seed) -> np.ndarray:
    """Zero-mean Gaussian noise with ``sigma = floor + shot * sqrt(L)`` per sample.

    Every band draws from its own substream spawned from ``seed``, so the result
    does not depend on processing order.
    """
    is_cube = isinstance(cube, RadianceCube)
    data = cube.data.astype(np.float64) if is_cube else np.asarray(cube, dtype=np.float64)
    if noise_floor < 0 or noise_shot < 0:
        raise ConfigError("noise sigmas must be >= 0", module="synth")
    if noise_floor == 0 and noise_shot == 0:
        return cube
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sigma = noise_sigma(data, noise_floor, noise_shot)
    out = np.empty_like(data)
    for b, child in enumerate(ss.spawn(data.shape[0])):
        rng = np.random.default_rng(child)
        out[b] = data[b] + sigma[b] * rng.standard_normal(data.shape[1:])
    return cube.with_data(out) if is_cube else out


def _endmembers(rng, n: int, wavelengths: np.ndarray) -> np.ndarray:
    span = wavelengths[-1] - wavelengths[0] if wavelengths.size > 1 else 1.0
    x = 2.0 * (wavelengths - wavelengths[0]) / span - 1.0
    coef = rng.normal(0.0, 0.15, size=(n, 4))
    coef[:, 0] = 1.0
    return np.stack([legendre.legval(x, c) for c in coef])


def _abundances(rng, n: int, shape, amplitude: float, smoothing: float) -> np.ndarray:
    fields = np.empty((n,) + tuple(shape))
    for i in range(n):
        z = rng.standard_normal(shape)
        if smoothing > 0:
            z = ndimage.gaussian_filter(z, smoothing, mode="wrap")
        z = (z - z.mean()) / (z.std() + 1e-300)
        fields[i] = 1.0 / n + amplitude * z
    return fields


def make_scene(config: SynthConfig) -> tuple[RadianceCube, SceneTruth]:
    """Generate a cube and its truth record; deterministic for a given seed."""
    config.validate()
    wl = config.wavelengths_nm
    fwhm = np.full(config.bands, config.fwhm_nm)
    spec = load_absorption(config.absorption_path) if config.absorption_path else builtin_absorption()
    k_band = resample_absorption(spec, wl, fwhm)
    shape = (config.rows, config.cols)
    ss_clutter, ss_gain, ss_offset, ss_noise = np.random.SeedSequence(config.seed).spawn(4)

    rng = np.random.default_rng(ss_clutter)
    spectra = _endmembers(rng, config.n_endmembers, wl)
    abundances = _abundances(rng, config.n_endmembers, shape, config.clutter_amplitude, config.clutter_smoothing_px)
    clutter = config.base_radiance * np.einsum("ib,irc->brc", spectra, abundances)
    if np.any(clutter <= 0):
        raise ConfigError("clutter produced non-positive radiance; lower clutter_amplitude")

    if config.plume is not None:
        p = config.plume
        delta_x = gaussian_plume_field(
            p.q_true_kg_s,
            p.wind_mps,
            p.wind_dir_deg,
            p.sigma_y0_m,
            p.growth,
            shape,
            (p.source_row, p.source_col),
            config.pixel_size_m,
            p.x0_m,
        )
        q_true, u_true = p.q_true_kg_s, p.wind_mps
    else:
        delta_x = np.zeros(shape)
        q_true, u_true = 0.0, 0.0
    radiance = inject_plume(clutter, delta_x, k_band)

    rng = np.random.default_rng(ss_gain)
    if config.gain_common_mode:
        gains = np.broadcast_to(1.0 + config.column_gain_sigma * rng.standard_normal(config.cols), (config.bands, config.cols)).copy()
    else:
        gains = 1.0 + config.column_gain_sigma * rng.standard_normal((config.bands, config.cols))
    rng = np.random.default_rng(ss_offset)
    offsets = config.column_offset_sigma * rng.standard_normal((config.bands, config.cols))
    radiance = apply_column_artifacts(radiance, gains, offsets)

    sigma = noise_sigma(radiance, config.noise_floor, config.noise_shot)
    radiance = add_noise(radiance, config.noise_floor, config.noise_shot, ss_noise)

    cube = RadianceCube(radiance.astype(np.float32), wl, fwhm, config.pixel_size_m)
    truth = SceneTruth(
        delta_x_true=delta_x,
        plume_mask_true=delta_x > config.truth_threshold_ppm_m,
        gains=gains,
        offsets=offsets,
        noise_sigma=sigma,
        clutter=clutter,
        k_band=k_band,
        q_true_kg_s=q_true,
        u_true_mps=u_true,
        pixel_size_m=config.pixel_size_m,
    )
    return cube, truth
