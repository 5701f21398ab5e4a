"""Methane enhancement retrieval and radiometric diagnostics for pushbroom imaging spectrometers."""

from .background import BackgroundStats, ScopePartition, estimate_stats, select_background
from .config import PipelineConfig, load_config
from .cube import BandWindow, RadianceCube, extract_window, load_cube, save_cube
from .diagnostics import (
    PCANoiseEstimator,
    SnrSpectrum,
    StripingReport,
    fft_periodicity_index,
    normalize_snr,
    pca_noise_estimate,
    snr_spectrum,
    striping_ratio_amplitude,
    striping_report,
    striping_scene_amplitude,
)
from .estimator import ClutterMatchedFilter
from .matched_filter import EnhancementMap, apply_cmf, background_sigma
from .plume import GasConstants, PlumeRecord, compute_ime, effective_wind, ime_flux, quantify, segment_plume
from .synth import PlumeConfig, SceneTruth, SynthConfig, gaussian_plume_field, make_scene
from .target import (
    TargetSignature,
    UnitAbsorptionSpectrum,
    build_target,
    builtin_absorption,
    load_absorption,
    resample_absorption,
)

__version__ = "0.1.0"

__all__ = [
    "BackgroundStats",
    "BandWindow",
    "ClutterMatchedFilter",
    "EnhancementMap",
    "GasConstants",
    "PCANoiseEstimator",
    "PipelineConfig",
    "PlumeConfig",
    "PlumeRecord",
    "RadianceCube",
    "SceneTruth",
    "ScopePartition",
    "SnrSpectrum",
    "StripingReport",
    "SynthConfig",
    "TargetSignature",
    "UnitAbsorptionSpectrum",
    "apply_cmf",
    "background_sigma",
    "build_target",
    "builtin_absorption",
    "compute_ime",
    "effective_wind",
    "estimate_stats",
    "extract_window",
    "fft_periodicity_index",
    "gaussian_plume_field",
    "ime_flux",
    "load_absorption",
    "load_config",
    "load_cube",
    "make_scene",
    "normalize_snr",
    "pca_noise_estimate",
    "quantify",
    "resample_absorption",
    "save_cube",
    "segment_plume",
    "select_background",
    "snr_spectrum",
    "striping_ratio_amplitude",
    "striping_report",
    "striping_scene_amplitude",
]
