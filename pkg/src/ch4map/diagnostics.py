"""Radiometric audit: PCA noise separation, SNR spectra and striping indicators."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal.windows import hann
from sklearn.base import BaseEstimator
from sklearn.decomposition import PCA
from sklearn.utils.validation import check_is_fitted

from .errors import (
    AllPixelsExcluded,
    ConfigError,
    NonPositiveRadiance,
    RankDeficient,
    TooFewColumns,
    TooFewPixels,
    ZeroNoise,
)
from .validation import check_cube

MAD_SCALE = 1.4826
RATIO_EPS = 1e-12
POWER_EPS = 1e-24


def _valid_pixels(X) -> np.ndarray:
    data, valid = check_cube(X)
    return data[:, valid].T


def pca_noise_estimate(X, n_signal_components: int = 5, *, correct_projection: bool = True) -> np.ndarray:
    """Per-band noise sigma from the residual after removing the leading principal components.

    The leading ``n_signal_components`` components are treated as scene
    structure and the residual scale of each band is ``1.4826 * MAD`` over
    pixels. Projecting out ``k`` directions also removes part of the noise:
    with ``Q = I - V V^T`` the residual variance of band ``b`` is
    ``sum_j Q_bj^2 sigma_j^2``. With ``correct_projection`` (default) that
    linear system is solved for ``sigma^2``; otherwise the raw residual scale
    is returned, which is biased low by roughly ``sqrt(1 - k / bands)``.
    """
    pixels = _valid_pixels(X)
    n, bands = pixels.shape
    if not 1 <= n_signal_components < bands:
        raise ConfigError(
            f"n_signal_components must be in [1, {bands - 1}], got {n_signal_components}", module="diagnostics"
        )
    if n < 10 * bands:
        raise TooFewPixels(f"{n} valid pixels, PCA noise estimate needs at least {10 * bands}", module="diagnostics")
    if not np.any(np.ptp(pixels, axis=0) > 0):
        raise RankDeficient("scene has no variance to separate", module="diagnostics", rank=0)
    pca = PCA(n_components=n_signal_components, svd_solver="full").fit(pixels)
    sv = pca.singular_values_
    tol = max(n, bands) * np.finfo(np.float64).eps * sv[0] if sv[0] > 0 else np.inf
    rank = int(np.sum(sv > tol))
    if rank < n_signal_components:
        raise RankDeficient(
            f"scene covariance has rank {rank} < {n_signal_components} signal components",
            module="diagnostics",
            rank=rank,
        )
    residual = pixels - pca.inverse_transform(pca.transform(pixels))
    med = np.median(residual, axis=0)
    raw = MAD_SCALE * np.median(np.abs(residual - med), axis=0)
    if not correct_projection:
        return raw
    return _unproject(raw, pca.components_)


def _unproject(raw: np.ndarray, components: np.ndarray) -> np.ndarray:
    q = np.eye(components.shape[1]) - components.T @ components
    try:
        var = np.linalg.solve(q**2, raw**2)
    except np.linalg.LinAlgError:
        var = np.full(raw.shape, -1.0)
    # bands the solve cannot resolve fall back to the diagonal correction
    diag = raw**2 / np.clip(np.diag(q), 1e-12, None)
    var = np.where(var > 0, var, diag)
    return np.sqrt(var)


class PCANoiseEstimator(BaseEstimator):
    """Estimator wrapper around :func:`pca_noise_estimate`; sets ``noise_sigma_``."""

    def __init__(self, n_signal_components=5):
        self.n_signal_components = n_signal_components

    def fit(self, X, y=None):
        self.noise_sigma_ = pca_noise_estimate(X, self.n_signal_components)
        return self

    def snr(self, X, wavelengths_nm=None) -> SnrSpectrum:
        check_is_fitted(self, "noise_sigma_")
        return snr_spectrum(X, self.noise_sigma_, wavelengths_nm)


@dataclass(frozen=True)
class SnrSpectrum:
    band_nm: np.ndarray
    snr_median: np.ndarray
    snr_p25: np.ndarray
    snr_p75: np.ndarray
    mean_radiance: np.ndarray
    reference_radiance: np.ndarray
    normalized: bool = False

    def rows(self):
        for i in range(self.band_nm.shape[0]):
            yield {
                "band_nm": float(self.band_nm[i]),
                "snr_median": float(self.snr_median[i]),
                "p25": float(self.snr_p25[i]),
                "p75": float(self.snr_p75[i]),
                "mean_radiance": float(self.mean_radiance[i]),
                "reference_radiance": float(self.reference_radiance[i]),
            }


def _band_axis(X, bands: int, wavelengths_nm) -> np.ndarray:
    if wavelengths_nm is None:
        wavelengths_nm = getattr(X, "wavelengths_nm", np.arange(bands, dtype=np.float64))
    return np.asarray(wavelengths_nm, dtype=np.float64)


def snr_spectrum(X, noise_sigma, wavelengths_nm=None) -> SnrSpectrum:
    """Per-column SNR ``mean radiance / sigma_b`` summarized by median and quartiles across columns."""
    data, valid = check_cube(X)
    sigma = np.asarray(noise_sigma, dtype=np.float64)
    if sigma.shape != (data.shape[0],):
        raise ConfigError(f"noise sigma has shape {sigma.shape}, expected ({data.shape[0]},)", module="diagnostics")
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        bad = np.flatnonzero(~(sigma > 0)).tolist()
        raise ZeroNoise(f"noise sigma is zero on bands {bad}", module="diagnostics", bands=bad)
    if not valid.any():
        raise TooFewPixels("no valid pixels", module="diagnostics")
    count = valid.sum(axis=0)
    keep = count > 0
    col_mean = np.nansum(data[:, :, keep], axis=1) / count[keep]
    snr = col_mean / sigma[:, None]
    p25, med, p75 = np.percentile(snr, [25, 50, 75], axis=1)
    mean_radiance = data[:, valid].mean(axis=1)
    return SnrSpectrum(
        band_nm=_band_axis(X, data.shape[0], wavelengths_nm),
        snr_median=med,
        snr_p25=p25,
        snr_p75=p75,
        mean_radiance=mean_radiance,
        reference_radiance=mean_radiance.copy(),
    )


def normalize_snr(snr: SnrSpectrum, reference_radiance) -> SnrSpectrum:
    """Rescale to another radiance level under shot-noise scaling, ``snr * sqrt(L_ref / L)``.

    ``L`` is the spectrum's current reference radiance, so normalizations
    compose.
    """
    ref = np.asarray(reference_radiance, dtype=np.float64)
    if ref.shape != snr.reference_radiance.shape:
        raise ConfigError(
            f"reference radiance has shape {ref.shape}, expected {snr.reference_radiance.shape}", module="diagnostics"
        )
    current = snr.reference_radiance
    if np.any(~(ref > 0)) or np.any(~(current > 0)):
        raise NonPositiveRadiance("radiance must be strictly positive on every band", module="diagnostics")
    factor = np.sqrt(ref / current)
    return replace(
        snr,
        snr_median=snr.snr_median * factor,
        snr_p25=snr.snr_p25 * factor,
        snr_p75=snr.snr_p75 * factor,
        reference_radiance=ref.copy(),
        normalized=True,
    )


def _nan_robust_sigma(values: np.ndarray) -> float:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return 0.0
    return float(MAD_SCALE * np.median(np.abs(values - np.median(values))))


def _nanmedian(values: np.ndarray, axis: int) -> np.ndarray:
    # all-NaN slices give NaN without the RuntimeWarning (warning filters are not thread safe)
    empty = np.all(np.isnan(values), axis=axis, keepdims=True)
    out = np.nanmedian(np.where(empty, 0.0, values), axis=axis)
    return np.where(np.squeeze(empty, axis=axis), np.nan, out)


def moving_median(profile: np.ndarray, halfwidth: int) -> np.ndarray:
    """Centred moving median over ``2 * halfwidth + 1`` samples, truncated at the edges; NaN ignored."""
    padded = np.pad(np.asarray(profile, dtype=np.float64), halfwidth, constant_values=np.nan)
    windows = sliding_window_view(padded, 2 * halfwidth + 1)
    return _nanmedian(windows, axis=-1)


def _detrended_profile(image: np.ndarray, halfwidth: int) -> np.ndarray:
    profile = _nanmedian(image, axis=0)
    return profile - moving_median(profile, halfwidth)


def _amplitude(image: np.ndarray, halfwidth: int) -> float:
    scale = np.nanmedian(image)
    spread = _nan_robust_sigma(_detrended_profile(image, halfwidth))
    if spread == 0.0:
        return 0.0
    return spread / abs(scale)


def _check_columns(cols: int, halfwidth: int) -> None:
    if cols < 2 * halfwidth + 3:
        raise TooFewColumns(f"{cols} columns, detrending needs at least {2 * halfwidth + 3}", module="diagnostics")


def _map_bands(fn, items, n_jobs: int) -> list:
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def striping_scene_amplitude(X, detrend_halfwidth: int = 15, *, n_jobs: int = 1) -> np.ndarray:
    """Relative column-striping amplitude per band.

    Column medians are detrended with a moving median; the amplitude is the
    robust spread of what remains divided by the band's median radiance.
    """
    data, _ = check_cube(X)
    _check_columns(data.shape[2], detrend_halfwidth)
    return np.array(_map_bands(lambda b: _amplitude(data[b], detrend_halfwidth), range(data.shape[0]), n_jobs))


def _ratio_image(data: np.ndarray, b: int) -> np.ndarray:
    num, den = data[b], data[b + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(np.abs(den) >= RATIO_EPS, num / den, np.nan)


def striping_ratio_amplitude(X, band_pairs=None, detrend_halfwidth: int = 15, *, n_jobs: int = 1) -> np.ndarray:
    """Striping amplitude of adjacent-band ratio images ``band_b / band_{b+1}``.

    ``band_pairs`` lists the lower band index of each pair and defaults to
    every adjacent pair. Pixels with a near-zero denominator are skipped.
    """
    data, _ = check_cube(X)
    _check_columns(data.shape[2], detrend_halfwidth)
    bands = data.shape[0]
    pairs = list(range(bands - 1)) if band_pairs is None else [int(b) for b in band_pairs]
    for b in pairs:
        if not 0 <= b < bands - 1:
            raise ConfigError(f"band pair ({b}, {b + 1}) outside the window", module="diagnostics")

    def one(b):
        ratio = _ratio_image(data, b)
        if not np.isfinite(ratio).any():
            raise AllPixelsExcluded(f"every pixel of ratio ({b}, {b + 1}) was excluded", module="diagnostics", band=b)
        return _amplitude(ratio, detrend_halfwidth)

    return np.array(_map_bands(one, pairs, n_jobs))


def fft_periodicity_index(X, band: int, detrend_halfwidth: int = 15) -> float:
    """Share of non-DC power of the detrended, Hann-tapered column profile in its 3 strongest bins."""
    data, _ = check_cube(X)
    return _fft_index(data[band], detrend_halfwidth)


def _fft_index(image: np.ndarray, halfwidth: int) -> float:
    cols = image.shape[1]
    if cols < 32:
        raise TooFewColumns(f"{cols} columns, periodicity index needs at least 32", module="diagnostics")
    profile = np.nan_to_num(_detrended_profile(image, halfwidth), nan=0.0)
    power = np.abs(np.fft.rfft(profile * hann(cols, sym=False))) ** 2
    ac = power[1:]
    total = ac.sum()
    scale = np.sum(profile**2) + POWER_EPS
    if total <= POWER_EPS * scale or total == 0.0:
        return 0.0
    return float(np.sort(ac)[-3:].sum() / total)


@dataclass
class StripingReport:
    band_nm: np.ndarray
    scene_amplitude: np.ndarray
    ratio_amplitude: np.ndarray
    fft_index: np.ndarray
    summary: dict = field(default_factory=dict)

    def rows(self):
        """One row per band; the ratio of pair (b, b+1) is reported on band b."""
        for i in range(self.band_nm.shape[0]):
            ratio = float(self.ratio_amplitude[i]) if i < self.ratio_amplitude.shape[0] else float("nan")
            yield {
                "band_nm": float(self.band_nm[i]),
                "scene_amp": float(self.scene_amplitude[i]),
                "ratio_amp": ratio,
                "fft_index": float(self.fft_index[i]),
            }


def striping_report(X, detrend_halfwidth: int = 15, wavelengths_nm=None, *, n_jobs: int = 1) -> StripingReport:
    """All striping metrics for every band, plus their medians over the window."""
    data, _ = check_cube(X)
    scene = striping_scene_amplitude(data, detrend_halfwidth, n_jobs=n_jobs)
    ratio = striping_ratio_amplitude(data, None, detrend_halfwidth, n_jobs=n_jobs)
    fft = np.array(_map_bands(lambda b: _fft_index(data[b], detrend_halfwidth), range(data.shape[0]), n_jobs))
    summary = {
        "scene_amp_median": float(np.median(scene)),
        "ratio_amp_median": float(np.median(ratio)) if ratio.size else 0.0,
        "fft_index_median": float(np.median(fft)),
        "detrend_halfwidth": int(detrend_halfwidth),
    }
    return StripingReport(_band_axis(X, data.shape[0], wavelengths_nm), scene, ratio, fft, summary)


def _fmt(value: float) -> str:
    return "" if not np.isfinite(value) else repr(float(value))


def _write_csv(path, fieldnames, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def write_snr_csv(path, snr: SnrSpectrum) -> None:
    _write_csv(path, ["band_nm", "snr_median", "p25", "p75", "mean_radiance", "reference_radiance"], snr.rows())


def write_striping_csv(path, report: StripingReport) -> None:
    _write_csv(path, ["band_nm", "scene_amp", "ratio_amp", "fft_index"], report.rows())


def window_summary(snr: SnrSpectrum, report: StripingReport) -> dict:
    return {
        "snr_median": float(np.median(snr.snr_median)),
        "snr_normalized": bool(snr.normalized),
        **report.summary,
    }


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
