"""Methane target signature from a unit absorption spectrum.

The absorption spectrum is resampled to instrument bands through Gaussian
spectral response functions and multiplied by the background mean radiance.
The target carries a negative sign: a positive enhancement removes radiance.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.integrate import trapezoid

from .errors import CoverageGap, MissingFile, MonotonicityViolation, ShapeMismatch
from .scope import Scope

FWHM_TO_SIGMA = 2.3548
SRF_TRUNCATION = 4.0
MAX_GRID_STEP_NM = 0.1


@dataclass(frozen=True, eq=False)
class UnitAbsorptionSpectrum:
    """High-resolution absorption per unit enhancement (1 / ppm·m)."""

    grid_nm: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid_nm, dtype=np.float64).ravel()
        k = np.asarray(self.k, dtype=np.float64).ravel()
        if grid.shape != k.shape or grid.size < 2:
            raise ShapeMismatch("grid_nm and k must be equal-length vectors", module="target")
        if np.any(np.diff(grid) <= 0):
            raise MonotonicityViolation("absorption grid must be strictly increasing", module="target")
        if not np.all(np.isfinite(k)) or np.any(k < 0):
            raise ShapeMismatch("absorption coefficients must be finite and >= 0", module="target")
        object.__setattr__(self, "grid_nm", grid)
        object.__setattr__(self, "k", k)

    def save(self, path: str | os.PathLike) -> None:
        np.savetxt(path, np.column_stack([self.grid_nm, self.k]), fmt="%.6f %.9e", header="wavelength_nm k_per_ppm_m")


def load_absorption(path: str | os.PathLike) -> UnitAbsorptionSpectrum:
    """Read a two-column ASCII spectrum (``#`` lines are comments)."""
    if not os.path.isfile(path):
        raise MissingFile(f"absorption spectrum not found: {path}", module="target", path=str(path))
    table = np.loadtxt(path, comments="#", ndmin=2)
    if table.shape[1] != 2:
        raise ShapeMismatch(f"expected two columns in {path}, found {table.shape[1]}", module="target")
    return UnitAbsorptionSpectrum(table[:, 0], table[:, 1])


def builtin_absorption() -> UnitAbsorptionSpectrum:
    """Synthetic methane-like absorption bundled for tests and the simulator.

    Covers 1950-2600 nm on a 0.1 nm grid. The line positions and strengths are
    made up; the spectrum only has to look like a SWIR methane band to a
    matched filter.
    """
    ref = resources.files("ch4map") / "data" / "synthetic_ch4_absorption.txt"
    with resources.as_file(ref) as path:
        return load_absorption(path)


def resample_absorption(spec: UnitAbsorptionSpectrum, wavelengths_nm, fwhm_nm) -> np.ndarray:
    """Band-average the absorption through truncated Gaussian SRFs.

    Each band response is a Gaussian centred on the band wavelength with
    ``sigma = fwhm / 2.3548``, truncated at four sigma, and integrated with the
    trapezoid rule on the spectrum's own grid.

    Raises
    ------
    CoverageGap
        A band's SRF support leaves the spectrum grid, or the grid is coarser
        than 0.1 nm inside the support.
    """
    centers = np.asarray(wavelengths_nm, dtype=np.float64).ravel()
    fwhm = np.asarray(fwhm_nm, dtype=np.float64).ravel()
    if centers.shape != fwhm.shape:
        raise ShapeMismatch("wavelengths and fwhm differ in length", module="target")
    grid, k = spec.grid_nm, spec.k
    k_band = np.empty(centers.size)
    for b, (c, w) in enumerate(zip(centers, fwhm)):
        sigma = w / FWHM_TO_SIGMA
        lo, hi = c - SRF_TRUNCATION * sigma, c + SRF_TRUNCATION * sigma
        if lo < grid[0] or hi > grid[-1]:
            raise CoverageGap(
                f"band {b} support [{lo:.2f}, {hi:.2f}] nm exceeds spectrum grid "
                f"[{grid[0]:.2f}, {grid[-1]:.2f}] nm",
                band=b,
            )
        i0 = np.searchsorted(grid, lo, side="left")
        i1 = np.searchsorted(grid, hi, side="right")
        g = grid[i0:i1]
        if g.size < 2 or np.max(np.diff(g)) > MAX_GRID_STEP_NM * (1 + 1e-9):
            raise CoverageGap(f"spectrum grid coarser than {MAX_GRID_STEP_NM} nm under band {b}", band=b)
        srf = np.exp(-0.5 * ((g - c) / sigma) ** 2)
        k_band[b] = trapezoid(k[i0:i1] * srf, g) / trapezoid(srf, g)
    return k_band


@dataclass(frozen=True, eq=False)
class TargetSignature:
    t: np.ndarray
    k_band: np.ndarray
    scope: Scope = Scope("scene")


def build_target(mu, k_band, scope: Scope = Scope("scene")) -> TargetSignature:
    """``t = -mu * k_band``: radiance change per ppm·m for a background ``mu``."""
    mu = np.asarray(mu, dtype=np.float64).ravel()
    k_band = np.asarray(k_band, dtype=np.float64).ravel()
    if mu.shape != k_band.shape:
        raise ShapeMismatch(f"mu has {mu.size} bands, k_band has {k_band.size}", module="target")
    if np.any(mu < 0):
        raise ShapeMismatch("background mean radiance must be >= 0", module="target")
    return TargetSignature(-mu * k_band, k_band, scope)
