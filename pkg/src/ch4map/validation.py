"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .cube import RadianceCube
from .errors import ShapeMismatch


def check_cube(X, *, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(data, valid)`` for a cube-like input.

    ``X`` may be a :class:`RadianceCube` (sentinel samples are invalid) or an
    array shaped ``(bands, rows, cols)`` (non-finite samples are invalid).
    ``data`` is a float64 copy with invalid pixels set to NaN in every band;
    ``valid`` is the ``(rows, cols)`` pixel mask.
    """
    if isinstance(X, RadianceCube):
        data = X.data.astype(dtype)
        valid = X.valid_mask.copy()
    else:
        data = np.array(X, dtype=dtype)
        if data.ndim != 3:
            raise ShapeMismatch(f"expected a (bands, rows, cols) cube, got shape {data.shape}")
        valid = np.isfinite(data).all(axis=0)
    data[:, ~valid] = np.nan
    return data, valid


def check_spectra(pixels) -> np.ndarray:
    """Validate an ``(n_pixels, bands)`` matrix of finite spectra."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise ShapeMismatch(f"expected (n_pixels, bands), got shape {pixels.shape}")
    if not np.isfinite(pixels).all():
        raise ShapeMismatch("spectra contain non-finite values")
    return pixels


def check_vector(v, length: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if length is not None and v.shape[0] != length:
        raise ShapeMismatch(f"{name} has length {v.shape[0]}, expected {length}")
    return v


def robust_sigma(values, axis=None) -> np.ndarray:
    """Gaussian-consistent robust scale, 1.4826 times the median absolute deviation."""
    values = np.asarray(values, dtype=np.float64)
    med = np.median(values, axis=axis, keepdims=True)
    mad = np.median(np.abs(values - med), axis=axis)
    return 1.4826 * mad
