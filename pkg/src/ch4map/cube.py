"""Neutral radiance-cube model and its float32 BSQ + JSON sidecar format.

A cube on disk is two files::

    scene.json   header (keys listed in HEADER_KEYS)
    scene.bsq    band-sequential float32 little-endian payload

Invalid samples are stored as the header's ``nodata_value`` sentinel.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyWindow,
    HeaderMismatch,
    IoFailure,
    MissingFile,
    MonotonicityViolation,
    ShapeMismatch,
)

NODATA = -9999.0
DEFAULT_UNITS = "uW cm-2 sr-1 nm-1"
HEADER_KEYS = frozenset(
    {
        "rows",
        "cols",
        "bands",
        "dtype",
        "interleave",
        "byte_order",
        "nodata_value",
        "wavelengths_nm",
        "fwhm_nm",
        "pixel_size_m",
        "radiance_units",
        "data_file",
    }
)
_SUPPORTED = {"float32": "<f4", "uint8": "|u1"}


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RadianceCube:
    """Radiance array indexed ``[band, row, col]`` plus spectral metadata.

    ``data`` is always stored as float32 (the on-disk precision) so that a
    save/load round trip is the identity. Algorithms that need more precision
    accept plain float64 arrays as well.
    """

    data: np.ndarray
    wavelengths_nm: np.ndarray
    fwhm_nm: np.ndarray
    pixel_size_m: tuple[float, float] = (30.0, 30.0)
    radiance_units: str = DEFAULT_UNITS
    nodata_value: float = NODATA
    _valid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeMismatch(f"cube data must be 3-D (bands, rows, cols), got {data.shape}", module="cube")
        if data.dtype != np.float32:
            data = data.astype(np.float32)
        elif data.flags.writeable:
            data = data.copy()
        wl = np.array(self.wavelengths_nm, dtype=np.float64).ravel()
        fw = np.array(self.fwhm_nm, dtype=np.float64).ravel()
        bands = data.shape[0]
        if len(wl) != bands or len(fw) != bands:
            raise HeaderMismatch(
                f"{bands} bands but {len(wl)} wavelengths and {len(fw)} fwhm values",
                bands=bands,
            )
        if np.any(np.diff(wl) <= 0):
            raise MonotonicityViolation("wavelengths_nm must be strictly increasing")
        if np.any(fw <= 0):
            raise HeaderMismatch("all fwhm_nm must be > 0")
        px = tuple(float(p) for p in self.pixel_size_m)
        if len(px) != 2 or min(px) <= 0:
            raise HeaderMismatch(f"pixel_size_m must be two positive values, got {self.pixel_size_m}")
        nodata = float(self.nodata_value)
        invalid = ~np.isfinite(data) | (data == np.float32(nodata))
        # a NaN sample is folded into the sentinel so the file never carries NaN
        if np.any(~np.isfinite(data)):
            data = np.where(np.isfinite(data), data, np.float32(nodata)).astype(np.float32)
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "wavelengths_nm", _readonly(wl))
        object.__setattr__(self, "fwhm_nm", _readonly(fw))
        object.__setattr__(self, "pixel_size_m", px)
        object.__setattr__(self, "nodata_value", nodata)
        object.__setattr__(self, "_valid", _readonly(~invalid.any(axis=0)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    @property
    def valid_mask(self) -> np.ndarray:
        """(rows, cols) mask: True where no band carries the sentinel."""
        return self._valid

    @property
    def pixel_area_m2(self) -> float:
        return self.pixel_size_m[0] * self.pixel_size_m[1]

    def with_data(self, data: np.ndarray) -> "RadianceCube":
        """Same metadata, new radiance array (must keep the band count)."""
        return RadianceCube(
            data,
            self.wavelengths_nm,
            self.fwhm_nm,
            self.pixel_size_m,
            self.radiance_units,
            self.nodata_value,
        )

    def header(self, data_file: str) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "bands": self.bands,
            "dtype": "float32",
            "interleave": "BSQ",
            "byte_order": "little",
            "nodata_value": self.nodata_value,
            "wavelengths_nm": [float(w) for w in self.wavelengths_nm],
            "fwhm_nm": [float(f) for f in self.fwhm_nm],
            "pixel_size_m": list(self.pixel_size_m),
            "radiance_units": self.radiance_units,
            "data_file": data_file,
        }

    def __eq__(self, other):
        if not isinstance(other, RadianceCube):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and np.array_equal(self.wavelengths_nm, other.wavelengths_nm)
            and np.array_equal(self.fwhm_nm, other.fwhm_nm)
            and self.pixel_size_m == other.pixel_size_m
            and self.radiance_units == other.radiance_units
            and self.nodata_value == other.nodata_value
        )

    __hash__ = None


@dataclass(frozen=True)
class BandWindow:
    lo_nm: float
    hi_nm: float
    band_indices: tuple[int, ...]

    @property
    def slice(self) -> slice:
        return slice(self.band_indices[0], self.band_indices[-1] + 1)


def _read_header(header_path: Path) -> dict:
    if not header_path.is_file():
        raise MissingFile(f"header not found: {header_path}", path=str(header_path))
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise HeaderMismatch(f"header is not valid JSON: {exc}", path=str(header_path)) from exc
    keys = set(header)
    if keys != HEADER_KEYS:
        raise HeaderMismatch(
            "header keys differ from the format",
            missing=sorted(HEADER_KEYS - keys),
            unexpected=sorted(keys - HEADER_KEYS),
        )
    if header["interleave"] != "BSQ" or header["byte_order"] != "little":
        raise HeaderMismatch("only little-endian BSQ payloads are supported")
    if header["dtype"] not in _SUPPORTED:
        raise HeaderMismatch(f"unsupported dtype {header['dtype']!r}")
    return header


def _read_payload(header_path: Path, header: dict) -> np.ndarray:
    data_path = header_path.parent / header["data_file"]
    if not data_path.is_file():
        raise MissingFile(f"payload not found: {data_path}", path=str(data_path))
    dtype = np.dtype(_SUPPORTED[header["dtype"]])
    rows, cols, bands = int(header["rows"]), int(header["cols"]), int(header["bands"])
    expected = rows * cols * bands * dtype.itemsize
    actual = data_path.stat().st_size
    if actual != expected:
        raise HeaderMismatch(
            f"payload is {actual} bytes, header implies {expected}",
            expected=expected,
            actual=actual,
        )
    return np.fromfile(data_path, dtype=dtype).reshape(bands, rows, cols)


def load_cube(header_path: str | os.PathLike) -> RadianceCube:
    """Read and validate a cube from its JSON sidecar.

    Raises
    ------
    MissingFile
        Header or payload does not exist.
    HeaderMismatch
        Payload size, key set or metadata lengths disagree with the header.
    MonotonicityViolation
        Wavelengths are not strictly increasing.
    """
    header_path = Path(header_path)
    header = _read_header(header_path)
    if header["dtype"] != "float32":
        raise HeaderMismatch("radiance cubes must be float32", dtype=header["dtype"])
    data = _read_payload(header_path, header)
    return RadianceCube(
        data.astype(np.float32),
        header["wavelengths_nm"],
        header["fwhm_nm"],
        tuple(header["pixel_size_m"]),
        header["radiance_units"],
        header["nodata_value"],
    )


def _write(header_path: Path, header: dict, payload: np.ndarray) -> None:
    try:
        header_path.parent.mkdir(parents=True, exist_ok=True)
        with open(header_path.parent / header["data_file"], "wb") as fh:
            fh.write(payload.tobytes(order="C"))
        header_path.write_text(json.dumps(header, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {header_path}: {exc}", path=str(header_path)) from exc


def save_cube(cube: RadianceCube, header_path: str | os.PathLike) -> None:
    """Write ``cube`` next to ``header_path`` (payload gets a ``.bsq`` suffix)."""
    header_path = Path(header_path)
    header = cube.header(header_path.with_suffix(".bsq").name)
    _write(header_path, header, np.ascontiguousarray(cube.data, dtype="<f4"))


def save_map(
    values: np.ndarray,
    header_path: str | os.PathLike,
    pixel_size_m: Sequence[float],
    units: str,
    nodata_value: float = NODATA,
) -> None:
    """Write a 2-D map or a stack of maps ``(n, rows, cols)`` in cube format.

    Map layers have no wavelength; the header carries their 1-based layer
    number as the "wavelength" so the file stays loadable by :func:`load_cube`.
    NaN becomes ``nodata_value``.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    values = np.where(np.isfinite(values), values, nodata_value)
    n = values.shape[0]
    layers = [float(i + 1) for i in range(n)]
    cube = RadianceCube(values.astype(np.float32), layers, [1.0] * n, tuple(pixel_size_m), units, nodata_value)
    save_cube(cube, header_path)


def load_map(header_path: str | os.PathLike) -> tuple[np.ndarray, RadianceCube]:
    """Inverse of :func:`save_map`: float64 layers with sentinels as NaN."""
    cube = load_cube(header_path)
    values = cube.data.astype(np.float64)
    values[cube.data == np.float32(cube.nodata_value)] = np.nan
    return values, cube


def save_mask(masks: np.ndarray, header_path: str | os.PathLike, pixel_size_m: Sequence[float]) -> None:
    """Write boolean masks ``(n, rows, cols)`` as a uint8 BSQ stack."""
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim == 2:
        masks = masks[None]
    header_path = Path(header_path)
    n, rows, cols = masks.shape
    header = {
        "rows": rows,
        "cols": cols,
        "bands": n,
        "dtype": "uint8",
        "interleave": "BSQ",
        "byte_order": "little",
        "nodata_value": 255,
        "wavelengths_nm": [float(i + 1) for i in range(n)],
        "fwhm_nm": [1.0] * n,
        "pixel_size_m": [float(p) for p in pixel_size_m],
        "radiance_units": "plume mask",
        "data_file": header_path.with_suffix(".bsq").name,
    }
    _write(header_path, header, masks.astype(np.uint8))


def load_mask(header_path: str | os.PathLike) -> np.ndarray:
    header_path = Path(header_path)
    header = _read_header(header_path)
    if header["dtype"] != "uint8":
        raise HeaderMismatch("mask files must be uint8", dtype=header["dtype"])
    return _read_payload(header_path, header).astype(bool)


def extract_window(cube: RadianceCube, lo_nm: float, hi_nm: float) -> tuple[RadianceCube, BandWindow]:
    """Keep only the bands whose centre lies in ``[lo_nm, hi_nm]``."""
    if not lo_nm < hi_nm:
        raise EmptyWindow(f"window bounds must satisfy lo < hi, got [{lo_nm}, {hi_nm}]")
    wl = cube.wavelengths_nm
    idx = np.flatnonzero((wl >= lo_nm) & (wl <= hi_nm))
    if idx.size == 0:
        raise EmptyWindow(
            f"no band centre in [{lo_nm}, {hi_nm}] nm",
            lo_nm=lo_nm,
            hi_nm=hi_nm,
            available=(float(wl[0]), float(wl[-1])),
        )
    window = BandWindow(float(lo_nm), float(hi_nm), tuple(int(i) for i in idx))
    sub = RadianceCube(
        cube.data[window.slice],
        wl[window.slice],
        cube.fwhm_nm[window.slice],
        cube.pixel_size_m,
        cube.radiance_units,
        cube.nodata_value,
    )
    return sub, window
