"""Clutter matched filter: whitened projection of residual spectra onto the target.

For a pixel ``x`` in scope ``s`` with background ``(mu_s, Sigma_s)`` and target
``t_s``::

    dX       = t' Sigma^-1 (x - mu) / (t' Sigma^-1 t)      [ppm·m]
    sigma_dX = 1 / sqrt(t' Sigma^-1 t)

``Sigma^-1 t`` is always obtained from the stored Cholesky factor by two
triangular solves; no inverse is ever formed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBackground, NonPositiveQuadraticForm, ScopeMissingStats, ShapeMismatch
from .scope import VARIANT_OF_KIND, Scope
from .validation import check_cube, robust_sigma


def cmf_scores(pixels: np.ndarray, stats, t: np.ndarray) -> tuple[np.ndarray, float]:
    """Matched-filter enhancement for ``(n, bands)`` spectra under one scope.

    Returns the per-pixel enhancement and the scope's noise-equivalent
    enhancement ``1 / sqrt(t' Sigma^-1 t)``.
    """
    w = stats.solve(t)
    q = float(t @ w)
    if not np.isfinite(q) or q <= 0:
        raise NonPositiveQuadraticForm(
            f"t' Sigma^-1 t = {q!r} for scope {stats.scope.label}", scope=stats.scope.label
        )
    resid = pixels - stats.mu
    # einsum keeps the per-pixel reduction order fixed regardless of BLAS threading
    score = np.einsum("ij,j->i", resid, w / q)
    return score, 1.0 / np.sqrt(q)


@dataclass(eq=False)
class EnhancementMap:
    """Per-pixel methane enhancement and its uncertainty components (ppm·m)."""

    delta_x: np.ndarray
    sigma_noise: np.ndarray
    valid: np.ndarray
    variant: str
    scope_id: np.ndarray
    scopes: list = field(default_factory=list)
    sigma_bg_scope: dict = field(default_factory=dict)
    background: np.ndarray | None = None
    pixel_size_m: tuple[float, float] = (30.0, 30.0)
    metadata: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.delta_x.shape

    @property
    def sigma_bg(self) -> np.ndarray:
        """Background variability broadcast to pixels (NaN where unknown)."""
        out = np.full(self.delta_x.shape, np.nan)
        for idx, value in self.sigma_bg_scope.items():
            out[self.scope_id == idx] = value
        out[~self.valid] = np.nan
        return out

    @property
    def pixel_area_m2(self) -> float:
        return float(self.pixel_size_m[0] * self.pixel_size_m[1])

    @classmethod
    def from_arrays(cls, delta_x, sigma_noise, sigma_bg, pixel_size_m=(30.0, 30.0), variant="CMF"):
        """Rebuild a map from stored layers, one sigma_bg scope per distinct value."""
        delta_x = np.asarray(delta_x, dtype=np.float64)
        sigma_noise = np.asarray(sigma_noise, dtype=np.float64)
        sigma_bg = np.asarray(sigma_bg, dtype=np.float64)
        valid = np.isfinite(delta_x) & np.isfinite(sigma_noise) & np.isfinite(sigma_bg)
        scope_id = np.full(delta_x.shape, -1, dtype=np.int64)
        levels, inverse = np.unique(sigma_bg[valid], return_inverse=True)
        scope_id[valid] = inverse
        return cls(
            delta_x=np.where(valid, delta_x, np.nan),
            sigma_noise=np.where(valid, sigma_noise, np.nan),
            valid=valid,
            variant=variant,
            scope_id=scope_id,
            sigma_bg_scope={i: float(v) for i, v in enumerate(levels)},
            pixel_size_m=tuple(pixel_size_m),
        )


def _labels_for(partition, shape) -> np.ndarray:
    labels = partition.pixel_labels(shape)
    if labels.shape != shape:
        raise ShapeMismatch(f"partition covers {labels.shape}, cube is {shape}", module="matched_filter")
    return labels


def apply_cmf(X, partition, stats: dict, targets: dict, *, n_jobs: int = 1) -> EnhancementMap:
    """Retrieve the enhancement map for every valid pixel.

    Parameters
    ----------
    X : RadianceCube or ndarray of shape (bands, rows, cols)
        Radiance in the retrieval window.
    partition : ScopePartition
        Assignment of pixels to background scopes.
    stats, targets : dict
        ``BackgroundStats`` and ``TargetSignature`` keyed by scope index. A
        scope listed in ``partition`` but absent from ``stats`` has its pixels
        marked invalid (this is how degenerate scopes are dropped).
    n_jobs : int
        Worker threads over scopes. Output does not depend on it.
    """
    data, valid = check_cube(X)
    bands, rows, cols = data.shape
    labels = _labels_for(partition, (rows, cols))
    delta_x = np.full((rows, cols), np.nan)
    sigma_noise = np.full((rows, cols), np.nan)
    out_valid = valid & (labels >= 0)

    work = []
    for idx in range(len(partition.scopes)):
        sel = out_valid & (labels == idx)
        if idx not in stats:
            out_valid &= ~sel
            continue
        if idx not in targets:
            raise ScopeMissingStats(f"scope {partition.scopes[idx].label} has stats but no target", scope=idx)
        if stats[idx].mu.shape[0] != bands:
            raise ShapeMismatch(
                f"stats have {stats[idx].mu.shape[0]} bands, window has {bands}", module="matched_filter"
            )
        work.append((idx, sel))

    def run(item):
        idx, sel = item
        return cmf_scores(data[:, sel].T, stats[idx], targets[idx].t)

    if n_jobs > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, work))
    else:
        results = [run(item) for item in work]
    for (idx, sel), (score, sig) in zip(work, results):
        delta_x[sel] = score
        sigma_noise[sel] = sig

    return EnhancementMap(
        delta_x=delta_x,
        sigma_noise=sigma_noise,
        valid=out_valid,
        variant=VARIANT_OF_KIND[partition.kind],
        scope_id=np.where(out_valid, labels, -1),
        scopes=list(partition.scopes),
        pixel_size_m=getattr(X, "pixel_size_m", (30.0, 30.0)),
    )


def background_sigma(emap: EnhancementMap, partition=None, background: np.ndarray | None = None) -> dict:
    """Robust spread (1.4826 MAD) of the enhancement over background pixels, per scope.

    ``background`` defaults to ``emap.background`` and then to every valid
    pixel. The result is also stored on ``emap.sigma_bg_scope``.
    """
    if background is None:
        background = emap.background if emap.background is not None else emap.valid
    background = background & emap.valid
    n_scopes = len(partition.scopes) if partition is not None else int(emap.scope_id.max()) + 1
    out = {}
    for idx in range(n_scopes):
        vals = emap.delta_x[background & (emap.scope_id == idx)]
        if vals.size == 0:
            if np.any(emap.valid & (emap.scope_id == idx)):
                raise DegenerateBackground(f"no background pixels left in scope {idx}", scope=idx)
            continue
        out[idx] = float(robust_sigma(vals))
    if not out:
        raise DegenerateBackground("enhancement map has no background pixels")
    emap.sigma_bg_scope = out
    return out
