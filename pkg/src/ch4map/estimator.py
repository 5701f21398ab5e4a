"""scikit-learn style front end for the clutter matched filters."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .background import (
    ScopePartition,
    column_block_partition,
    gate_pixels,
    kmeans_partition,
    merge_small_blocks,
    scene_partition,
    select_background,
)
from .cube import RadianceCube
from .errors import ConfigError, ShapeMismatch
from .matched_filter import EnhancementMap, apply_cmf, background_sigma
from .target import UnitAbsorptionSpectrum, builtin_absorption, resample_absorption
from .validation import check_cube

VARIANTS = ("cmf", "ctmf", "cw-cmf")


class ClutterMatchedFilter(TransformerMixin, BaseEstimator):
    """Methane enhancement retrieval with scene, cluster or column-block statistics.

    Parameters
    ----------
    variant : {"cmf", "ctmf", "cw-cmf"}
        Scope of the background statistics: whole scene, k-means clusters or
        blocks of detector columns.
    absorption : UnitAbsorptionSpectrum, array-like or None
        Either a high-resolution unit absorption spectrum (resampled to the
        cube's bands, so ``X`` must then be a :class:`RadianceCube`) or an
        already band-averaged ``k_band`` vector. ``None`` uses the bundled
        synthetic spectrum.
    block_width : int
        Columns per block for ``cw-cmf``.
    n_clusters, kmeans_seed : int
        k-means settings for ``ctmf``.
    shrinkage : float
        Covariance shrinkage toward a scaled identity, in [0, 1).
    kappa, theta_max, max_iter
        Background selection: score clip in robust sigmas, spectral-angle
        limit in radians, and iteration cap.
    buffer_px : int
        Radius of the exclusion halo drawn around score outliers (0 = none).
    min_pixels_factor : float
        A scope needs at least ``min_pixels_factor * bands`` background
        pixels. Undersized column blocks are merged with a neighbour;
        undersized clusters are dropped and their pixels left invalid.
    n_jobs : int
        Threads used over scopes. Results do not depend on it.

    Attributes
    ----------
    k_band_ : ndarray of shape (bands,)
    partition_ : ScopePartition
    background_mask_ : ndarray of shape (rows, cols)
    stats_ : dict of BackgroundStats keyed by scope index
    targets_ : dict of TargetSignature keyed by scope index
    n_iter_ : int
    converged_ : bool
    """

    def __init__(
        self,
        variant="cw-cmf",
        absorption=None,
        block_width=1,
        n_clusters=4,
        kmeans_seed=0,
        shrinkage=0.01,
        kappa=3.0,
        theta_max=0.15,
        max_iter=5,
        buffer_px=0,
        min_pixels_factor=10.0,
        n_jobs=1,
    ):
        self.variant = variant
        self.absorption = absorption
        self.block_width = block_width
        self.n_clusters = n_clusters
        self.kmeans_seed = kmeans_seed
        self.shrinkage = shrinkage
        self.kappa = kappa
        self.theta_max = theta_max
        self.max_iter = max_iter
        self.buffer_px = buffer_px
        self.min_pixels_factor = min_pixels_factor
        self.n_jobs = n_jobs

    def _resolve_k_band(self, X, bands: int) -> np.ndarray:
        absorption = builtin_absorption() if self.absorption is None else self.absorption
        if isinstance(absorption, UnitAbsorptionSpectrum):
            if not isinstance(X, RadianceCube):
                raise ShapeMismatch(
                    "resampling an absorption spectrum needs band centres; pass a RadianceCube "
                    "or a band-averaged k_band vector",
                    module="estimator",
                )
            return resample_absorption(absorption, X.wavelengths_nm, X.fwhm_nm)
        k_band = np.asarray(absorption, dtype=np.float64).ravel()
        if k_band.shape[0] != bands:
            raise ShapeMismatch(f"k_band has {k_band.shape[0]} entries, cube has {bands} bands", module="estimator")
        return k_band

    def _partition(self, X, data, valid, min_pixels) -> ScopePartition:
        if self.variant == "cmf":
            return scene_partition()
        if self.variant == "ctmf":
            return kmeans_partition(np.where(valid, data, np.nan), self.n_clusters, self.kmeans_seed)
        part = column_block_partition(data.shape[2], self.block_width)
        return merge_small_blocks(part, valid, min_pixels)

    def fit(self, X, y=None):
        """Select background pixels and estimate per-scope statistics and targets."""
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        data, valid = check_cube(X)
        bands = data.shape[0]
        self.k_band_ = self._resolve_k_band(X, bands)
        min_pixels = int(np.ceil(self.min_pixels_factor * bands))
        self.partition_ = self._partition(X, data, valid, min_pixels)
        while True:
            sel = select_background(
                data,
                self.k_band_,
                self.partition_,
                kappa=self.kappa,
                theta_max=self.theta_max,
                max_iter=self.max_iter,
                shrinkage=self.shrinkage,
                min_pixels=min_pixels,
                buffer_px=self.buffer_px,
            )
            if not (sel.dropped and self.partition_.kind == "column_block" and len(self.partition_.scopes) > 1):
                break
            # blocks starved by the selection are widened and the selection rerun
            self.partition_ = merge_small_blocks(self.partition_, sel.raw_mask, min_pixels)
        self.background_mask_ = sel.mask
        self.stats_ = sel.stats
        self.targets_ = sel.targets
        self.n_iter_ = sel.iterations
        self.converged_ = sel.converged
        self.dropped_scopes_ = sel.dropped
        self.n_bands_in_ = bands
        self.shape_in_ = data.shape
        return self

    def _retrieve(self, X, partition, background) -> EnhancementMap:
        emap = apply_cmf(X, partition, self.stats_, self.targets_, n_jobs=self.n_jobs)
        if background is None:
            data, _ = check_cube(X)
            labels = np.where(emap.valid, emap.scope_id, -1)
            background = gate_pixels(
                data, emap.valid, labels, emap.valid, self.stats_, self.targets_, self.kappa, self.theta_max,
                self.buffer_px,
            )
        emap.background = background & emap.valid
        background_sigma(emap, partition)
        emap.metadata = self.summary()
        return emap

    def transform(self, X) -> EnhancementMap:
        """Retrieve the enhancement map of ``X`` with the fitted statistics.

        Background pixels of ``X`` (used for ``sigma_bg``) are found with one
        pass of the fitted selection rule.
        """
        check_is_fitted(self, "stats_")
        data, valid = check_cube(X)
        if data.shape[0] != self.n_bands_in_:
            raise ShapeMismatch(f"fitted on {self.n_bands_in_} bands, got {data.shape[0]}", module="estimator")
        partition = self.partition_
        if partition.kind == "cluster":
            partition = ScopePartition(
                "cluster", partition.scopes, labels=partition.assign(data, valid), centroids=partition.centroids
            )
        return self._retrieve(X, partition, None)

    def fit_transform(self, X, y=None, **fit_params) -> EnhancementMap:
        """Fit on ``X`` and retrieve it, reusing the fitted background mask."""
        self.fit(X, y)
        return self._retrieve(X, self.partition_, self.background_mask_)

    def summary(self) -> dict:
        check_is_fitted(self, "stats_")
        part = self.partition_
        return {
            "variant": {"scene": "CMF", "cluster": "CTMF", "column_block": "CW-CMF"}[part.kind],
            "n_scopes": len(part.scopes),
            "n_scopes_with_stats": len(self.stats_),
            "scopes": [s.label for s in part.scopes],
            "dropped_scopes": [part.scopes[i].label for i in self.dropped_scopes_],
            "block_merges": part.merges,
            "background_pixels": int(self.background_mask_.sum()),
            "selection_iterations": int(self.n_iter_),
            "selection_converged": bool(self.converged_),
            "shrinkage_applied": {part.scopes[i].label: st.shrinkage for i, st in sorted(self.stats_.items())},
            "params": {k: v for k, v in self.get_params().items() if k not in ("absorption", "n_jobs")},
        }
