"""Background pixel selection and per-scope mean / covariance estimation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, ndimage
from sklearn.cluster import KMeans

from .errors import ConfigError, DegenerateBackground, FactorizationFailure, ShapeMismatch, TooFewPixels
from .matched_filter import cmf_scores
from .scope import Scope
from .target import TargetSignature, build_target
from .validation import check_cube, check_spectra, robust_sigma

log = logging.getLogger(__name__)

DEFAULT_SHRINKAGE = 0.01
MAX_SHRINKAGE = 0.5


@dataclass(frozen=True, eq=False)
class BackgroundStats:
    """Mean, covariance and Cholesky factor for one scope.

    ``sigma`` is the plain sample covariance. ``factor`` is the lower Cholesky
    factor of the regularised matrix
    ``(1 - shrinkage) * sigma + shrinkage * tr(sigma) / bands * I``.
    """

    mu: np.ndarray
    sigma: np.ndarray
    factor: np.ndarray
    n_pixels: int
    scope: Scope
    shrinkage: float

    @property
    def regularized(self) -> np.ndarray:
        return shrink(self.sigma, self.shrinkage)

    def solve(self, v: np.ndarray) -> np.ndarray:
        """``Sigma_reg^-1 v`` via forward and back substitution."""
        z = linalg.solve_triangular(self.factor, v, lower=True, check_finite=False)
        return linalg.solve_triangular(self.factor, z, lower=True, trans="T", check_finite=False)

    @classmethod
    def from_moments(cls, mu, sigma, *, shrinkage: float = 0.0, n_pixels: int = 0, scope=Scope("scene")):
        """Wrap a known mean and covariance (no estimation)."""
        mu = np.asarray(mu, dtype=np.float64).ravel()
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.shape != (mu.size, mu.size):
            raise ShapeMismatch(f"sigma shape {sigma.shape} does not match {mu.size} bands", module="background")
        factor, gamma = _factorize(sigma, shrinkage)
        return cls(mu, sigma, factor, n_pixels, scope, gamma)


def shrink(sigma: np.ndarray, gamma: float) -> np.ndarray:
    """Trace-preserving shrinkage toward a scaled identity."""
    bands = sigma.shape[0]
    if gamma == 0:
        return sigma.copy()
    return (1.0 - gamma) * sigma + gamma * (np.trace(sigma) / bands) * np.eye(bands)


def _factorize(sigma: np.ndarray, gamma: float) -> tuple[np.ndarray, float]:
    tried = []
    while True:
        reg = shrink(sigma, gamma)
        try:
            factor = linalg.cholesky(reg, lower=True, check_finite=True)
            diag = np.diag(factor)
            if np.all(np.isfinite(factor)) and np.min(diag) > 1e-12 * max(np.max(diag), 1e-300):
                return factor, gamma
        except (linalg.LinAlgError, ValueError):
            pass
        tried.append(gamma)
        if gamma >= MAX_SHRINKAGE:
            raise FactorizationFailure(
                "covariance is not positive definite after shrinkage fallbacks", tried=tried
            )
        gamma = min(MAX_SHRINKAGE, DEFAULT_SHRINKAGE if gamma == 0 else 2.0 * gamma)
        log.debug("cholesky failed, retrying with shrinkage %.4g", gamma)


def estimate_stats(
    pixels,
    scope: Scope = Scope("scene"),
    shrinkage: float = DEFAULT_SHRINKAGE,
    min_pixels: int = 2,
) -> BackgroundStats:
    """Sample mean and covariance (divisor ``n - 1``) with shrinkage and Cholesky factor.

    If the regularised covariance is not positive definite, the shrinkage is
    raised (0 -> 0.01, then doubled) up to 0.5 before giving up.

    Raises
    ------
    DegenerateBackground
        Fewer than ``max(min_pixels, 2)`` spectra.
    FactorizationFailure
        Still not positive definite at shrinkage 0.5.
    """
    pixels = check_spectra(pixels)
    n, bands = pixels.shape
    if not 0 <= shrinkage < 1:
        raise ConfigError(f"shrinkage must lie in [0, 1), got {shrinkage}", module="background")
    if n < max(min_pixels, 2):
        raise DegenerateBackground(
            f"scope {scope.label} has {n} background pixels, needs {max(min_pixels, 2)}",
            scope=scope.label,
            n_pixels=n,
        )
    mu = pixels.mean(axis=0)
    centered = pixels - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = 0.5 * (sigma + sigma.T)
    factor, gamma = _factorize(sigma, shrinkage)
    return BackgroundStats(mu, sigma, factor, n, scope, gamma)


@dataclass(eq=False)
class ScopePartition:
    """Assignment of pixels to background scopes.

    ``labels`` holds per-pixel scope indices for cluster partitions;
    ``column_labels`` holds per-column indices for column blocks. Invalid
    pixels get ``-1``.
    """

    kind: str
    scopes: list
    labels: np.ndarray | None = None
    column_labels: np.ndarray | None = None
    block_width: int | None = None
    centroids: np.ndarray | None = None
    merges: list = field(default_factory=list)

    def pixel_labels(self, shape: tuple[int, int]) -> np.ndarray:
        rows, cols = shape
        if self.kind == "scene":
            return np.zeros(shape, dtype=np.int64)
        if self.kind == "column_block":
            if self.column_labels.shape[0] != cols:
                raise ShapeMismatch(f"partition has {self.column_labels.shape[0]} columns, map has {cols}")
            return np.broadcast_to(self.column_labels, shape).copy()
        return self.labels.copy()

    def assign(self, data: np.ndarray, valid: np.ndarray) -> np.ndarray:
        """Labels for a new cube: nearest centroid for clusters, geometry otherwise."""
        if self.kind != "cluster":
            return np.where(valid, self.pixel_labels(valid.shape), -1)
        labels = np.full(valid.shape, -1, dtype=np.int64)
        spectra = data[:, valid].T
        d2 = ((spectra[:, None, :] - self.centroids[None]) ** 2).sum(axis=2)
        labels[valid] = np.argmin(d2, axis=1)
        return labels


def scene_partition() -> ScopePartition:
    return ScopePartition("scene", [Scope("scene")])


def column_block_partition(cols: int, block_width: int) -> ScopePartition:
    """Contiguous blocks of ``block_width`` columns; the last may be narrower."""
    if not 1 <= block_width <= cols:
        raise ShapeMismatch(f"block_width must be in [1, {cols}], got {block_width}", module="background")
    n_blocks = math.ceil(cols / block_width)
    column_labels = np.arange(cols) // block_width
    scopes = [
        Scope("column_block", i, i * block_width, min(cols, (i + 1) * block_width) - 1) for i in range(n_blocks)
    ]
    return ScopePartition("column_block", scopes, column_labels=column_labels, block_width=block_width)


def merge_small_blocks(partition: ScopePartition, valid: np.ndarray, min_pixels: int) -> ScopePartition:
    """Merge column blocks with fewer than ``min_pixels`` valid pixels into a neighbour.

    A short block joins the block to its right (the last block joins its left
    neighbour), repeated until every block is large enough or one block is
    left. Merges are recorded on the returned partition.
    """
    if partition.kind != "column_block":
        return partition
    counts = valid.sum(axis=0)
    bounds = [(s.first_col, s.last_col) for s in partition.scopes]
    merges = []
    while len(bounds) > 1:
        sizes = [int(counts[a : b + 1].sum()) for a, b in bounds]
        small = [i for i, n in enumerate(sizes) if n < min_pixels]
        if not small:
            break
        i = small[0]
        j = i + 1 if i + 1 < len(bounds) else i - 1
        lo, hi = min(i, j), max(i, j)
        merged = (bounds[lo][0], bounds[hi][1])
        merges.append({"merged": [list(bounds[lo]), list(bounds[hi])], "into": list(merged)})
        bounds[lo : hi + 1] = [merged]
    if not merges:
        return partition
    column_labels = np.empty(valid.shape[1], dtype=np.int64)
    scopes = []
    for i, (a, b) in enumerate(bounds):
        column_labels[a : b + 1] = i
        scopes.append(Scope("column_block", i, a, b))
    log.info("merged %d undersized column blocks", len(merges))
    return ScopePartition(
        "column_block",
        scopes,
        column_labels=column_labels,
        block_width=partition.block_width,
        merges=partition.merges + merges,
    )


def kmeans_partition(X, K: int, seed: int = 0) -> ScopePartition:
    """Lloyd k-means (k-means++ seeding) over the valid pixel spectra.

    Clusters are renumbered by the row-major position of their first pixel, so
    the labelling is reproducible and independent of the solver's internal
    order.
    """
    data, valid = check_cube(X)
    n_valid = int(valid.sum())
    if K < 1 or n_valid < K:
        raise TooFewPixels(f"{n_valid} valid pixels cannot form {K} clusters", k=K, n_valid=n_valid)
    spectra = data[:, valid].T
    km = KMeans(n_clusters=K, init="k-means++", n_init=1, max_iter=100, tol=1e-4, random_state=seed, algorithm="lloyd")
    raw = km.fit_predict(spectra)
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first)
    remap = np.empty(K, dtype=np.int64)
    remap[np.unique(raw)[order]] = np.arange(order.size)
    labels = np.full(valid.shape, -1, dtype=np.int64)
    labels[valid] = remap[raw]
    centroids = np.stack([spectra[labels[valid] == i].mean(axis=0) for i in range(order.size)])
    scopes = [Scope("cluster", i) for i in range(order.size)]
    return ScopePartition("cluster", scopes, labels=labels, centroids=centroids)


@dataclass(eq=False)
class BackgroundSelection:
    """Outcome of :func:`select_background`.

    ``mask`` excludes the pixels of dropped scopes; ``raw_mask`` is the last
    gated mask before that, used to decide how to widen dropped column blocks.
    """

    mask: np.ndarray
    stats: dict
    targets: dict
    iterations: int
    converged: bool
    dropped: list
    raw_mask: np.ndarray | None = None


def spectral_angle(pixels: np.ndarray, reference: np.ndarray) -> np.ndarray:
    num = pixels @ reference
    den = np.linalg.norm(pixels, axis=1) * np.linalg.norm(reference)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(den > 0, num / den, 1.0)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def _fit_scopes(data, mask, labels, partition, k_band, shrinkage, min_pixels, dropped):
    stats, targets = {}, {}
    for idx, scope in enumerate(partition.scopes):
        if idx in dropped:
            continue
        sel = mask & (labels == idx)
        try:
            st = estimate_stats(data[:, sel].T, scope, shrinkage, min_pixels)
        except DegenerateBackground as exc:
            log.info("dropping scope %s: %s", scope.label, exc.message)
            dropped[idx] = exc.message
            continue
        stats[idx] = st
        targets[idx] = build_target(np.clip(st.mu, 0.0, None), k_band, scope)
    if not stats:
        raise DegenerateBackground("no scope retained enough background pixels", dropped=list(dropped.values()))
    return stats, targets


def _disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def gate_pixels(data, valid, labels, reference_mask, stats, targets, kappa, theta_max, buffer_px=0):
    """One pass of the background test under fixed statistics.

    A valid pixel stays background unless its matched-filter score exceeds
    ``median + kappa * robust_sigma`` of the scope's reference-pixel scores, or
    its spectral angle to the scope mean exceeds ``theta_max``. With
    ``buffer_px > 0`` pixels within that radius of a score outlier are
    excluded as well, which keeps faint plume margins out of the statistics.
    """
    keep = np.zeros_like(valid)
    hot = np.zeros_like(valid)
    for idx, st in stats.items():
        sel = valid & (labels == idx)
        spectra = data[:, sel].T
        score, _ = cmf_scores(spectra, st, targets[idx].t)
        ref = score[reference_mask[sel]]
        if ref.size == 0:
            ref = score
        limit = np.median(ref) + kappa * robust_sigma(ref)
        angle = spectral_angle(spectra, st.mu)
        keep[sel] = (score <= limit) & (angle <= theta_max)
        hot[sel] = score > limit
    if buffer_px > 0 and hot.any():
        keep &= ~ndimage.binary_dilation(hot, structure=_disk(int(buffer_px)))
    return keep


def select_background(
    X,
    k_band,
    partition: ScopePartition,
    *,
    kappa: float = 3.0,
    theta_max: float = 0.15,
    max_iter: int = 5,
    shrinkage: float = DEFAULT_SHRINKAGE,
    min_pixels: int = 2,
    buffer_px: int = 0,
) -> BackgroundSelection:
    """Iteratively exclude plume candidates and spectrally foreign pixels.

    Each iteration estimates per-scope statistics on the current mask, scores
    every valid pixel with the matched filter and re-applies
    :func:`gate_pixels`. Stops when the mask no longer changes or after
    ``max_iter`` passes; the returned statistics always belong to the
    returned mask.
    """
    data, valid = check_cube(X)
    k_band = np.asarray(k_band, dtype=np.float64)
    labels = np.where(valid, partition.pixel_labels(valid.shape), -1)
    mask = valid.copy()
    dropped: dict = {}
    converged = False
    iterations = 0
    stats, targets = _fit_scopes(data, mask, labels, partition, k_band, shrinkage, min_pixels, dropped)
    for iterations in range(1, max_iter + 1):
        new_mask = gate_pixels(data, valid, labels, mask, stats, targets, kappa, theta_max, buffer_px)
        if np.array_equal(new_mask, mask):
            converged = True
            break
        mask = new_mask
        stats, targets = _fit_scopes(data, mask, labels, partition, k_band, shrinkage, min_pixels, dropped)
    raw_mask = mask.copy()
    for idx in dropped:
        mask &= labels != idx
    return BackgroundSelection(mask, stats, targets, iterations, converged, sorted(dropped), raw_mask)
