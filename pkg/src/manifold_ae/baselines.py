"""Classical dimension estimators: PCA spectrum, multiscale local SVD, and
the Levina-Bickel maximum-likelihood estimator.

Neighbor searches are exact brute-force distances; datasets larger than
``subsample`` points are deterministically subsampled first.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .analysis import DIM_THRESHOLD, MIN_GAP_RATIO, SpectrumReport, spectrum_report
from .errors import InsufficientSamplesError, InvalidConfigError, NoUsableScaleError
from .linalg import covariance, sym_eig_desc

__all__ = ["MsvdReport", "LbReport", "pca_spectrum", "msvd", "levina_bickel"]

log = logging.getLogger(__name__)

MAX_BRUTE_FORCE_POINTS = 20000


def _raw(data) -> np.ndarray:
    return np.asarray(getattr(data, "data", data), dtype=np.float64)


def _maybe_subsample(x: np.ndarray, rng, limit: int = MAX_BRUTE_FORCE_POINTS) -> np.ndarray:
    if x.shape[0] <= limit:
        return x
    if rng is None:
        raise InvalidConfigError(f"dataset has {x.shape[0]} > {limit} points; pass rng to subsample")
    idx = np.sort(rng.choice(x.shape[0], size=limit, replace=False))
    return x[idx]


def pca_spectrum(data, threshold: float = DIM_THRESHOLD, min_gap: float = MIN_GAP_RATIO) -> SpectrumReport:
    """Normalized eigen-spectrum of the ambient covariance."""
    x = _raw(data)
    if x.shape[0] < 2:
        raise InsufficientSamplesError("PCA needs at least 2 samples")
    w, _ = sym_eig_desc(covariance(x))
    return spectrum_report(w, threshold, min_gap)


@dataclass
class MsvdReport:
    """Ensemble-averaged local singular values per neighborhood radius."""

    radii: np.ndarray
    mean_spectra: np.ndarray
    n_centers: int
    skipped_radii: list = field(default_factory=list)

    def gap_candidates(self, min_ratio: float = 3.0) -> list[int]:
        """Indices i where the spectrum at the largest radius drops by
        >= min_ratio between S_i and S_{i+1} (1-based)."""
        s = self.mean_spectra[-1]
        tiny = np.finfo(np.float64).tiny
        ratios = s[:-1] / np.maximum(s[1:], tiny)
        return [int(i) + 1 for i in np.nonzero(ratios >= min_ratio)[0]]


def _pairwise_percentile_radii(x: np.ndarray, rng, n_radii: int) -> np.ndarray:
    """Log-spaced radii between the 1st and 50th percentile of pairwise
    distances, estimated on a bounded subsample."""
    probe = x if x.shape[0] <= 2000 else x[np.sort(rng.choice(x.shape[0], 2000, replace=False))]
    sq = np.einsum("ij,ij->i", probe, probe)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (probe @ probe.T)
    d = np.sqrt(np.maximum(d2[np.triu_indices(probe.shape[0], k=1)], 0.0))
    lo, hi = np.percentile(d[d > 0], [1, 50])
    return np.geomspace(lo, hi, n_radii)


def msvd(
    data,
    radii=None,
    n_centers: int = 500,
    rng=None,
    d_min_neighbors: int | None = None,
    n_radii: int = 20,
) -> MsvdReport:
    """Ensemble average of local singular-value spectra vs neighborhood radius.

    For each center and radius, the neighbors within the radius are locally
    mean-centered and their singular values (scaled by 1/sqrt(count), i.e.
    local-PCA convention) are zero-padded to d_u and averaged over the
    centers that have at least ``d_min_neighbors`` neighbors.  Radii where
    fewer than 10% of centers qualify are skipped.
    """
    x = _raw(data)
    x = _maybe_subsample(x, rng)
    n, d_u = x.shape
    if d_min_neighbors is None:
        d_min_neighbors = d_u + 1
    if radii is None:
        radii = _pairwise_percentile_radii(x, rng, n_radii)
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(np.diff(radii) <= 0):
        raise InvalidConfigError("radii must be strictly ascending")

    centers = x[rng.choice(n, size=min(n_centers, n), replace=False)]
    sq = np.einsum("ij,ij->i", x, x)
    kept_radii, kept_spectra, skipped = [], [], []

    dists = np.empty((centers.shape[0], n))
    for c_i, c in enumerate(centers):
        d2 = sq - 2.0 * (x @ c) + c @ c
        dists[c_i] = np.sqrt(np.maximum(d2, 0.0))

    for r in radii:
        spectra = []
        for c_i in range(centers.shape[0]):
            nb = x[dists[c_i] <= r]
            if nb.shape[0] < d_min_neighbors:
                continue
            nb = nb - nb.mean(axis=0)
            # singular values of nb/sqrt(m) via the d_u x d_u gram matrix
            w, _ = sym_eig_desc(nb.T @ nb / nb.shape[0])
            spectra.append(np.sqrt(w))
        if len(spectra) < max(1, int(0.1 * centers.shape[0])):
            skipped.append(float(r))
            continue
        kept_radii.append(float(r))
        kept_spectra.append(np.mean(spectra, axis=0))
    if not kept_radii:
        raise NoUsableScaleError(
            "every radius was skipped: no scale had enough neighbors per center"
        )
    return MsvdReport(
        radii=np.asarray(kept_radii),
        mean_spectra=np.asarray(kept_spectra),
        n_centers=centers.shape[0],
        skipped_radii=skipped,
    )


@dataclass
class LbReport:
    """Per-point maximum-likelihood dimension estimates and their mean."""

    k: int
    per_point: np.ndarray
    estimate: float
    n_skipped: int = 0


def levina_bickel(data, k: int = 10, rng=None) -> LbReport:
    """Mean of m_hat_k(x) = [ (1/(k-1)) sum_j log(T_k(x)/T_j(x)) ]^-1.

    T_j is the distance from x to its j-th nearest neighbor (self excluded).
    Points with duplicate coordinates (T_j = 0) are skipped with a warning.
    """
    if k < 3:
        raise InvalidConfigError("k must be >= 3")
    x = _raw(data)
    x = _maybe_subsample(x, rng)
    n = x.shape[0]
    if n <= k:
        raise InsufficientSamplesError(f"need N > k, got N={n}, k={k}")

    sq = np.einsum("ij,ij->i", x, x)
    estimates = []
    n_skipped = 0
    chunk = max(1, int(2**22 // max(n, 1)))
    for start in range(0, n, chunk):
        block = x[start : start + chunk]
        d2 = sq[start : start + chunk, None] + sq[None, :] - 2.0 * (block @ x.T)
        np.maximum(d2, 0.0, out=d2)
        part = np.partition(d2, k, axis=1)[:, : k + 1]
        part = np.sort(part, axis=1)[:, 1:]  # drop self-distance
        t = np.sqrt(part)
        bad = t[:, 0] <= 0.0
        n_skipped += int(bad.sum())
        good = t[~bad]
        if good.shape[0]:
            logs = np.log(good[:, -1:] / good[:, :-1])
            estimates.append((k - 1) / logs.sum(axis=1))
    if n_skipped:
        log.warning("levina_bickel: skipped %d points with duplicate coordinates", n_skipped)
    if not estimates:
        raise InsufficientSamplesError("all points were duplicates")
    per_point = np.concatenate(estimates)
    return LbReport(k=k, per_point=per_point, estimate=float(per_point.mean()), n_skipped=n_skipped)
