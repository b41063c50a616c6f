"""Latent-spectrum analysis: dimension estimation, trailing-variance metric,
manifold charts, and the truncated encode/decode maps.

The reported spectrum is the eigenvalue spectrum of the d_z x d_z latent
covariance (monotone-equivalent to singular values of the centered latent
matrix for dimension counting), normalized by its leading value.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network as nw
from .errors import AmbiguousSpectrumError, DegenerateLatentError, InvalidInputError
from .linalg import covariance, sym_eig_desc

__all__ = [
    "SpectrumReport",
    "ManifoldChart",
    "estimate_dim",
    "spectrum_report",
    "latent_spectrum",
    "trailing_fraction",
    "build_chart",
    "encode_h",
    "decode_h",
    "write_spectrum_csv",
    "write_spectrum_json",
]

DIM_THRESHOLD = 1e-6
MIN_GAP_RATIO = 1e3


@dataclass
class SpectrumReport:
    """Ordered normalized spectrum with a dimension estimate.

    ``est_dim`` counts normalized values >= threshold; ``gap_index`` is the
    position of the largest consecutive ratio.  The estimate is flagged
    ambiguous when the two disagree or the best gap is shallow.  A
    ``degenerate`` report (all-zero spectrum) carries est_dim 0.
    """

    sigmas: np.ndarray
    raw_sigmas: np.ndarray
    est_dim: int
    gap_index: int
    gap_ratio: float
    ambiguous: bool
    threshold: float = DIM_THRESHOLD
    min_gap: float = MIN_GAP_RATIO
    degenerate: bool = False


def estimate_dim(
    sigmas, threshold: float = DIM_THRESHOLD, min_gap: float = MIN_GAP_RATIO
) -> tuple[int, int, float, bool]:
    """Count significant values and locate the dominant spectral gap.

    ``sigmas`` is a descending spectrum normalized so sigmas[0] == 1.
    Returns (est_dim, gap_index, gap_ratio, ambiguous); gap_index i means
    the largest drop sits between sigma_i and sigma_{i+1} (1-based).
    """
    s = np.asarray(sigmas, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise InvalidInputError("spectrum must be a non-empty 1-D array")
    est_dim = int(np.sum(s >= threshold))
    if s.size == 1:
        return est_dim, 1, float("inf"), True
    tiny = np.finfo(np.float64).tiny
    ratios = s[:-1] / np.maximum(s[1:], tiny)
    ratios = np.where(s[:-1] <= 0.0, 1.0, ratios)
    gap_index = int(np.argmax(ratios)) + 1
    gap_ratio = float(ratios[gap_index - 1])
    ambiguous = (gap_index != est_dim) or (gap_ratio < min_gap)
    return est_dim, gap_index, gap_ratio, ambiguous


def spectrum_report(
    eigenvalues, threshold: float = DIM_THRESHOLD, min_gap: float = MIN_GAP_RATIO
) -> SpectrumReport:
    """Build a report from a raw (descending, >= 0) covariance spectrum."""
    raw = np.asarray(eigenvalues, dtype=np.float64)
    if raw[0] <= 0.0:
        return SpectrumReport(
            sigmas=np.zeros_like(raw),
            raw_sigmas=raw,
            est_dim=0,
            gap_index=0,
            gap_ratio=0.0,
            ambiguous=True,
            threshold=threshold,
            min_gap=min_gap,
            degenerate=True,
        )
    s = raw / raw[0]
    est_dim, gap_index, gap_ratio, ambiguous = estimate_dim(s, threshold, min_gap)
    return SpectrumReport(
        sigmas=s,
        raw_sigmas=raw,
        est_dim=est_dim,
        gap_index=gap_index,
        gap_ratio=gap_ratio,
        ambiguous=ambiguous,
        threshold=threshold,
        min_gap=min_gap,
    )


def latent_spectrum(
    model: nw.ModelParams,
    data,
    threshold: float = DIM_THRESHOLD,
    min_gap: float = MIN_GAP_RATIO,
) -> SpectrumReport:
    """Encode all data, eigendecompose the latent covariance, estimate d_m."""
    x = np.asarray(getattr(data, "data", data), dtype=np.float64)
    z = nw.encode(model, x)
    w, _ = sym_eig_desc(covariance(z))
    if w[0] <= 0.0:
        raise DegenerateLatentError("latent covariance has zero leading eigenvalue")
    report = spectrum_report(w, threshold, min_gap)
    return report


def trailing_fraction(raw_sigmas, d_m: int) -> float:
    """Fraction of total variance carried by spectrum indices > d_m."""
    s = np.asarray(raw_sigmas, dtype=np.float64)
    if not 0 <= d_m < s.size:
        raise InvalidInputError(f"d_m={d_m} out of range for spectrum of length {s.size}")
    total = float(np.sum(s))
    if total == 0.0:
        return 0.0
    return float(np.sum(s[d_m:]) / total)


@dataclass
class ManifoldChart:
    """Truncated singular basis of the latent covariance plus the model.

    ``u_hat`` holds the first ``d_m`` columns of ``u_full``; manifold
    coordinates are h = u_hat^T z and decoding goes through u_hat h.
    """

    u_full: np.ndarray
    u_hat: np.ndarray
    d_m: int
    model: nw.ModelParams
    report: SpectrumReport | None = field(default=None, repr=False)


def build_chart(
    model: nw.ModelParams,
    data,
    est_dim: int | None = None,
    threshold: float = DIM_THRESHOLD,
    min_gap: float = MIN_GAP_RATIO,
) -> ManifoldChart:
    """Chart from the latent covariance eigenbasis.

    Refuses an ambiguous spectrum unless the caller overrides with an
    explicit ``est_dim``.
    """
    x = np.asarray(getattr(data, "data", data), dtype=np.float64)
    z = nw.encode(model, x)
    w, vecs = sym_eig_desc(covariance(z))
    if w[0] <= 0.0:
        raise DegenerateLatentError("latent covariance has zero leading eigenvalue")
    report = spectrum_report(w, threshold, min_gap)
    if est_dim is None:
        if report.ambiguous:
            raise AmbiguousSpectrumError(
                f"spectrum is ambiguous (est_dim={report.est_dim}, "
                f"gap_index={report.gap_index}, gap_ratio={report.gap_ratio:.3g}); "
                "pass est_dim explicitly to override"
            )
        est_dim = report.est_dim
    if not 1 <= est_dim <= model.arch.d_z:
        raise InvalidInputError(f"est_dim={est_dim} outside [1, d_z]")
    return ManifoldChart(
        u_full=vecs, u_hat=vecs[:, :est_dim].copy(), d_m=int(est_dim), model=model, report=report
    )


def encode_h(chart: ManifoldChart, u) -> np.ndarray:
    """Manifold coordinates h = u_hat^T W(E(u)) (rows are samples)."""
    z = nw.encode(chart.model, np.atleast_2d(np.asarray(u, dtype=np.float64)))
    return z @ chart.u_hat


def decode_h(chart: ManifoldChart, h) -> np.ndarray:
    """Ambient reconstruction D(u_hat h)."""
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if h.shape[1] != chart.d_m:
        raise InvalidInputError(f"h has width {h.shape[1]}, chart d_m={chart.d_m}")
    return nw.decode(chart.model, h @ chart.u_hat.T)


def write_spectrum_csv(report: SpectrumReport, path) -> None:
    lines = ["index,sigma_normalized,sigma_raw"]
    for i, (s, r) in enumerate(zip(report.sigmas, report.raw_sigmas), start=1):
        lines.append(f"{i},{s!r},{r!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_spectrum_json(report: SpectrumReport, path, extra: dict | None = None) -> None:
    d_m = report.est_dim if report.est_dim >= 1 else 1
    payload = {
        "est_dim": report.est_dim,
        "gap_index": report.gap_index,
        "gap_ratio": report.gap_ratio,
        "sigma_plus": trailing_fraction(report.raw_sigmas, min(d_m, report.raw_sigmas.size - 1)),
        "ambiguous": report.ambiguous,
        "degenerate": report.degenerate,
        "threshold": report.threshold,
        "min_gap": report.min_gap,
        "d_z_saturated": report.est_dim >= report.sigmas.size,
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))
