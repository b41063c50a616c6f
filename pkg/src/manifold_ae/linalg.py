"""Dense linear algebra helpers used throughout the package.

Matrices are plain 2-D float64 numpy arrays, row-major.  Everything here is
a pure function; random streams are single-owner `numpy.random.Generator`
instances created by :func:`seeded_rng`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamplesError, InvalidInputError

__all__ = [
    "SvdResult",
    "as_matrix",
    "covariance",
    "svd",
    "sym_eig_desc",
    "seeded_rng",
    "random_orthonormal",
]


def as_matrix(a, name: str = "input") -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(s) @ vt`` with s descending and >= 0."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def covariance(z) -> np.ndarray:
    """Mean-centered sample covariance (1/(N-1)) (Z-mean)^T (Z-mean).

    Requires N >= 2 rows; the result is symmetric positive semidefinite.
    """
    z = as_matrix(z, "Z")
    n = z.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"covariance needs N >= 2 rows, got {n}")
    centered = z - z.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    # symmetrize away roundoff so eigh sees an exactly symmetric matrix
    return (cov + cov.T) / 2.0


def svd(a) -> SvdResult:
    """Deterministic thin SVD of a finite matrix."""
    m = as_matrix(a, "A")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return SvdResult(u=u, s=s, vt=vt)


def sym_eig_desc(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and matching eigenvectors of a symmetric matrix.

    Negative eigenvalues from roundoff on PSD inputs are clamped to zero.
    """
    m = as_matrix(a, "A")
    w, v = np.linalg.eigh(m)
    order = np.argsort(w)[::-1]
    w = np.maximum(w[order], 0.0)
    return w, v[:, order]


def seeded_rng(seed: int) -> np.random.Generator:
    """A reproducible random stream. Identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def random_orthonormal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Random matrix with orthonormal columns (QR of a Gaussian draw)."""
    if cols > rows:
        raise InvalidInputError(f"need cols <= rows, got {rows}x{cols}")
    g = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(g)
    # fix signs so the basis is a deterministic function of g
    return q * np.sign(np.diag(r))
