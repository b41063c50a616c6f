"""Dataset generators: embedded noise, Lorenz '63 (+ spiral embedding),
quasiperiodic 2-torus with k-means patches, Kuramoto-Sivashinsky, and the
lambda-omega reaction-diffusion system.

Every generator is deterministic given its parameters and random stream.
Snapshot sets persist as a JSON sidecar plus a raw little-endian float64
binary (``<name>.meta.json`` / ``<name>.f64``).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    IntegrationDivergedError,
    InvalidConfigError,
    InvalidInputError,
)
from .linalg import random_orthonormal

__all__ = [
    "SnapshotSet",
    "PatchAssignment",
    "save_snapshots",
    "load_snapshots",
    "gen_embedded_noise",
    "gen_lorenz",
    "embed_archimedean",
    "gen_torus",
    "kmeans_patches",
    "kse_solve",
    "lambda_omega_solve",
]

log = logging.getLogger(__name__)


@dataclass
class SnapshotSet:
    """N x d_u matrix of ambient states plus generation metadata.

    ``dt_sample`` is the time between rows (0 for i.i.d. data); trajectory
    rows are time-ordered.
    """

    data: np.ndarray
    system: str
    params: dict = field(default_factory=dict)
    dt_sample: float = 0.0
    transient_discarded: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise InvalidInputError(f"snapshot data must be (N>=1, d_u), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError("snapshot data contains non-finite entries")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d_u(self) -> int:
        return self.data.shape[1]


def save_snapshots(snap: SnapshotSet, stem) -> None:
    """Write ``<stem>.meta.json`` and ``<stem>.f64`` (row-major LE float64)."""
    stem = Path(stem)
    meta = {
        "system": snap.system,
        "params": snap.params,
        "dt_sample": snap.dt_sample,
        "transient_discarded": snap.transient_discarded,
        "N": snap.n,
        "d_u": snap.d_u,
        "seed": snap.seed,
    }
    stem.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    snap.data.astype("<f8").tofile(stem.with_suffix(".f64"))


def load_snapshots(stem) -> SnapshotSet:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".meta.json").read_text())
    raw = np.fromfile(stem.with_suffix(".f64"), dtype="<f8")
    n, d_u = int(meta["N"]), int(meta["d_u"])
    if raw.size != n * d_u:
        raise InvalidInputError(
            f"{stem}.f64 holds {raw.size} values, expected {n}x{d_u}={n * d_u}"
        )
    return SnapshotSet(
        data=raw.reshape(n, d_u),
        system=meta["system"],
        params=meta.get("params", {}),
        dt_sample=float(meta.get("dt_sample", 0.0)),
        transient_discarded=float(meta.get("transient_discarded", 0.0)),
        seed=meta.get("seed"),
    )


def gen_embedded_noise(d_m: int = 5, d_u: int = 20, n_samples: int = 10000, rng=None) -> SnapshotSet:
    """i.i.d. N(0, I_{d_m}) noise pushed through a random orthonormal frame."""
    if d_m > d_u:
        raise InvalidConfigError(f"d_m={d_m} must not exceed d_u={d_u}")
    basis = random_orthonormal(d_u, d_m, rng)
    g = rng.standard_normal((n_samples, d_m))
    return SnapshotSet(
        data=g @ basis.T,
        system="embedded_noise",
        params={"d_m": d_m, "d_u": d_u},
        dt_sample=0.0,
    )


def _lorenz_rk4(state, dt, sigma, rho, beta):
    x, y, z = state

    def f(x, y, z):
        return sigma * (y - x), x * (rho - z) - y, x * y - beta * z

    k1 = f(x, y, z)
    k2 = f(x + 0.5 * dt * k1[0], y + 0.5 * dt * k1[1], z + 0.5 * dt * k1[2])
    k3 = f(x + 0.5 * dt * k2[0], y + 0.5 * dt * k2[1], z + 0.5 * dt * k2[2])
    k4 = f(x + dt * k3[0], y + dt * k3[1], z + dt * k3[2])
    return (
        x + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        y + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        z + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
    )


def gen_lorenz(
    sigma: float = 10.0,
    rho: float = 28.0,
    beta: float = 8.0 / 3.0,
    dt_sample: float = 0.05,
    n_samples: int = 40000,
    transient: float = 100.0,
    rng=None,
    dt_int: float = 1e-3,
    x0=None,
) -> SnapshotSet:
    """RK4 trajectory of the Lorenz '63 system sampled every ``dt_sample``."""
    if dt_int <= 0 or dt_sample <= 0:
        raise InvalidConfigError("dt_int and dt_sample must be positive")
    stride = int(round(dt_sample / dt_int))
    if abs(stride * dt_int - dt_sample) > 1e-9 * dt_sample or stride < 1:
        raise InvalidConfigError("dt_sample must be an integer multiple of dt_int")

    if x0 is None:
        state = tuple(rng.standard_normal(3))
    else:
        state = (float(x0[0]), float(x0[1]), float(x0[2]))

    n_transient = int(round(transient / dt_int))
    for _ in range(n_transient):
        state = _lorenz_rk4(state, dt_int, sigma, rho, beta)
    out = np.empty((n_samples, 3))
    out[0] = state
    for i in range(1, n_samples):
        for _ in range(stride):
            state = _lorenz_rk4(state, dt_int, sigma, rho, beta)
        if not (np.isfinite(state[0]) and np.isfinite(state[1]) and np.isfinite(state[2])):
            raise IntegrationDivergedError(f"Lorenz integration diverged at sample {i}")
        out[i] = state
    return SnapshotSet(
        data=out,
        system="lorenz",
        params={"sigma": sigma, "rho": rho, "beta": beta, "dt_int": dt_int},
        dt_sample=dt_sample,
        transient_discarded=transient,
    )


def embed_archimedean(xyz: SnapshotSet, alpha: float = 0.2) -> SnapshotSet:
    """Wrap (x, y, z) around a spiral: [x, y, az*cos(az), az*sin(az)]."""
    if xyz.d_u != 3:
        raise InvalidInputError(f"expected 3-wide input, got d_u={xyz.d_u}")
    x, y, z = xyz.data.T
    az = alpha * z
    out = np.column_stack([x, y, az * np.cos(az), az * np.sin(az)])
    params = dict(xyz.params)
    params["alpha"] = alpha
    return SnapshotSet(
        data=out,
        system=xyz.system + "_archimedean",
        params=params,
        dt_sample=xyz.dt_sample,
        transient_discarded=xyz.transient_discarded,
        seed=xyz.seed,
    )


def gen_torus(
    big_r: float = 2.0,
    small_r: float = 1.0,
    omega_t: float = 1.0,
    omega_p: float | None = None,
    dt_sample: float = 0.05,
    n_samples: int = 40000,
) -> SnapshotSet:
    """Quasiperiodic trajectory on a 2-torus surface in R^3.

    Default poloidal speed sqrt(2) makes the winding ratio irrational.
    """
    if omega_p is None:
        omega_p = np.sqrt(2.0)
    t = np.arange(n_samples) * dt_sample
    theta_t = omega_t * t
    theta_p = omega_p * t
    ring = big_r + small_r * np.cos(theta_p)
    data = np.column_stack([ring * np.cos(theta_t), ring * np.sin(theta_t), small_r * np.sin(theta_p)])
    return SnapshotSet(
        data=data,
        system="torus",
        params={"R": big_r, "r": small_r, "omega_t": omega_t, "omega_p": omega_p},
        dt_sample=dt_sample,
    )


@dataclass
class PatchAssignment:
    """k-means labels plus centers; every patch non-empty."""

    labels: np.ndarray
    centers: np.ndarray

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def patch_indices(self, j: int) -> np.ndarray:
        return np.nonzero(self.labels == j)[0]


def kmeans_patches(data: SnapshotSet, k: int, rng, max_iter: int = 500, tol: float = 1e-8) -> PatchAssignment:
    """Lloyd's algorithm; empty patches are reseeded from the farthest point."""
    x = data.data
    n = x.shape[0]
    if k > n:
        raise InvalidConfigError(f"k={k} exceeds N={n}")
    centers = x[rng.choice(n, size=k, replace=False)].copy()

    def assign(c):
        # ||x-c||^2 = ||x||^2 - 2 x.c + ||c||^2; the x term is label-invariant
        d2 = -2.0 * (x @ c.T) + np.einsum("ij,ij->i", c, c)
        return np.argmin(d2, axis=1)

    labels = assign(centers)
    for _ in range(max_iter):
        new_centers = np.empty_like(centers)
        for j in range(k):
            members = x[labels == j]
            if members.shape[0] == 0:
                dist = np.linalg.norm(x - centers[labels], axis=1)
                far = int(np.argmax(dist))
                log.info("kmeans: reseeding empty patch %d from farthest point %d", j, far)
                new_centers[j] = x[far]
            else:
                new_centers[j] = members.mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        labels = assign(centers)
        if shift < tol:
            break
    return PatchAssignment(labels=labels, centers=centers)


def _dealiased_square(vh: np.ndarray, n: int, n_pad: int) -> np.ndarray:
    """rfft of v**2 with the quadratic term evaluated on a 3/2-length grid."""
    pad = np.zeros(n_pad // 2 + 1, dtype=complex)
    pad[: vh.size] = vh
    w = np.fft.irfft(pad, n=n_pad) * (n_pad / n)
    sq = np.fft.rfft(w * w)[: vh.size] * (n / n_pad)
    return sq


def kse_solve(
    length: float = 22.0,
    n_mesh: int = 64,
    dt_int: float = 0.05,
    dt_sample: float = 1.0,
    n_samples: int = 40000,
    transient: float = 500.0,
    rng=None,
    ic=None,
    nonlinear: bool = True,
) -> SnapshotSet:
    """Pseudospectral ETDRK4 solution of v_t = -v v_x - v_xx - v_xxxx.

    Periodic domain of size ``length`` on ``n_mesh`` (power of two) points.
    ``nonlinear=False`` drops the advection term (exact dispersion
    exp((q^2-q^4)t) per mode, used as an oracle).
    """
    if n_mesh < 4 or (n_mesh & (n_mesh - 1)) != 0:
        raise InvalidConfigError(f"n_mesh must be a power of two >= 4, got {n_mesh}")
    if length <= 0:
        raise InvalidConfigError("length must be positive")
    stride = int(round(dt_sample / dt_int))
    if abs(stride * dt_int - dt_sample) > 1e-9 * dt_sample or stride < 1:
        raise InvalidConfigError("dt_sample must be an integer multiple of dt_int")

    q = 2.0 * np.pi * np.fft.rfftfreq(n_mesh, d=1.0 / n_mesh) / length
    lin = q**2 - q**4

    h = dt_int
    m_pts = 32
    roots = np.exp(1j * np.pi * (np.arange(1, m_pts + 1) - 0.5) / m_pts)
    lr = h * lin[:, None] + roots[None, :]
    e_full = np.exp(h * lin)
    e_half = np.exp(0.5 * h * lin)
    q_coef = h * np.real(np.mean((np.exp(lr / 2) - 1) / lr, axis=1))
    f1 = h * np.real(np.mean((-4 - lr + np.exp(lr) * (4 - 3 * lr + lr**2)) / lr**3, axis=1))
    f2 = h * np.real(np.mean((2 + lr + np.exp(lr) * (-2 + lr)) / lr**3, axis=1))
    f3 = h * np.real(np.mean((-4 - 3 * lr - lr**2 + np.exp(lr) * (4 - lr)) / lr**3, axis=1))

    if ic is None:
        v = 0.1 * rng.standard_normal(n_mesh)
        v -= v.mean()
    else:
        v = np.asarray(ic, dtype=np.float64).copy()
        if v.shape != (n_mesh,):
            raise InvalidInputError(f"ic must have shape ({n_mesh},)")
    vh = np.fft.rfft(v)

    n_pad = 3 * n_mesh // 2
    half_iq = -0.5j * q

    if nonlinear:

        def rhs_nl(u):
            return half_iq * _dealiased_square(u, n_mesh, n_pad)

    else:

        def rhs_nl(u):
            return np.zeros_like(u)

    def step(u):
        nv = rhs_nl(u)
        a = e_half * u + q_coef * nv
        na = rhs_nl(a)
        b = e_half * u + q_coef * na
        nb = rhs_nl(b)
        c = e_half * a + q_coef * (2 * nb - nv)
        nc = rhs_nl(c)
        return e_full * u + nv * f1 + 2 * (na + nb) * f2 + nc * f3

    n_transient = int(round(transient / dt_int))
    for _ in range(n_transient):
        vh = step(vh)
    out = np.empty((n_samples, n_mesh))
    out[0] = np.fft.irfft(vh, n=n_mesh)
    for i in range(1, n_samples):
        for _ in range(stride):
            vh = step(vh)
        if not np.all(np.isfinite(vh)):
            raise IntegrationDivergedError(f"KSE integration diverged at sample {i}")
        out[i] = np.fft.irfft(vh, n=n_mesh)
    return SnapshotSet(
        data=out,
        system="kse",
        params={"L": length, "n_mesh": n_mesh, "dt_int": dt_int},
        dt_sample=dt_sample,
        transient_discarded=transient,
    )


def _periodic_laplacian(f: np.ndarray, dx: float) -> np.ndarray:
    return (
        np.roll(f, 1, axis=0)
        + np.roll(f, -1, axis=0)
        + np.roll(f, 1, axis=1)
        + np.roll(f, -1, axis=1)
        - 4.0 * f
    ) / (dx * dx)


def lambda_omega_solve(
    grid_n: int = 32,
    d1: float = 0.1,
    d2: float = 0.1,
    beta: float = 1.0,
    domain: tuple[float, float] = (-10.0, 10.0),
    dt_int: float = 0.01,
    dt_sample: float = 0.05,
    n_samples: int = 400,
    transient: float = 100.0,
    ic=None,
) -> SnapshotSet:
    """Spiral-wave reaction-diffusion dynamics on a periodic grid.

        u_t = [1 - (u^2+v^2)] u + beta (u^2+v^2) v + d1 lap(u)
        v_t = -beta (u^2+v^2) u + [1 - (u^2+v^2)] v + d2 lap(v)

    Snapshots concatenate the u and v fields (d_u = 2 grid_n^2).  Started
    from a spiral seed unless ``ic=(u0, v0)`` is given; the long-time state
    is a limit cycle.
    """
    if grid_n < 16:
        raise InvalidConfigError(f"grid_n must be >= 16, got {grid_n}")
    stride = int(round(dt_sample / dt_int))
    if abs(stride * dt_int - dt_sample) > 1e-9 * dt_sample or stride < 1:
        raise InvalidConfigError("dt_sample must be an integer multiple of dt_int")

    lo, hi = domain
    dx = (hi - lo) / grid_n
    xs = lo + dx * np.arange(grid_n)
    xg, yg = np.meshgrid(xs, xs, indexing="ij")
    if ic is None:
        r = np.sqrt(xg**2 + yg**2)
        angle = np.arctan2(yg, xg)
        u = np.tanh(r) * np.cos(angle - r)
        v = np.tanh(r) * np.sin(angle - r)
    else:
        u = np.asarray(ic[0], dtype=np.float64).copy()
        v = np.asarray(ic[1], dtype=np.float64).copy()
        if u.shape != (grid_n, grid_n) or v.shape != (grid_n, grid_n):
            raise InvalidInputError("ic fields must be (grid_n, grid_n)")

    def rhs(u, v):
        amp = u * u + v * v
        fu = (1.0 - amp) * u + beta * amp * v + d1 * _periodic_laplacian(u, dx)
        fv = -beta * amp * u + (1.0 - amp) * v + d2 * _periodic_laplacian(v, dx)
        return fu, fv

    def step(u, v):
        k1u, k1v = rhs(u, v)
        k2u, k2v = rhs(u + 0.5 * dt_int * k1u, v + 0.5 * dt_int * k1v)
        k3u, k3v = rhs(u + 0.5 * dt_int * k2u, v + 0.5 * dt_int * k2v)
        k4u, k4v = rhs(u + dt_int * k3u, v + dt_int * k3v)
        return (
            u + dt_int / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u),
            v + dt_int / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
        )

    for _ in range(int(round(transient / dt_int))):
        u, v = step(u, v)
    out = np.empty((n_samples, 2 * grid_n * grid_n))
    out[0] = np.concatenate([u.ravel(), v.ravel()])
    for i in range(1, n_samples):
        for _ in range(stride):
            u, v = step(u, v)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise IntegrationDivergedError(f"lambda-omega integration diverged at sample {i}")
        out[i] = np.concatenate([u.ravel(), v.ravel()])
    return SnapshotSet(
        data=out,
        system="lambda_omega",
        params={
            "grid_n": grid_n,
            "d1": d1,
            "d2": d2,
            "beta": beta,
            "domain": [lo, hi],
            "dt_int": dt_int,
        },
        dt_sample=dt_sample,
        transient_discarded=transient,
    )
