"""Gradient-flow model of the fully linear autoencoder.

The network is u_tilde = D W_n ... W_1 E u acting on data with idealized
covariance <u u^T> = sigma^2 I^(r) (identity on the first r diagonal
entries).  Gradient descent is modeled as an ODE in pseudotime with decay
ratio zeta = lambda/sigma^2:

    dE/dt   = -(D W_n..W_1)^T R           - zeta E
    dW_j/dt = -(D W_n..W_{j+1})^T R (W_{j-1}..W_1 E)^T - zeta W_j
    dD/dt   = -R (W_n..W_1 E)^T           - zeta D

with R = (D W_n..W_1 E - I) I^(r).  Matrices follow the column convention
(E: d_z x d_u, W: d_z x d_z, D: d_u x d_z).

Key facts verified numerically here: the rank-r equilibrium family
(a, b, c) = (1 + alpha zeta, 1 + beta zeta, 1 + gamma zeta) with
alpha + n beta + gamma + 1 = 0; collective decay rate rho_n = 2 + n at
zeta = 0 (loss decays at 2 rho_n); and scalar-subspace eigenvalues
(-3 + 3 zeta, -zeta, -zeta) for n = 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrationDivergedError, InvalidConfigError
from .linalg import seeded_rng

__all__ = [
    "LinearFlowConfig",
    "LinearFlowState",
    "FlowResult",
    "eye_r",
    "flow_rhs",
    "equilibrium_family",
    "scalar_state",
    "simulate_flow",
    "perturbation_eigenvalues",
    "fit_decay_rate",
]


def eye_r(p: int, q: int, r: int) -> np.ndarray:
    """p x q matrix with ones on the first r diagonal entries."""
    m = np.zeros((p, q))
    idx = np.arange(min(r, p, q))
    m[idx, idx] = 1.0
    return m


@dataclass
class LinearFlowConfig:
    d_u: int = 100
    d_z: int = 20
    r: int = 5
    n: int = 1
    zeta: float = 0.0
    dt: float = 1e-3
    t_end: float = 10.0
    eps: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not (self.r <= self.d_z <= self.d_u):
            raise InvalidConfigError("need r <= d_z <= d_u")
        if self.zeta < 0:
            raise InvalidConfigError("zeta must be >= 0")
        if self.n < 0:
            raise InvalidConfigError("n must be >= 0")
        if self.dt <= 0 or self.t_end < 0:
            raise InvalidConfigError("dt > 0 and t_end >= 0 required")


@dataclass
class LinearFlowState:
    e: np.ndarray
    w_list: list[np.ndarray]
    d: np.ndarray
    t: float = 0.0

    def copy(self) -> "LinearFlowState":
        return LinearFlowState(self.e.copy(), [w.copy() for w in self.w_list], self.d.copy(), self.t)


def equilibrium_family(zeta: float, alpha: float = 0.0, beta_coef: float = 0.0, n: int = 1):
    """(a, b, c) on the rank-r equilibrium family, gamma solved from
    alpha + n*beta + gamma + 1 = 0.  Valid to O(zeta^2)."""
    if zeta > 0.05:
        import warnings

        warnings.warn(f"zeta={zeta} is outside the perturbative regime (<= 0.05)")
    gamma = -1.0 - alpha - n * beta_coef
    return 1.0 + alpha * zeta, 1.0 + beta_coef * zeta, 1.0 + gamma * zeta


def equilibrium_state(cfg: LinearFlowConfig, alpha: float = 0.0, beta_coef: float = 0.0) -> LinearFlowState:
    a, b, c = equilibrium_family(cfg.zeta, alpha, beta_coef, cfg.n)
    return LinearFlowState(
        e=a * eye_r(cfg.d_z, cfg.d_u, cfg.r),
        w_list=[b * eye_r(cfg.d_z, cfg.d_z, cfg.r) for _ in range(cfg.n)],
        d=c * eye_r(cfg.d_u, cfg.d_z, cfg.r),
    )


def flow_rhs(state: LinearFlowState, cfg: LinearFlowConfig) -> LinearFlowState:
    """Exact right-hand side of the gradient flow for <uu^T> = I^(r)."""
    e, ws, d = state.e, state.w_list, state.d
    n = len(ws)
    # prefix[j] = W_j ... W_1 E  (prefix[0] = E); suffix[j] = D W_n ... W_{j+1}
    prefix = [e]
    for w in ws:
        prefix.append(w @ prefix[-1])
    suffix = [d]
    for w in reversed(ws):
        suffix.append(suffix[-1] @ w)
    suffix = suffix[::-1]  # suffix[j] pairs with W_{j+1}..W_n applied after layer j

    resid = suffix[0] @ prefix[0]  # D W_n..W_1 E, d_u x d_u
    idx = np.arange(cfg.r)
    resid[idx, idx] -= 1.0
    resid[:, cfg.r :] = 0.0  # right-multiply by I^(r)

    de = -suffix[0].T @ resid - cfg.zeta * e
    dws = []
    for j in range(n):
        dws.append(-suffix[j + 1].T @ resid @ prefix[j].T - cfg.zeta * ws[j])
    dd = -resid @ prefix[-1].T - cfg.zeta * d
    return LinearFlowState(de, dws, dd, 1.0)


def _axpy_state(x: LinearFlowState, y: LinearFlowState, a: float) -> LinearFlowState:
    return LinearFlowState(
        x.e + a * y.e,
        [wx + a * wy for wx, wy in zip(x.w_list, y.w_list)],
        x.d + a * y.d,
        x.t + a * y.t,
    )


def _rk4_step(state: LinearFlowState, cfg: LinearFlowConfig, dt: float) -> LinearFlowState:
    k1 = flow_rhs(state, cfg)
    k2 = flow_rhs(_axpy_state(state, k1, dt / 2), cfg)
    k3 = flow_rhs(_axpy_state(state, k2, dt / 2), cfg)
    k4 = flow_rhs(_axpy_state(state, k3, dt), cfg)
    out = state.copy()
    out.e += dt / 6 * (k1.e + 2 * k2.e + 2 * k3.e + k4.e)
    for w, a1, a2, a3, a4 in zip(out.w_list, k1.w_list, k2.w_list, k3.w_list, k4.w_list):
        w += dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
    out.d += dt / 6 * (k1.d + 2 * k2.d + 2 * k3.d + k4.d)
    out.t += dt
    return out


def scalar_state(state: LinearFlowState, cfg: LinearFlowConfig, alpha: float = 0.0, beta_coef: float = 0.0):
    """Scalar-subspace coordinates: mean first-r diagonal deviation of each
    matrix from its equilibrium value."""
    a, b, c = equilibrium_family(cfg.zeta, alpha, beta_coef, cfg.n)
    idx = np.arange(cfg.r)
    se = float(np.mean(state.e[idx, idx] - a))
    sws = [float(np.mean(w[idx, idx] - b)) for w in state.w_list]
    sd = float(np.mean(state.d[idx, idx] - c))
    return se, sws, sd


def reconstruction_loss(state: LinearFlowState, cfg: LinearFlowConfig) -> float:
    """||(D W..E - I) I^(r)||_F^2 in units of sigma^2."""
    p = state.d
    for w in reversed(state.w_list):
        p = p @ w
    p = p @ state.e
    idx = np.arange(cfg.r)
    p[idx, idx] -= 1.0
    return float(np.sum(p[:, : cfg.r] ** 2))


@dataclass
class FlowResult:
    t: np.ndarray
    loss: np.ndarray
    decay_term: np.ndarray
    collective: np.ndarray
    offblock: np.ndarray
    scalar_e: np.ndarray
    scalar_w: np.ndarray  # (steps, n)
    scalar_d: np.ndarray
    final: LinearFlowState
    cfg: LinearFlowConfig = field(repr=False, default=None)


def _collective_norm(state: LinearFlowState, cfg, a, b, c) -> float:
    idx = np.arange(cfg.r)
    coll = state.e[idx, idx] - a
    for w in state.w_list:
        coll = coll + (w[idx, idx] - b)
    coll = coll + (state.d[idx, idx] - c)
    return float(np.linalg.norm(coll))


def _offblock_norm(state: LinearFlowState, cfg) -> float:
    total = 0.0
    for m in [state.e] + state.w_list + [state.d]:
        sq = float(np.sum(m**2)) - float(np.sum(m[: cfg.r, : cfg.r] ** 2))
        total += max(sq, 0.0)
    return np.sqrt(total)


def perturbed_init(
    cfg: LinearFlowConfig,
    alpha: float = 0.0,
    beta_coef: float = 0.0,
    diagonal_noise: bool = True,
    scalar_coeffs: tuple | None = None,
) -> LinearFlowState:
    """Equilibrium plus an eps-scale perturbation.

    ``diagonal_noise`` perturbs every diagonal element with zero-mean noise
    (the generic case); ``scalar_coeffs=(ce, [cw..], cd)`` instead perturbs
    within the scalar invariant subspace.
    """
    state = equilibrium_state(cfg, alpha, beta_coef)
    if scalar_coeffs is not None:
        ce, cws, cd = scalar_coeffs
        state.e += cfg.eps * ce * eye_r(cfg.d_z, cfg.d_u, cfg.r)
        for w, cw in zip(state.w_list, cws):
            w += cfg.eps * cw * eye_r(cfg.d_z, cfg.d_z, cfg.r)
        state.d += cfg.eps * cd * eye_r(cfg.d_u, cfg.d_z, cfg.r)
        return state
    rng = seeded_rng(cfg.seed)
    if diagonal_noise:
        for m in [state.e] + state.w_list + [state.d]:
            k = min(m.shape)
            idx = np.arange(k)
            noise = rng.standard_normal(k)
            noise -= noise.mean()
            m[idx, idx] += cfg.eps * noise
    else:
        for m in [state.e] + state.w_list + [state.d]:
            m += cfg.eps * rng.standard_normal(m.shape)
    return state


def simulate_flow(
    cfg: LinearFlowConfig,
    init: LinearFlowState | None = None,
    alpha: float = 0.0,
    beta_coef: float = 0.0,
    record_every: int = 10,
) -> FlowResult:
    """RK4 integration of the gradient flow with diagnostics.

    Records the reconstruction loss, the weight-decay term of the loss, the
    collective weight (norm over the first-r diagonal of the summed
    deviations), the off-block norm, and the scalar-subspace coordinates.
    """
    state = init.copy() if init is not None else perturbed_init(cfg, alpha, beta_coef)
    a, b, c = equilibrium_family(cfg.zeta, alpha, beta_coef, cfg.n)
    n_steps = int(round(cfg.t_end / cfg.dt))

    rec_t, rec_loss, rec_decay, rec_coll, rec_off = [], [], [], [], []
    rec_se, rec_sw, rec_sd = [], [], []

    def record():
        rec_t.append(state.t)
        rec_loss.append(reconstruction_loss(state, cfg))
        norms = float(np.sum(state.e**2)) + float(np.sum(state.d**2))
        norms += sum(float(np.sum(w**2)) for w in state.w_list)
        rec_decay.append(cfg.zeta * norms)
        rec_coll.append(_collective_norm(state, cfg, a, b, c))
        rec_off.append(_offblock_norm(state, cfg))
        se, sws, sd = scalar_state(state, cfg, alpha, beta_coef)
        rec_se.append(se)
        rec_sw.append(sws)
        rec_sd.append(sd)

    record()
    for step in range(1, n_steps + 1):
        state = _rk4_step(state, cfg, cfg.dt)
        if not np.isfinite(state.e).all():
            raise IntegrationDivergedError(f"flow diverged at t={state.t:.3f}; reduce dt")
        if step % record_every == 0 or step == n_steps:
            record()
    return FlowResult(
        t=np.asarray(rec_t),
        loss=np.asarray(rec_loss),
        decay_term=np.asarray(rec_decay),
        collective=np.asarray(rec_coll),
        offblock=np.asarray(rec_off),
        scalar_e=np.asarray(rec_se),
        scalar_w=np.asarray(rec_sw).reshape(len(rec_t), cfg.n),
        scalar_d=np.asarray(rec_sd),
        final=state,
        cfg=cfg,
    )


def fit_decay_rate(t, y, rel_lo: float = 1e-8, rel_hi: float = 1e-1) -> float:
    """Least-squares slope of log y over the window y/y[0] in [rel_lo, rel_hi].

    Returns the positive decay rate.
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rel = y / y[0]
    mask = (rel >= rel_lo) & (rel <= rel_hi) & (y > 0)
    if mask.sum() < 2:
        raise InvalidConfigError("decay window contains fewer than 2 samples")
    slope, _ = np.polyfit(t[mask], np.log(y[mask]), 1)
    return float(-slope)


def scalar_expansion_matrix(zeta: float, alpha: float = 0.0, beta_coef: float = 0.0) -> np.ndarray:
    """The 3x3 matrix A + zeta*B of the n=1 first-order expansion.

    A is the rank-one all-(-1) coupling; B collects the O(zeta) corrections
    from the equilibrium scalars a, b, c (gamma solved from
    alpha + beta + gamma + 1 = 0).  Its eigenvalues are -3 + 3 zeta and
    -zeta (double) up to O(zeta^2) for any (alpha, beta) on the family.
    """
    al, be = alpha, beta_coef
    ga = -1.0 - al - be
    a_mat = -np.ones((3, 3))
    b_mat = -np.array(
        [
            [2 * (be + ga) + 1, ga - 1, be - 1],
            [ga - 1, 2 * (al + ga) + 1, al - 1],
            [be - 1, al - 1, 2 * (al + be) + 1],
        ]
    )
    return a_mat + zeta * b_mat


def scalar_jacobian(
    cfg: LinearFlowConfig, alpha: float = 0.0, beta_coef: float = 0.0, h: float = 1e-7
) -> np.ndarray:
    """Exact (n+2) x (n+2) Jacobian of the flow on the scalar subspace.

    Central differences of the full matrix flow about the (alpha, beta,
    gamma) equilibrium, along the directions (E, W_1..W_n, D) embedded as
    s * I^(r).  Unlike the first-order expansion this keeps the terms where
    the perturbation multiplies the O(zeta) equilibrium residual, so its
    eigenvalues are (-3 + 5 zeta, -2 zeta, -2 zeta) + O(zeta^2) for n = 1.
    """
    base = equilibrium_state(cfg, alpha, beta_coef)
    dim = cfg.n + 2

    def embed(coeffs: np.ndarray) -> LinearFlowState:
        s = base.copy()
        s.e += coeffs[0] * eye_r(cfg.d_z, cfg.d_u, cfg.r)
        for j, w in enumerate(s.w_list):
            w += coeffs[1 + j] * eye_r(cfg.d_z, cfg.d_z, cfg.r)
        s.d += coeffs[-1] * eye_r(cfg.d_u, cfg.d_z, cfg.r)
        return s

    def project(state: LinearFlowState) -> np.ndarray:
        idx = np.arange(cfg.r)
        out = [float(np.mean(state.e[idx, idx]))]
        out += [float(np.mean(w[idx, idx])) for w in state.w_list]
        out.append(float(np.mean(state.d[idx, idx])))
        return np.asarray(out)

    jac = np.empty((dim, dim))
    for k in range(dim):
        step = np.zeros(dim)
        step[k] = h
        fp = project(flow_rhs(embed(step), cfg))
        fm = project(flow_rhs(embed(-step), cfg))
        jac[:, k] = (fp - fm) / (2 * h)
    return jac


def perturbation_eigenvalues(
    n: int = 1,
    zeta: float = 0.0,
    cfg: LinearFlowConfig | None = None,
    alpha: float = 0.0,
    beta_coef: float = 0.0,
    method: str | None = None,
) -> np.ndarray:
    """Eigenvalues of the scalar-subspace dynamics, ascending.

    ``method='expansion'`` (default for n=1) assembles the first-order
    A + zeta*B matrix, matching -3 + 3 zeta and -zeta (double) to
    O(zeta^2).  ``method='jacobian'`` differentiates the full flow
    numerically (any n); it retains the equilibrium-residual coupling that
    the first-order expansion drops, shifting the O(zeta) corrections (see
    :func:`scalar_jacobian`).  Both agree at zeta = 0: (-(2+n), 0, .., 0).
    """
    if cfg is None:
        cfg = LinearFlowConfig(n=n, zeta=zeta)
    elif cfg.n != n or cfg.zeta != zeta:
        raise InvalidConfigError("cfg.n/cfg.zeta must match the n/zeta arguments")
    if method is None:
        method = "expansion" if n == 1 else "jacobian"
    if method == "expansion":
        if n != 1:
            raise InvalidConfigError("the first-order expansion is available for n=1 only")
        mat = scalar_expansion_matrix(zeta, alpha, beta_coef)
    elif method == "jacobian":
        mat = scalar_jacobian(cfg, alpha, beta_coef)
    else:
        raise InvalidConfigError(f"unknown method {method!r}")
    return np.sort(np.linalg.eigvals(mat).real)
