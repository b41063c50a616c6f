"""Forecasting dynamics in manifold coordinates with a neural ODE.

A small MLP vector field g models h_dot = g(h).  Training minimizes the
one-step error of an RK4 integration over the pair lag (discretize then
optimize: gradients flow through the unrolled stencil exactly).  Rollouts
integrate the learned field at a finer step and decode each state back to
the ambient space through the manifold chart.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as nw
from .analysis import ManifoldChart, decode_h, encode_h
from .errors import InvalidConfigError, InvalidInputError, TrainingDivergedError
from .linalg import seeded_rng

__all__ = [
    "VectorField",
    "NodeModel",
    "ForecastResult",
    "make_pairs",
    "node_train",
    "forecast",
]


class VectorField:
    """MLP h -> h_dot with tanh hidden layers and a linear output.

    Parameters live in one flat vector (weights first, then biases), so the
    autoencoder's optimizer step applies unchanged.
    """

    def __init__(self, widths, flat: np.ndarray | None = None):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or widths[0] != widths[-1]:
            raise InvalidConfigError("vector field needs equal input/output widths")
        self.widths = widths
        shapes_w = list(zip(widths[:-1], widths[1:]))
        n_w = sum(a * b for a, b in shapes_w)
        n_b = sum(widths[1:])
        if flat is None:
            flat = np.zeros(n_w + n_b)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (n_w + n_b,):
            raise InvalidInputError("flat vector has wrong length")
        self.flat = flat
        self.n_weight = n_w
        self.w, self.b = [], []
        off = 0
        for a, bdim in shapes_w:
            self.w.append(flat[off : off + a * bdim].reshape(a, bdim))
            off += a * bdim
        for bdim in widths[1:]:
            self.b.append(flat[off : off + bdim])
            off += bdim

    def init(self, rng) -> "VectorField":
        for w in self.w:
            s = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-s, s, size=w.shape)
        return self

    def __call__(self, h: np.ndarray) -> np.ndarray:
        out, _ = self.forward(h)
        return out

    def forward(self, h: np.ndarray):
        """Returns (g(h), cache) where the cache feeds the VJP."""
        cache = []
        a = h
        last = len(self.w) - 1
        for i, (w, b) in enumerate(zip(self.w, self.b)):
            cache.append(a)
            a = a @ w + b
            if i < last:
                a = np.tanh(a)
                cache.append(a)
        return a, cache

    def vjp(self, cache, gbar: np.ndarray, grads: "VectorField") -> np.ndarray:
        """Accumulate parameter gradients for one forward; returns d/dh."""
        last = len(self.w) - 1
        g = gbar
        for i in range(last, -1, -1):
            if i < last:
                post = cache[2 * i + 1]
                g = g * (1.0 - post * post)
            a_in = cache[2 * i]
            grads.w[i] += a_in.T @ g
            grads.b[i] += g.sum(axis=0)
            g = g @ self.w[i].T
        return g


def _rk4_forward(field: VectorField, h: np.ndarray, dt: float):
    x1 = h
    k1, c1 = field.forward(x1)
    x2 = h + (dt / 2) * k1
    k2, c2 = field.forward(x2)
    x3 = h + (dt / 2) * k2
    k3, c3 = field.forward(x3)
    x4 = h + dt * k3
    k4, c4 = field.forward(x4)
    out = h + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return out, (c1, c2, c3, c4)


def _rk4_backward(field: VectorField, caches, out_bar: np.ndarray, dt: float, grads: VectorField):
    """VJP of one RK4 step; returns the gradient w.r.t. the step input."""
    c1, c2, c3, c4 = caches
    k4_bar = (dt / 6) * out_bar
    x4_bar = field.vjp(c4, k4_bar, grads)
    k3_bar = (dt / 3) * out_bar + dt * x4_bar
    x3_bar = field.vjp(c3, k3_bar, grads)
    k2_bar = (dt / 3) * out_bar + (dt / 2) * x3_bar
    x2_bar = field.vjp(c2, k2_bar, grads)
    k1_bar = (dt / 6) * out_bar + (dt / 2) * x2_bar
    x1_bar = field.vjp(c1, k1_bar, grads)
    return out_bar + x1_bar + x2_bar + x3_bar + x4_bar


def rk4_rollout(field: VectorField, h0: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """Integrate the learned field; rows are states at t = 0, dt, .., n*dt."""
    traj = np.empty((n_steps + 1, h0.size))
    traj[0] = h0
    h = h0[None, :]
    for i in range(1, n_steps + 1):
        h, _ = _rk4_forward(field, h, dt)
        traj[i] = h[0]
    return traj


@dataclass
class NodeModel:
    field: VectorField
    tau: float
    dt_node: float
    n_substeps: int
    h_radius: float  # max |h| seen in training, for the rollout guard


@dataclass
class ForecastResult:
    h_traj: np.ndarray
    u_traj: np.ndarray
    t_grid: np.ndarray
    diverged: bool = False


def make_pairs(chart: ManifoldChart, data, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Encode a time-ordered trajectory and pair states at lag tau."""
    dt = getattr(data, "dt_sample", 0.0)
    if not dt or dt <= 0:
        raise InvalidInputError("make_pairs needs trajectory data with dt_sample > 0")
    stride = int(round(tau / dt))
    if stride < 1 or abs(stride * dt - tau) > 1e-9 * max(tau, dt):
        raise InvalidInputError(f"tau={tau} must be a positive multiple of dt_sample={dt}")
    h = encode_h(chart, data.data)
    if h.shape[0] <= stride:
        raise InvalidInputError("trajectory too short for the requested lag")
    return h[:-stride], h[stride:]


def node_train(
    pairs: tuple[np.ndarray, np.ndarray],
    hidden=(200, 200),
    cfg: nw.TrainConfig | None = None,
    tau: float | None = None,
    n_substeps: int = 1,
) -> NodeModel:
    """Fit g by minimizing |RK4(g, h_t, tau) - h_{t+tau}|^2 over mini-batches.

    The integration uses ``n_substeps`` RK4 steps of size tau/n_substeps and
    gradients are exact derivatives of that discrete map.  Deterministic
    given cfg.seed.
    """
    h_from, h_to = pairs
    h_from = np.asarray(h_from, dtype=np.float64)
    h_to = np.asarray(h_to, dtype=np.float64)
    if h_from.shape != h_to.shape or h_from.ndim != 2 or h_from.shape[0] == 0:
        raise InvalidInputError("pairs must be two equal-shape nonempty (N, d_m) arrays")
    if tau is None:
        raise InvalidConfigError("tau (the pair lag, in time units) is required")
    if cfg is None:
        cfg = nw.TrainConfig(lam=0.0, epochs=300, seed=0)
    d_m = h_from.shape[1]
    dt_sub = tau / n_substeps

    rng = seeded_rng(cfg.seed)
    field = VectorField((d_m, *hidden, d_m)).init(rng)
    grads = VectorField(field.widths)
    state = nw.AdamWState(field.flat.size)

    n = h_from.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for k in range(0, n, cfg.batch):
            idx = order[k : k + cfg.batch]
            hb, tb = h_from[idx], h_to[idx]
            pred = hb
            caches = []
            for _s in range(n_substeps):
                pred, cache = _rk4_forward(field, pred, dt_sub)
                caches.append(cache)
            diff = pred - tb
            loss = float(np.mean(np.einsum("ij,ij->i", diff, diff)))
            if not np.isfinite(loss):
                raise TrainingDivergedError("neural ODE training diverged")
            grads.flat[...] = 0.0
            bar = diff * (2.0 / hb.shape[0])
            for cache in reversed(caches):
                bar = _rk4_backward(field, cache, bar, dt_sub, grads)
            nw.adamw_step(field, grads, state, cfg)
    radius = float(np.max(np.linalg.norm(h_from, axis=1)))
    return NodeModel(field=field, tau=tau, dt_node=tau / 10.0, n_substeps=n_substeps, h_radius=radius)


def forecast(node: NodeModel, chart: ManifoldChart, u0, t_end: float, dt_node: float | None = None) -> ForecastResult:
    """Encode u0, roll the learned dynamics to t_end, decode every state.

    If the state norm exceeds 10x the training radius the rollout is
    truncated and flagged.
    """
    if dt_node is None:
        dt_node = node.dt_node
    if t_end < 0 or dt_node <= 0:
        raise InvalidConfigError("t_end >= 0 and dt_node > 0 required")
    h0 = encode_h(chart, u0)[0]
    n_steps = int(round(t_end / dt_node))
    traj = [h0]
    h = h0[None, :]
    diverged = False
    limit = 10.0 * node.h_radius
    for _ in range(n_steps):
        h, _ = _rk4_forward(node.field, h, dt_node)
        if not np.all(np.isfinite(h)) or np.linalg.norm(h[0]) > limit:
            diverged = True
            break
        traj.append(h[0].copy())
    h_traj = np.asarray(traj)
    u_traj = decode_h(chart, h_traj)
    t_grid = dt_node * np.arange(h_traj.shape[0])
    return ForecastResult(h_traj=h_traj, u_traj=u_traj, t_grid=t_grid, diverged=diverged)
