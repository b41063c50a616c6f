"""Autoencoder with a stack of square linear layers at the bottleneck.

The model is an MLP encoder, ``n`` bias-free square linear layers acting on
the latent space, and a mirrored MLP decoder.  All parameters live in one
contiguous float64 vector; the per-layer weight/bias arrays are views into
it, which keeps the optimizer to a handful of whole-vector operations.

Gradients are exact reverse-mode derivatives of the batch-mean squared
reconstruction error.  Weight decay never enters the gradient; it is applied
decoupled inside the optimizer step, to weights only.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, TrainingDivergedError
from .linalg import seeded_rng

__all__ = [
    "ArchSpec",
    "ModelParams",
    "GradSet",
    "TrainConfig",
    "AdamWState",
    "Taps",
    "TrainingTrace",
    "init_model",
    "forward",
    "encode",
    "decode",
    "backward",
    "adamw_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

RELU = "relu"
LINEAR = "linear"

CHECKPOINT_MAGIC = b"IRWD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchSpec:
    """Shape of the autoencoder.

    ``encoder_widths`` is the full chain including input and latent width,
    e.g. ``[64, 512, 256, 20]``.  The decoder mirrors it.  All encoder and
    decoder layers are ReLU-activated except the last of each, which is
    linear.  The ``n_linear`` internal layers are bias-free ``d_z x d_z``
    matrices with no activation.
    """

    d_u: int
    encoder_widths: tuple[int, ...]
    d_z: int
    n_linear: int

    def __post_init__(self):
        w = tuple(int(x) for x in self.encoder_widths)
        object.__setattr__(self, "encoder_widths", w)
        if len(w) < 2:
            raise InvalidConfigError("encoder_widths needs at least input and latent width")
        if w[0] != self.d_u:
            raise InvalidConfigError(f"encoder_widths[0]={w[0]} must equal d_u={self.d_u}")
        if w[-1] != self.d_z:
            raise InvalidConfigError(f"encoder_widths[-1]={w[-1]} must equal d_z={self.d_z}")
        if self.n_linear < 0:
            raise InvalidConfigError("n_linear must be >= 0")
        if any(x <= 0 for x in w):
            raise InvalidConfigError("all widths must be positive")

    @property
    def decoder_widths(self) -> tuple[int, ...]:
        return tuple(reversed(self.encoder_widths))

    def encoder_activations(self) -> list[str]:
        n_layers = len(self.encoder_widths) - 1
        return [RELU] * (n_layers - 1) + [LINEAR]

    def decoder_activations(self) -> list[str]:
        return self.encoder_activations()

    def to_json(self) -> str:
        return json.dumps(
            {
                "d_u": self.d_u,
                "encoder_widths": list(self.encoder_widths),
                "d_z": self.d_z,
                "n_linear": self.n_linear,
            }
        )

    @classmethod
    def from_json(cls, s: str) -> "ArchSpec":
        d = json.loads(s)
        return cls(
            d_u=int(d["d_u"]),
            encoder_widths=tuple(d["encoder_widths"]),
            d_z=int(d["d_z"]),
            n_linear=int(d["n_linear"]),
        )


def _layer_shapes(arch: ArchSpec):
    """Weight and bias shapes in declaration order.

    Weights: encoder layers, internal square layers, decoder layers.
    Biases: encoder layers then decoder layers (internal layers have none).
    """
    enc = list(zip(arch.encoder_widths[:-1], arch.encoder_widths[1:]))
    lin = [(arch.d_z, arch.d_z)] * arch.n_linear
    dec = list(zip(arch.decoder_widths[:-1], arch.decoder_widths[1:]))
    w_shapes = enc + lin + dec
    b_shapes = [(o,) for _, o in enc] + [(o,) for _, o in dec]
    return w_shapes, b_shapes


class _FlatViews:
    """A flat float64 vector with named per-layer views.

    Layout: all weight matrices first (declaration order), then all biases.
    ``flat[:n_weight]`` is therefore exactly the decayable slice.
    """

    def __init__(self, arch: ArchSpec, flat: np.ndarray | None = None):
        self.arch = arch
        w_shapes, b_shapes = _layer_shapes(arch)
        n_w = sum(int(np.prod(s)) for s in w_shapes)
        n_b = sum(int(np.prod(s)) for s in b_shapes)
        if flat is None:
            flat = np.zeros(n_w + n_b)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (n_w + n_b,):
            raise InvalidInputError(f"flat vector has {flat.shape}, expected ({n_w + n_b},)")
        self.flat = flat
        self.n_weight = n_w

        views = []
        off = 0
        for s in w_shapes + b_shapes:
            size = int(np.prod(s))
            views.append(flat[off : off + size].reshape(s))
            off += size
        n_enc = len(arch.encoder_widths) - 1
        n_lin = arch.n_linear
        self.enc_w = views[:n_enc]
        self.lin_w = views[n_enc : n_enc + n_lin]
        self.dec_w = views[n_enc + n_lin : n_enc + n_lin + n_enc]
        b_views = views[n_enc + n_lin + n_enc :]
        self.enc_b = b_views[:n_enc]
        self.dec_b = b_views[n_enc:]

    def copy(self):
        return type(self)(self.arch, self.flat.copy())


class ModelParams(_FlatViews):
    """All trainable parameters plus the architecture descriptor."""


class GradSet(_FlatViews):
    """Gradient of the reconstruction loss, same layout as ModelParams."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    lam: float = 0.0
    batch: int = 128
    epochs: int = 500
    seed: int = 0
    test_fraction: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidConfigError("lr must be > 0")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise InvalidConfigError("betas must lie in [0, 1)")
        if self.lam < 0:
            raise InvalidConfigError("lambda must be >= 0")
        if self.batch < 1 or self.epochs < 0:
            raise InvalidConfigError("batch >= 1 and epochs >= 0 required")
        if not (0 <= self.test_fraction < 1):
            raise InvalidConfigError("test_fraction must lie in [0, 1)")


def init_model(arch: ArchSpec, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.

    The small scale matters: it is what lets gradient descent over the
    internal linear stack settle on minimal-rank solutions.  Larger
    (Kaiming/Xavier) scales leave the stack in a lazier regime that retains
    superfluous latent directions.  Draws happen in declaration order so a
    seed pins the full init.
    """
    m = ModelParams(arch)

    def fill(w):
        s = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-s, s, size=w.shape)

    for w in m.enc_w:
        fill(w)
    for w in m.lin_w:
        fill(w)
    for w in m.dec_w:
        fill(w)
    return m


@dataclass
class Taps:
    """Intermediate representations of one forward pass.

    ``z_en`` is the output of the last ReLU encoder layer (native width),
    ``z_e`` the latent produced by the final (linear) encoder layer, and
    ``z_js[j]`` the output of internal layer j+1.  ``latent`` is the
    representation entering the decoder: ``z_js[-1]`` when n > 0, else
    ``z_e``.  ``pre_decoder`` aliases it.
    """

    z_en: np.ndarray
    z_e: np.ndarray
    z_js: list[np.ndarray] = field(default_factory=list)

    @property
    def latent(self) -> np.ndarray:
        return self.z_js[-1] if self.z_js else self.z_e

    @property
    def pre_decoder(self) -> np.ndarray:
        return self.latent

    def ordered(self) -> list[tuple[str, np.ndarray]]:
        out = [("EN", self.z_en), ("E", self.z_e)]
        out += [(str(j + 1), z) for j, z in enumerate(self.z_js)]
        return out


def _check_batch(m: ModelParams, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[None, :]
    if u.ndim != 2 or u.shape[1] != m.arch.d_u:
        raise InvalidInputError(f"batch has shape {u.shape}, expected (*, {m.arch.d_u})")
    return u


def _encode_with_cache(m: ModelParams, u: np.ndarray, cache: list | None):
    """Run encoder + internal stack; optionally record layer inputs."""
    enc_act = m.arch.encoder_activations()
    a = u
    z_en = None
    for w, b, act in zip(m.enc_w, m.enc_b, enc_act):
        if cache is not None:
            cache.append(a)
        a = a @ w
        a += b
        if act == RELU:
            np.maximum(a, 0.0, out=a)
            z_en = a
    z_e = a
    z_js = []
    for w in m.lin_w:
        if cache is not None:
            cache.append(a)
        a = a @ w
        z_js.append(a)
    if z_en is None:
        z_en = u
    return a, Taps(z_en=z_en, z_e=z_e, z_js=z_js)


def _decode_with_cache(m: ModelParams, z: np.ndarray, cache: list | None):
    dec_act = m.arch.decoder_activations()
    a = z
    for w, b, act in zip(m.dec_w, m.dec_b, dec_act):
        if cache is not None:
            cache.append(a)
        a = a @ w
        a += b
        if act == RELU:
            np.maximum(a, 0.0, out=a)
    return a


def forward(m: ModelParams, u_batch) -> tuple[np.ndarray, Taps]:
    """Reconstruction and all named intermediate representations."""
    u = _check_batch(m, u_batch)
    z, taps = _encode_with_cache(m, u, None)
    out = _decode_with_cache(m, z, None)
    return out, taps


def encode(m: ModelParams, u_batch) -> np.ndarray:
    """Latent representation (after the internal linear stack)."""
    u = _check_batch(m, u_batch)
    z, _ = _encode_with_cache(m, u, None)
    return z


def decode(m: ModelParams, z_batch) -> np.ndarray:
    z = np.asarray(z_batch, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[1] != m.arch.d_z:
        raise InvalidInputError(f"latent batch has shape {z.shape}, expected (*, {m.arch.d_z})")
    return _decode_with_cache(m, z, None)


def mse_loss(m: ModelParams, u_batch) -> float:
    """Batch mean of the squared L2 reconstruction error per snapshot."""
    u = _check_batch(m, u_batch)
    out, _ = forward(m, u)
    d = out - u
    return float(np.mean(np.einsum("ij,ij->i", d, d)))


def backward(m: ModelParams, u_batch, grads: GradSet | None = None) -> tuple[float, GradSet]:
    """Loss and its exact gradient. Weight decay is NOT part of this gradient."""
    u = _check_batch(m, u_batch)
    n_batch = u.shape[0]
    cache: list = []
    z, _ = _encode_with_cache(m, u, cache)
    out = _decode_with_cache(m, z, cache)

    diff = out - u
    mse = float(np.mean(np.einsum("ij,ij->i", diff, diff)))
    if not np.isfinite(mse):
        raise TrainingDivergedError("non-finite reconstruction loss")

    if grads is None:
        grads = GradSet(m.arch)
    g = diff * (2.0 / n_batch)

    dec_act = m.arch.decoder_activations()
    n_dec = len(m.dec_w)
    n_lin = m.arch.n_linear
    # cache layout: encoder inputs, internal inputs, decoder inputs
    dec_in = cache[len(cache) - n_dec :]
    lin_in = cache[len(cache) - n_dec - n_lin : len(cache) - n_dec]
    enc_in = cache[: len(cache) - n_dec - n_lin]

    for i in range(n_dec - 1, -1, -1):
        a_in = dec_in[i]
        if dec_act[i] == RELU:
            # forward stored post-activation in the next layer's input (or out)
            post = dec_in[i + 1] if i + 1 < n_dec else out
            g = g * (post > 0.0)
        grads.dec_w[i][...] = a_in.T @ g
        grads.dec_b[i][...] = g.sum(axis=0)
        g = g @ m.dec_w[i].T

    for j in range(n_lin - 1, -1, -1):
        grads.lin_w[j][...] = lin_in[j].T @ g
        g = g @ m.lin_w[j].T

    enc_act = m.arch.encoder_activations()
    n_enc = len(m.enc_w)
    for i in range(n_enc - 1, -1, -1):
        a_in = enc_in[i]
        if enc_act[i] == RELU:
            post = lin_in[0] if (i + 1 == n_enc and n_lin > 0) else None
            if post is None:
                post = enc_in[i + 1] if i + 1 < n_enc else z
            g = g * (post > 0.0)
        grads.enc_w[i][...] = a_in.T @ g
        grads.enc_b[i][...] = g.sum(axis=0)
        if i > 0:
            g = g @ m.enc_w[i].T
    return mse, grads


class AdamWState:
    """First/second moment accumulators plus a reusable scratch buffer."""

    def __init__(self, n_params: int):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.scratch = np.zeros(n_params)
        self.t = 0


def adamw_step(m: ModelParams, grads: GradSet, state: AdamWState, cfg: TrainConfig) -> None:
    """theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + lam * theta).

    Decay uses the pre-update theta and touches weights only (never biases);
    applying the multiplicative shrink before subtracting the gradient term
    is an exact reordering because the gradient term does not read theta.
    """
    if grads.flat.shape != m.flat.shape:
        raise InvalidInputError("gradient/parameter shape mismatch")
    state.t += 1
    b1, b2 = cfg.betas
    mom, vel, s = state.m, state.v, state.scratch
    g = grads.flat

    mom *= b1
    np.multiply(g, 1.0 - b1, out=s)
    mom += s

    vel *= b2
    np.multiply(g, g, out=s)
    s *= 1.0 - b2
    vel += s

    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    np.multiply(vel, 1.0 / bc2, out=s)
    np.sqrt(s, out=s)
    s += cfg.eps
    np.divide(mom, s, out=s)
    s *= cfg.lr / bc1

    if cfg.lam > 0.0:
        m.flat[: m.n_weight] *= 1.0 - cfg.lr * cfg.lam
    m.flat -= s


@dataclass
class TrainingTrace:
    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)


def _eval_mse(m: ModelParams, x: np.ndarray, chunk: int = 4096) -> float:
    if x.shape[0] == 0:
        return float("nan")
    total = 0.0
    for k in range(0, x.shape[0], chunk):
        xb = x[k : k + chunk]
        out, _ = forward(m, xb)
        d = out - xb
        total += float(np.einsum("ij,ij->", d, d))
    return total / x.shape[0]


def train(
    data,
    arch: ArchSpec,
    cfg: TrainConfig,
    hooks: tuple = (),
) -> tuple[ModelParams, TrainingTrace]:
    """Shuffled mini-batch training with decoupled weight decay.

    ``data`` is a SnapshotSet or an (N, d_u) array.  A seeded permutation
    takes ``test_fraction`` of the rows as the test split.  Hooks are
    callables with an ``epochs`` attribute; each is invoked as
    ``hook(epoch, model)`` after that many epochs have completed (epoch 0
    fires on the untouched initialization).  Deterministic given the seed.
    """
    x = np.asarray(getattr(data, "data", data), dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.d_u:
        raise InvalidInputError(f"data has shape {x.shape}, expected (*, {arch.d_u})")

    rng = seeded_rng(cfg.seed)
    perm = rng.permutation(x.shape[0])
    n_test = int(round(cfg.test_fraction * x.shape[0]))
    test_x = x[perm[:n_test]]
    train_x = x[perm[n_test:]]
    if train_x.shape[0] == 0:
        raise InvalidInputError("empty training split")

    model = init_model(arch, rng)
    grads = GradSet(arch)
    state = AdamWState(model.flat.shape[0])
    trace = TrainingTrace()

    def fire(epoch):
        for h in hooks:
            if epoch in getattr(h, "epochs", ()):
                h(epoch, model)

    fire(0)
    n_train = train_x.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_train)
        epoch_mse = 0.0
        n_batches = 0
        for k in range(0, n_train, cfg.batch):
            batch = train_x[order[k : k + cfg.batch]]
            try:
                mse, grads = backward(model, batch, grads)
            except TrainingDivergedError:
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}", trace=trace
                ) from None
            adamw_step(model, grads, state, cfg)
            epoch_mse += mse
            n_batches += 1
        trace.epochs.append(epoch)
        trace.train_mse.append(epoch_mse / n_batches)
        trace.test_mse.append(_eval_mse(model, test_x))
        fire(epoch)
    return model, trace


def save_checkpoint(path, model: ModelParams) -> None:
    """Binary checkpoint: magic, version u32, arch JSON (u32 length), params."""
    arch_json = model.arch.to_json().encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(arch_json)))
    buf.write(arch_json)
    buf.write(model.flat.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"bad checkpoint magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    (n_json,) = struct.unpack("<I", raw[8:12])
    arch = ArchSpec.from_json(raw[12 : 12 + n_json].decode("utf-8"))
    flat = np.frombuffer(raw[12 + n_json :], dtype="<f8").copy()
    return ModelParams(arch, flat)
