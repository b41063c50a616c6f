"""Space-time tracking of rank formation during training.

"Space" is depth in the network (layer tags EN, E, 1..n, D); "time" is the
training epoch.  Traces hold singular spectra of per-layer representations,
per-layer weight gradients, cumulative effective weight products, and the
latent covariance itself, all computed on a frozen probe batch so that
epoch-to-epoch changes reflect training alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network as nw
from .analysis import SpectrumReport, spectrum_report
from .linalg import covariance, sym_eig_desc

__all__ = [
    "RankTrace",
    "DEFAULT_HOOK_EPOCHS",
    "snapshot_representations",
    "snapshot_gradients",
    "effective_weights",
    "SpaceTimeRecorder",
    "write_traces_csv",
]

DEFAULT_HOOK_EPOCHS = (0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)

KIND_REPRESENTATION = "representation"
KIND_GRADIENT = "gradient"
KIND_EFFECTIVE_WEIGHT = "effective_weight"
KIND_LATENT_SPECTRUM = "latent_spectrum"


@dataclass
class RankTrace:
    kind: str
    layer: str
    epoch: int
    sigmas: np.ndarray

    def significant(self, threshold: float = 1e-6) -> int:
        s = self.sigmas
        if s.size == 0 or s[0] <= 0:
            return 0
        return int(np.sum(s / s[0] >= threshold))


def snapshot_representations(model: nw.ModelParams, probe_batch, epoch: int = -1) -> list[RankTrace]:
    """Covariance eigen-spectra of z_EN, z_E, z_1..z_n on the probe batch."""
    _, taps = nw.forward(model, probe_batch)
    traces = []
    for layer, z in taps.ordered():
        w, _ = sym_eig_desc(covariance(z))
        traces.append(RankTrace(KIND_REPRESENTATION, layer, epoch, w))
    return traces


def snapshot_gradients(model: nw.ModelParams, probe_batch, epoch: int = -1) -> list[RankTrace]:
    """Singular values of the weight-gradient matrices on the probe batch.

    Tracked layers: the last hidden encoder matrix (EN), the latent-producing
    encoder matrix (E), each internal square matrix (1..n), and the first
    decoder matrix (D).
    """
    _, grads = nw.backward(model, probe_batch)
    tracked: list[tuple[str, np.ndarray]] = []
    if len(grads.enc_w) > 1:
        tracked.append(("EN", grads.enc_w[-2]))
    tracked.append(("E", grads.enc_w[-1]))
    tracked += [(str(j + 1), g) for j, g in enumerate(grads.lin_w)]
    tracked.append(("D", grads.dec_w[0]))
    return [
        RankTrace(KIND_GRADIENT, layer, epoch, np.linalg.svd(g, compute_uv=False))
        for layer, g in tracked
    ]


def effective_weights(model: nw.ModelParams, epoch: int = -1) -> list[RankTrace]:
    """Singular values of the cumulative linear products.

    Products deepen from the latent-producing encoder matrix through each
    internal layer and finally the first decoder matrix: E, 1, .., n, D.
    """
    traces = []
    prod = model.enc_w[-1]
    traces.append(RankTrace(KIND_EFFECTIVE_WEIGHT, "E", epoch, np.linalg.svd(prod, compute_uv=False)))
    for j, w in enumerate(model.lin_w):
        prod = prod @ w
        traces.append(
            RankTrace(KIND_EFFECTIVE_WEIGHT, str(j + 1), epoch, np.linalg.svd(prod, compute_uv=False))
        )
    prod = prod @ model.dec_w[0]
    traces.append(RankTrace(KIND_EFFECTIVE_WEIGHT, "D", epoch, np.linalg.svd(prod, compute_uv=False)))
    return traces


class SpaceTimeRecorder:
    """Training hook that snapshots representations, gradients, effective
    weights, and the latent spectrum at the configured epochs."""

    def __init__(self, probe_batch, epochs=DEFAULT_HOOK_EPOCHS):
        self.probe = np.asarray(getattr(probe_batch, "data", probe_batch), dtype=np.float64)
        self.epochs = set(int(e) for e in epochs)
        self.traces: list[RankTrace] = []
        self.latent_reports: dict[int, SpectrumReport] = {}

    def __call__(self, epoch: int, model: nw.ModelParams) -> None:
        self.traces += snapshot_representations(model, self.probe, epoch)
        self.traces += snapshot_gradients(model, self.probe, epoch)
        self.traces += effective_weights(model, epoch)
        z = nw.encode(model, self.probe)
        w, _ = sym_eig_desc(covariance(z))
        self.traces.append(RankTrace(KIND_LATENT_SPECTRUM, "z", epoch, w))
        self.latent_reports[epoch] = spectrum_report(w)

    def latent_trace(self) -> dict[int, SpectrumReport]:
        """Epoch-indexed spectrum reports of the latent covariance."""
        return dict(sorted(self.latent_reports.items()))


def write_traces_csv(traces, path) -> None:
    """Long format: kind,layer,epoch,index,sigma (index is 1-based)."""
    lines = ["kind,layer,epoch,index,sigma"]
    for tr in traces:
        for i, s in enumerate(tr.sigmas, start=1):
            lines.append(f"{tr.kind},{tr.layer},{tr.epoch},{i},{s!r}")
    Path(path).write_text("\n".join(lines) + "\n")
