"""Point-to-point link simulation: block fading, additive noise, power
scaling, and zero-forcing equalization at the receiver.

The baseband is real-valued; one positive gain per coherence block stands
in for the fading magnitude, and allocated power enters as an amplitude
factor sqrt(p) so that transmitted energy scales linearly with p.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ChannelErasure
from .util import as_rng

KINDS = ("awgn", "rayleigh_block")


def snr_to_noise_std(snr_db, signal_power=1.0):
    """Noise standard deviation realizing an SNR against a known signal power."""
    if signal_power <= 0:
        raise ValueError("signal power must be positive")
    return float(np.sqrt(signal_power / 10.0 ** (snr_db / 10.0)))


@dataclass
class ChannelModel:
    kind: str = "rayleigh_block"
    block_length: int = 16
    noise_std: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.block_length < 1:
            raise ValueError("block length must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise std must be >= 0")


@dataclass
class FadingTrace:
    """Per-block channel magnitudes; unit average power for Rayleigh fading."""
    gains: np.ndarray
    block_length: int
    seed: int | None = None

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if np.any(self.gains <= 0):
            raise ValueError("all block gains must be positive")

    def __len__(self):
        return len(self.gains)


def sample_fading_trace(model: ChannelModel, num_blocks, rng) -> FadingTrace:
    """Draw per-block gains: all ones for AWGN, Rayleigh magnitudes with
    E[h^2] = 1 for block fading."""
    if num_blocks < 1:
        raise ValueError("num_blocks must be >= 1")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = as_rng(rng)
    if model.kind == "awgn":
        gains = np.ones(num_blocks)
    else:
        # Rayleigh scale 1/sqrt(2) gives E[h^2] = 2 * scale^2 = 1
        gains = rng.rayleigh(scale=1.0 / np.sqrt(2.0), size=num_blocks)
        gains = np.maximum(gains, 1e-12)
    return FadingTrace(gains, model.block_length, seed)


def transmit(symbols, gain, power, noise_std, rng):
    """One block over the link: y = h * sqrt(p) * x + n."""
    if power < 0:
        raise ValueError("power must be >= 0")
    x = np.asarray(symbols, dtype=np.float64)
    y = gain * np.sqrt(power) * x
    if noise_std > 0:
        y = y + as_rng(rng).normal(0.0, noise_std, size=x.shape)
    return y


def equalize(received, gain, power):
    """Zero-forcing estimate x_hat = y / (h * sqrt(p)).

    Raises :class:`ChannelErasure` when the effective gain is zero; the
    caller substitutes zeros and marks the block lost.
    """
    eff = gain * np.sqrt(power) if power > 0 else 0.0
    if eff <= 0:
        raise ChannelErasure("block transmitted with zero effective gain")
    return np.asarray(received, dtype=np.float64) / eff


def export_trace_csv(trace: FadingTrace, path):
    """Write one trace as (block, gain) rows; block length rides in a comment."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# megsim fading trace v1 block_length={trace.block_length}"
                 f" seed={trace.seed if trace.seed is not None else ''}\n")
        writer = csv.writer(fh)
        writer.writerow(["block", "gain"])
        for i, h in enumerate(trace.gains):
            writer.writerow([i, repr(float(h))])


def import_trace_csv(path) -> FadingTrace:
    with open(path, newline="") as fh:
        first = fh.readline()
        block_length, seed = 1, None
        if first.startswith("#"):
            for tok in first.split():
                if tok.startswith("block_length="):
                    block_length = int(tok.split("=", 1)[1])
                if tok.startswith("seed=") and tok.split("=", 1)[1]:
                    seed = int(tok.split("=", 1)[1])
        else:
            fh.seek(0)
        rows = list(csv.reader(fh))
    gains = [float(g) for i, g in rows[1:]]
    return FadingTrace(np.array(gains), block_length, seed)


def export_trace_set(traces, path):
    """Write many traces to one CSV as (trace, block, gain) rows."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# megsim fading trace set v1 "
                 f"block_length={traces[0].block_length}\n")
        writer = csv.writer(fh)
        writer.writerow(["trace", "block", "gain"])
        for t, trace in enumerate(traces):
            for i, h in enumerate(trace.gains):
                writer.writerow([t, i, repr(float(h))])


def import_trace_set(path):
    with open(path, newline="") as fh:
        first = fh.readline()
        block_length = 1
        if first.startswith("#"):
            for tok in first.split():
                if tok.startswith("block_length="):
                    block_length = int(tok.split("=", 1)[1])
        else:
            fh.seek(0)
        rows = list(csv.reader(fh))[1:]
    by_trace = {}
    for t, _, g in rows:
        by_trace.setdefault(int(t), []).append(float(g))
    return [FadingTrace(np.array(by_trace[t]), block_length)
            for t in sorted(by_trace)]
