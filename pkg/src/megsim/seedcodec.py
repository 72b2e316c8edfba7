"""Learned compression coding between latent features and channel seeds.

The encoder flattens a latent and projects it to the seed length; the
decoder is a three-layer relu stack with normalization between layers and
a residual connection from its first projection. One pair is trained per
(compression rate, training SNR) because the optimal weights change with
both.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import CodecError, DimensionError, TrainingError
from .util import as_rng

_EnumKinds = ("awgn", "rayleigh_block")


def seed_length(latent_size, rate) -> int:
    """Seed symbols for a latent of ``latent_size`` at a compression rate.

    Round-to-nearest of rate * latent_size; the result must stay strictly
    between 0 and the latent size.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError(f"compression rate {rate} outside (0, 1)")
    n = int(round(rate * latent_size))
    if not 0 < n < latent_size:
        raise ValueError(
            f"rate {rate} degenerates for latent size {latent_size}")
    return n


@dataclass
class Seed:
    """Unit-power symbol vector plus the metadata the receiver needs."""
    symbols: np.ndarray
    latent_shape: tuple
    rate: float
    scale: float


@dataclass
class CodecTrainConfig:
    epochs: int = 150
    learning_rate: float = 1e-3
    batch_size: int = 16
    train_snr_db: float | None = 20.0   # None means a noiseless channel
    channel_kind: str = "rayleigh_block"
    hidden: int = 96
    seed: int = 0


def codec_descriptors(latent_size, seed_len, hidden):
    """Layer metadata rows for one codec, labeled for reporting."""
    encoder = [
        ("Flatten", ("flatten",)),
        (f"Linear({latent_size}->{seed_len})", ("dense", latent_size, seed_len)),
    ]
    decoder = [
        (f"Relu({seed_len}->{latent_size})", ("dense", seed_len, latent_size)),
        (f"Normalize({latent_size})", ("normalize", latent_size)),
        (f"Relu({latent_size}->{hidden})", ("dense", latent_size, hidden)),
        (f"Normalize({hidden})", ("normalize", hidden)),
        (f"Relu({hidden}->{latent_size})", ("dense", hidden, latent_size)),
        (f"LayerNorm({latent_size})", ("layernorm", latent_size)),
        ("Residual", ("residual",)),
        ("Unflatten", ("unflatten",)),
    ]
    return encoder, decoder


class CodecPair:
    """Encoder/decoder networks for one (rate, training SNR) setting."""

    def __init__(self, latent_shape, rate, hidden=96, train_snr_db=None,
                 rng=None):
        rng = as_rng(rng)
        self.latent_shape = tuple(latent_shape)
        self.latent_size = int(np.prod(latent_shape))
        self.rate = float(rate)
        self.hidden = int(hidden)
        self.train_snr_db = train_snr_db
        self.seed_len = seed_length(self.latent_size, rate)
        n, L, h = self.latent_size, self.seed_len, self.hidden
        self.enc = nn.DenseLayer(n, L, "none", rng, "enc")
        self.d1 = nn.DenseLayer(L, n, "relu", rng, "d1")
        self.n1 = nn.Normalize(n, name="n1")
        self.d2 = nn.DenseLayer(n, h, "relu", rng, "d2")
        self.n2 = nn.Normalize(h, name="n2")
        self.d3 = nn.DenseLayer(h, n, "relu", rng, "d3")
        self.ln = nn.LayerNorm(n, name="ln")

    # -- plumbing ----------------------------------------------------------

    def _layers(self):
        return [self.enc, self.d1, self.n1, self.d2, self.n2, self.d3, self.ln]

    def params(self):
        return [p for layer in self._layers() for p in layer.params()]

    def param_names(self):
        return [n for layer in self._layers() for n in layer.param_names()]

    @property
    def param_count(self):
        return sum(layer.param_count for layer in self._layers())

    def clone_as(self, dtype):
        dup = CodecPair.__new__(CodecPair)
        dup.latent_shape = self.latent_shape
        dup.latent_size = self.latent_size
        dup.rate = self.rate
        dup.hidden = self.hidden
        dup.train_snr_db = self.train_snr_db
        dup.seed_len = self.seed_len
        for attr in ("enc", "d1", "n1", "d2", "n2", "d3", "ln"):
            setattr(dup, attr, getattr(self, attr).clone_as(dtype))
        return dup

    # -- forward maps ------------------------------------------------------

    def encode_flat(self, z_flat, cache=False):
        return self.enc.forward(z_flat, cache=cache)

    def decode_flat(self, symbols, cache=False):
        """Decoder stack with the residual add of its first projection."""
        h1 = self.d1.forward(symbols, cache=cache)
        x = self.n1.forward(h1, cache=cache)
        x = self.d2.forward(x, cache=cache)
        x = self.n2.forward(x, cache=cache)
        x = self.d3.forward(x, cache=cache)
        x = self.ln.forward(x, cache=cache)
        return x + h1

    def _decode_backward(self, upstream):
        """Gradients through decode_flat; returns (grad_symbols, param grads)."""
        g_ln, g_gain, g_offset = self.ln.backward(upstream)
        g_d3, gw3, gb3 = self.d3.backward(g_ln)
        (g_n2,) = self.n2.backward(g_d3)
        g_d2, gw2, gb2 = self.d2.backward(g_n2)
        (g_n1,) = self.n1.backward(g_d2)
        g_h1 = g_n1 + upstream          # residual branch
        g_sym, gw1, gb1 = self.d1.backward(g_h1)
        return g_sym, [gw1, gb1, gw2, gb2, gw3, gb3, g_gain, g_offset]

    # -- public codec operations --------------------------------------------

    def compress(self, latent) -> Seed:
        """Flatten, encode, and normalize to unit average symbol power."""
        z = np.asarray(latent, dtype=np.float32)
        if z.shape != self.latent_shape and z.size != self.latent_size:
            raise DimensionError(
                f"latent shape {z.shape} does not match codec "
                f"shape {self.latent_shape}")
        raw = self.encode_flat(z.reshape(-1), cache=False)
        scale = float(np.sqrt(np.mean(raw.astype(np.float64) ** 2)))
        if scale == 0.0:
            raise CodecError("encoder produced a zero-power seed")
        symbols = (raw / scale).astype(np.float32)
        return Seed(symbols, self.latent_shape, self.rate, scale)

    def decompress(self, received, scale):
        """Undo the power normalization, decode, and reshape to the latent."""
        x = np.asarray(received)
        if x.size != self.seed_len:
            raise CodecError(
                f"received {x.size} symbols, codec expects {self.seed_len}")
        u = (x.reshape(-1) * scale).astype(np.float32)
        z = self.decode_flat(u, cache=False)
        return z.reshape(self.latent_shape)

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra=None):
        meta = {"rate": self.rate, "hidden": self.hidden,
                "latent_shape": list(self.latent_shape),
                "train_snr_db": self.train_snr_db}
        meta.update(extra or {})
        net = nn.Network(self._layers(), name="codec")
        nn.save_network(path, net, extra=meta)

    @classmethod
    def load(cls, path):
        net, meta = nn.load_network(path)
        pair = cls(tuple(meta["latent_shape"]), meta["rate"], meta["hidden"],
                   meta.get("train_snr_db"))
        for ours, theirs in zip(pair._layers(), net.layers):
            for p, q in zip(ours.params(), theirs.params()):
                p[...] = q
        return pair, meta


def compress(pair: CodecPair, latent) -> Seed:
    return pair.compress(latent)


def decompress(pair: CodecPair, received, scale):
    return pair.decompress(received, scale)


# ---------------------------------------------------------------------------
# end-to-end training through the channel

def _transmission_forward(pair: CodecPair, z_flat, eff_noise, cache):
    """Shared forward pass for loss and gradients.

    ``eff_noise`` is the receiver-referred noise per sample, i.e. channel
    noise divided by gain and power amplitude. The decoder then sees
    ``x + scale * eff_noise`` because normalization and equalization cancel
    everywhere except on the noise term.
    """
    raw = pair.enc.forward(z_flat, cache=cache)
    power = np.mean(raw.astype(np.float64) ** 2, axis=1, keepdims=True)
    scale = np.sqrt(np.maximum(power, 1e-24)).astype(raw.dtype)
    u = raw + scale * eff_noise.astype(raw.dtype)
    z_hat = pair.decode_flat(u, cache=cache)
    diff = z_hat - z_flat
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    return loss, raw, scale, diff


def transmission_loss(pair: CodecPair, latents, eff_noise):
    """Per-element MSE of latents recovered through the noisy channel."""
    z = np.asarray(latents).reshape(len(latents), -1)
    loss, _, _, _ = _transmission_forward(pair, z, eff_noise, cache=False)
    return loss


def transmission_gradients(pair: CodecPair, latents, eff_noise):
    """Analytic gradients of :func:`transmission_loss` for every parameter.

    The fading gain and noise draw are treated as constants; the
    per-sample normalization scale is differentiated exactly.
    """
    z = np.asarray(latents).reshape(len(latents), -1)
    loss, raw, scale, diff = _transmission_forward(pair, z, eff_noise,
                                                   cache=True)
    if not np.isfinite(loss):
        raise TrainingError("codec loss is not finite")
    g_zhat = (2.0 / diff.size) * diff
    g_u, dec_grads = pair._decode_backward(g_zhat)
    # u = raw + scale(raw) * noise, with scale the per-row RMS of raw
    inner = np.sum(g_u * eff_noise, axis=1, keepdims=True)
    g_raw = g_u + inner * raw / (raw.shape[1] * scale)
    _, gw_enc, gb_enc = pair.enc.backward(g_raw)
    return loss, [gw_enc, gb_enc] + dec_grads


def train_codec(latents, config: CodecTrainConfig, rate=None,
                latent_shape=None):
    """Joint encoder/decoder training through the fading channel.

    Fresh fading and noise are drawn for every batch at the configured
    training SNR; a ``train_snr_db`` of None trains against a clean
    channel, reducing the codec to a plain autoencoder on latents.
    Returns (pair, per-epoch mean loss history).
    """
    latents = np.asarray(latents, dtype=np.float32)
    if latents.ndim < 2 or latents.shape[0] == 0:
        raise ValueError("expected a non-empty batch of latents")
    if latent_shape is None:
        latent_shape = latents.shape[1:]
    if rate is None:
        raise ValueError("a compression rate is required")
    if config.channel_kind not in _EnumKinds:
        raise ValueError(f"unknown channel kind {config.channel_kind!r}")
    rng = as_rng(config.seed)
    pair = CodecPair(latent_shape, rate, config.hidden,
                     config.train_snr_db, rng)
    flat = latents.reshape(latents.shape[0], -1)
    if config.train_snr_db is None:
        noise_std = 0.0
    else:
        noise_std = np.sqrt(1.0 / 10.0 ** (config.train_snr_db / 10.0))
    opt = nn.Adam(config.learning_rate)
    names = pair.param_names()
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(flat.shape[0])
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = flat[order[start:start + config.batch_size]]
            if noise_std > 0:
                if config.channel_kind == "rayleigh_block":
                    gains = rng.rayleigh(scale=1.0 / np.sqrt(2.0),
                                         size=(batch.shape[0], 1))
                    gains = np.maximum(gains, 1e-3)
                else:
                    gains = np.ones((batch.shape[0], 1))
                noise = rng.normal(0.0, noise_std,
                                   size=(batch.shape[0], pair.seed_len))
                eff_noise = noise / gains
            else:
                eff_noise = np.zeros((batch.shape[0], pair.seed_len))
            loss, grads = transmission_gradients(pair, batch, eff_noise)
            epoch_losses.append(loss)
            opt.step(pair.params(), grads, names)
        history.append(float(np.mean(epoch_losses)))
    return pair, history
