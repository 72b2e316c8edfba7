"""Latent generation stack: prompt embedding, pixel autoencoder,
noise schedule, conditional denoiser, and the deterministic reverse
sampler that turns (prompt, initial noise) into a latent feature.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionError, ScheduleError, TrainingError
from .util import as_rng, stable_word_seed


# ---------------------------------------------------------------------------
# prompt embedding

@dataclass
class PromptEmbedding:
    """Token embedding matrix [max_tokens, embed_dim]; padding rows are zero."""
    values: np.ndarray
    token_count: int
    truncated: bool = False

    def pooled(self):
        return self.values.mean(axis=0)


def _token_vector(token, embed_dim):
    rng = np.random.default_rng(stable_word_seed(token, "embed"))
    v = rng.standard_normal(embed_dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def embed_prompt(text, max_tokens=8, embed_dim=32) -> PromptEmbedding:
    """Hash each token to a fixed unit vector; deterministic per text.

    Prompts longer than ``max_tokens`` are truncated and flagged.
    """
    tokens = text.lower().split()
    if not tokens:
        raise ValueError("prompt is empty after trimming")
    truncated = len(tokens) > max_tokens
    tokens = tokens[:max_tokens]
    values = np.zeros((max_tokens, embed_dim), dtype=np.float32)
    for i, tok in enumerate(tokens):
        values[i] = _token_vector(tok, embed_dim)
    return PromptEmbedding(values, len(tokens), truncated)


# ---------------------------------------------------------------------------
# noise schedule and diffusion algebra

@dataclass
class NoiseSchedule:
    """Per-step noise variances and their running products.

    ``betas[t-1]`` is the variance added at step t; ``alpha_bars[t]`` is the
    cumulative product of (1 - beta) with ``alpha_bars[0] == 1``. ``sigmas[t]``
    is the reverse-step noise level (all zero for deterministic sampling).
    """
    betas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    @property
    def steps(self):
        return len(self.betas)

    def validate(self):
        b = self.betas
        if len(b) < 1 or b[0] <= 0 or b[-1] >= 1 or np.any(np.diff(b) < 0):
            raise ScheduleError("betas must be nondecreasing within (0, 1)")
        if self.alpha_bars[0] != 1.0 or np.any(np.diff(self.alpha_bars) >= 0):
            raise ScheduleError("alpha_bars must start at 1 and strictly decrease")
        for t in range(1, self.steps + 1):
            if self.sigmas[t] ** 2 > 1.0 - self.alpha_bars[t - 1] + 1e-12:
                raise ScheduleError(f"sigma at step {t} exceeds the variance budget")
        return self


def make_schedule(steps, beta_start=None, beta_end=None, sigmas=None):
    """Linear variance schedule; the endpoints rescale with step count so a
    short schedule destroys as much signal as the 50-step reference."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if beta_start is None:
        beta_start = 1e-4 * (50.0 / steps)
    if beta_end is None:
        beta_end = 0.02 * (50.0 / steps)
    betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    if sigmas is None:
        sigmas = np.zeros(steps + 1, dtype=np.float64)
    return NoiseSchedule(betas, alpha_bars, np.asarray(sigmas, dtype=np.float64)).validate()


def diffuse_forward(z0, t, noise, schedule: NoiseSchedule):
    """Closed-form jump to step t: sqrt(abar_t) z0 + sqrt(1 - abar_t) noise."""
    if not 0 <= t <= schedule.steps:
        raise ValueError(f"step {t} outside [0, {schedule.steps}]")
    z0 = np.asarray(z0)
    noise = np.asarray(noise)
    if noise.shape != z0.shape:
        raise DimensionError("noise shape must match z0")
    abar = schedule.alpha_bars[t]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * noise


def predict_z0(denoiser, z_t, t, embedding, schedule: NoiseSchedule):
    """Denoised estimate: (z_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t)."""
    if t < 1:
        raise ValueError("prediction requires t >= 1")
    eps = denoiser.predict(z_t, t, embedding)
    abar = schedule.alpha_bars[t]
    return (z_t - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)


def ddim_step(denoiser, z_t, t, embedding, schedule: NoiseSchedule,
              step_noise=None):
    """One reverse step z_t -> z_{t-1}.

    Combines the denoised estimate with the predicted noise direction and,
    when sigma_t > 0, fresh Gaussian noise.
    """
    if t < 1:
        raise ValueError("reverse step requires t >= 1")
    abar_prev = schedule.alpha_bars[t - 1]
    sigma = schedule.sigmas[t]
    radicand = 1.0 - abar_prev - sigma * sigma
    if radicand < -1e-12:
        raise ScheduleError(f"sigma at step {t} exceeds the variance budget")
    eps = denoiser.predict(z_t, t, embedding)
    abar = schedule.alpha_bars[t]
    z0 = (z_t - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)
    out = np.sqrt(abar_prev) * z0 + np.sqrt(max(radicand, 0.0)) * eps
    if sigma > 0:
        if step_noise is None:
            raise ValueError("step_noise required when sigma > 0")
        out = out + sigma * np.asarray(step_noise)
    return out


def generate_latent(denoiser, prompt, initial_noise, schedule: NoiseSchedule):
    """Run the reverse chain from t = steps down to 1.

    ``prompt`` may be a string or a prepared PromptEmbedding. With all
    sigmas zero this is a pure function of (denoiser, prompt, noise).
    """
    if isinstance(prompt, str):
        prompt = embed_prompt(prompt, denoiser.max_tokens, denoiser.embed_dim)
    z = np.asarray(initial_noise, dtype=np.float32)
    for t in range(schedule.steps, 0, -1):
        z = ddim_step(denoiser, z, t, prompt, schedule).astype(np.float32)
    return z


def time_embedding(t, dim):
    """Sinusoidal embedding of an integer step index."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t * freqs
    emb = np.empty(dim, dtype=np.float32)
    emb[0::2] = np.sin(ang)
    emb[1::2] = np.cos(ang[:dim - half])
    return emb


# ---------------------------------------------------------------------------
# denoiser

class Denoiser:
    """Dense noise-prediction network conditioned on step and prompt.

    Input is the flattened noisy latent concatenated with a sinusoidal
    step embedding and the pooled prompt embedding; output has the latent
    shape.
    """

    def __init__(self, latent_shape, hidden=128, time_dim=16,
                 max_tokens=8, embed_dim=32, rng=None):
        rng = as_rng(rng)
        self.latent_shape = tuple(latent_shape)
        self.latent_size = int(np.prod(latent_shape))
        self.time_dim = time_dim
        self.max_tokens = max_tokens
        self.embed_dim = embed_dim
        in_dim = self.latent_size + time_dim + embed_dim
        self.net = nn.Network([
            nn.DenseLayer(in_dim, hidden, "relu", rng, "h1"),
            nn.DenseLayer(hidden, hidden, "relu", rng, "h2"),
            nn.DenseLayer(hidden, self.latent_size, "none", rng, "out"),
        ], name="denoiser")

    def predict(self, z_t, t, embedding):
        """Noise estimate with the same shape as ``z_t`` (no cache)."""
        z_t = np.asarray(z_t)
        if z_t.size != self.latent_size:
            raise DimensionError(
                f"latent of size {z_t.size}, denoiser expects {self.latent_size}")
        feats = np.concatenate([
            z_t.reshape(-1).astype(np.float32),
            time_embedding(t, self.time_dim),
            embedding.pooled().astype(np.float32)])
        out = self.net.forward(feats, cache=False)
        return out.reshape(z_t.shape)


@dataclass
class DenoiserTrainConfig:
    steps: int = 1500
    batch_size: int = 16
    learning_rate: float = 1e-3
    hidden: int = 128
    time_dim: int = 16
    seed: int = 0


def denoiser_loss(denoiser, z0_batch, embeddings, schedule, t_steps, noises):
    """Mean squared noise-prediction error over a prepared batch."""
    total = 0.0
    for z0, emb, t, eps in zip(z0_batch, embeddings, t_steps, noises):
        z_t = diffuse_forward(z0, t, eps, schedule)
        err = denoiser.predict(z_t, t, emb) - eps
        total += float(np.mean(err * err))
    return total / len(z0_batch)


def train_denoiser(pair, dataset, schedule, config: DenoiserTrainConfig):
    """Fit the noise predictor on corpus (prompt, image) pairs.

    For each sample a step t is drawn uniformly from [1, T], the encoded
    latent is diffused to z_t with fresh Gaussian noise, and the network
    regresses that noise. Returns (denoiser, per-step loss history).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    rng = as_rng(config.seed)
    denoiser = Denoiser(pair.latent_shape, config.hidden, config.time_dim,
                        rng=rng)
    prompts = [p for p, _ in dataset]
    latents = np.stack([pair.encode(img).reshape(-1) for _, img in dataset])
    embeddings = [embed_prompt(p, denoiser.max_tokens, denoiser.embed_dim)
                  for p in prompts]
    opt = nn.Adam(config.learning_rate)
    history = []
    names = denoiser.net.param_names()
    for _ in range(config.steps):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        ts = rng.integers(1, schedule.steps + 1, size=config.batch_size)
        eps = rng.standard_normal((config.batch_size, denoiser.latent_size))
        feats = []
        for j, i in enumerate(idx):
            z_t = diffuse_forward(latents[i], int(ts[j]), eps[j], schedule)
            feats.append(np.concatenate([
                z_t.astype(np.float32),
                time_embedding(int(ts[j]), denoiser.time_dim),
                embeddings[i].pooled()]))
        feats = np.stack(feats)
        pred = denoiser.net.forward(feats, cache=True)
        diff = pred - eps.astype(np.float32)
        loss = float(np.mean(diff * diff))
        if not np.isfinite(loss):
            raise TrainingError("denoiser loss is not finite")
        history.append(loss)
        g = (2.0 / diff.size) * diff
        _, grads = denoiser.net.backward(g)
        opt.step(denoiser.net.params(), grads, names)
    return denoiser, history


# ---------------------------------------------------------------------------
# pixel <-> latent autoencoder

class AutoencoderPair:
    """Dense encoder (pixels -> latent) and decoder (latent -> pixels)."""

    def __init__(self, image_shape, latent_shape, hidden=256, rng=None):
        rng = as_rng(rng)
        self.image_shape = tuple(image_shape)
        self.latent_shape = tuple(latent_shape)
        pixels = int(np.prod(image_shape))
        latent = int(np.prod(latent_shape))
        self.encoder = nn.Network([
            nn.DenseLayer(pixels, hidden, "relu", rng, "e1"),
            nn.DenseLayer(hidden, latent, "none", rng, "e2"),
        ], name="encoder")
        self.decoder = nn.Network([
            nn.DenseLayer(latent, hidden, "relu", rng, "d1"),
            nn.DenseLayer(hidden, pixels, "none", rng, "d2"),
        ], name="decoder")

    def encode(self, image):
        """Map an image (or batch) into latent space."""
        img = np.asarray(image, dtype=np.float32)
        if img.shape[-len(self.image_shape):] != self.image_shape:
            raise DimensionError(
                f"image shape {img.shape} does not end with {self.image_shape}")
        flat = img.reshape(-1, int(np.prod(self.image_shape)))
        z = self.encoder.forward(flat, cache=False)
        shape = self.latent_shape if img.shape == self.image_shape \
            else (flat.shape[0],) + self.latent_shape
        return z.reshape(shape)

    def decode(self, latent):
        """Map a latent (or batch) back to pixel space, clamped to [0, 1]."""
        z = np.asarray(latent, dtype=np.float32)
        size = int(np.prod(self.latent_shape))
        if z.size == 0 or z.size % size:
            raise DimensionError(
                f"latent of size {z.size} is not a multiple of {size}")
        single = z.size == size
        flat = z.reshape(-1, size)
        out = self.decoder.forward(flat, cache=False)
        out = np.clip(out, 0.0, 1.0)
        shape = self.image_shape if single else (flat.shape[0],) + self.image_shape
        return out.reshape(shape)


def encode_image(pair: AutoencoderPair, image):
    return pair.encode(image)


def decode_latent(pair: AutoencoderPair, latent):
    return pair.decode(latent)


@dataclass
class AutoencoderTrainConfig:
    steps: int = 800
    batch_size: int = 16
    learning_rate: float = 1e-3
    center_penalty: float = 1e-2   # pulls latents toward zero mean
    hidden: int = 256
    seed: int = 0


def train_autoencoder(images, image_shape, latent_shape,
                      config: AutoencoderTrainConfig):
    """Minimize reconstruction MSE plus a small penalty on latent energy.

    Returns (pair, per-step loss history). The decoder is trained on its
    raw output; clamping to [0, 1] happens only at inference.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("expected a non-empty batch of images [N, C, H, W]")
    rng = as_rng(config.seed)
    pair = AutoencoderPair(image_shape, latent_shape, config.hidden, rng)
    flat = images.reshape(images.shape[0], -1)
    opt = nn.Adam(config.learning_rate)
    params = pair.encoder.params() + pair.decoder.params()
    names = pair.encoder.param_names() + pair.decoder.param_names()
    history = []
    lam = config.center_penalty
    for _ in range(config.steps):
        idx = rng.integers(0, flat.shape[0], size=config.batch_size)
        x = flat[idx]
        z = pair.encoder.forward(x, cache=True)
        recon = pair.decoder.forward(z, cache=True)
        diff = recon - x
        loss = float(np.mean(diff * diff) + lam * np.mean(z * z))
        if not np.isfinite(loss):
            raise TrainingError("autoencoder loss is not finite")
        history.append(loss)
        g_recon = (2.0 / diff.size) * diff
        g_z_dec, dec_grads = pair.decoder.backward(g_recon)
        g_z = g_z_dec + (2.0 * lam / z.size) * z
        _, enc_grads = pair.encoder.backward(g_z)
        opt.step(params, enc_grads + dec_grads, names)
    return pair, history
