"""Image quality and transmission cost metrics.

The Frechet score uses a frozen random-weight feature extractor instead
of a pretrained classifier, so it is reported everywhere as a proxy: it
preserves the distance machinery and relative ordering, not absolute
published magnitudes.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionError
from .seedcodec import seed_length

EXTRACTOR_SEED = 0xFEED
REPORT_SCHEMA = 1
MODES = ("centralized", "raw_feature", "meg")


def mse(generated, reference):
    """Mean squared per-pixel difference (all channels)."""
    a = np.asarray(generated, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def psnr(generated, reference, peak):
    """10 log10(peak^2 / MSE) in dB; identical inputs give +inf."""
    if peak <= 0:
        raise ValueError("peak value must be positive")
    err = mse(generated, reference)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def quantized_view(image):
    """8-bit view of a unit-range image, for peak-255 metric variants."""
    arr = np.asarray(image)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return np.round(arr * 255.0).astype(np.uint8)


class FeatureExtractor:
    """Frozen tanh network mapping an image to a fixed-length feature vector.

    Parameters are drawn once from a fixed seed and never trained, so the
    same image always maps to the same features.
    """

    def __init__(self, input_size, feature_dim=64, hidden=128,
                 seed=EXTRACTOR_SEED):
        rng = np.random.default_rng(seed)
        self.input_size = int(input_size)
        self.feature_dim = int(feature_dim)
        self.net = nn.Network([
            nn.DenseLayer(input_size, hidden, "tanh", rng, "f1"),
            nn.DenseLayer(hidden, feature_dim, "tanh", rng, "f2"),
        ], name="extractor")

    def extract(self, images):
        """Features for a batch of images, shape [N, feature_dim] (float64)."""
        batch = np.asarray(images, dtype=np.float32)
        flat = batch.reshape(batch.shape[0], -1)
        if flat.shape[1] != self.input_size:
            raise DimensionError(
                f"extractor built for {self.input_size} values per image, "
                f"got {flat.shape[1]}")
        return self.net.forward(flat, cache=False).astype(np.float64)


def _psd_sqrt(matrix, floor=1e-10):
    """Symmetric matrix square root with eigenvalues clamped at zero."""
    vals, vecs = np.linalg.eigh(matrix)
    vals = np.where(vals < floor, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(features_a, features_b):
    """Frechet distance between Gaussian fits of two feature batches.

    Uses the symmetric-product form sqrt(C_b^1/2 C_a C_b^1/2) for the
    cross term; covariances use 1/(n-1) normalization.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("feature batches must be 2-d [N, F]")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("each batch needs at least 2 samples")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    diff = mu_a - mu_b
    root_b = _psd_sqrt(cov_b)
    cross = _psd_sqrt(root_b @ cov_a @ root_b)
    value = float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * cross))
    if not np.isfinite(value):
        raise FloatingPointError("Frechet distance did not converge")
    return max(value, 0.0)


def fid(batch_generated, batch_reference, extractor: FeatureExtractor):
    """Frechet distance between the feature clouds of two image batches."""
    return frechet_distance(extractor.extract(batch_generated),
                            extractor.extract(batch_reference))


def symbol_count(mode, image_shape, downsample, rate=None, latent_channels=None):
    """Real symbols on the wire for one generation.

    ``centralized`` sends every pixel value; ``raw_feature`` sends the
    latent; ``meg`` sends the compressed seed. ``latent_channels`` defaults
    to the image channel count.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    channels, height, width = image_shape
    if mode == "centralized":
        return channels * height * width
    z_ch = channels if latent_channels is None else latent_channels
    latent = z_ch * (height // downsample) * (width // downsample)
    if mode == "raw_feature":
        return latent
    if rate is None:
        raise ValueError("meg mode needs a compression rate")
    return seed_length(latent, rate)


@dataclass
class MetricReport:
    """Quality and cost numbers for one end-to-end generation."""
    psnr_db: float
    fid_score: float
    mse: float
    symbols: int
    config_hash: str = ""

    CSV_HEADER = "psnr_db,fid_score,mse,symbols,config_hash"

    def validate(self):
        for name in ("fid_score", "mse"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if math.isnan(self.psnr_db):
            raise ValueError("psnr_db may be +inf but not NaN")
        return self

    def to_csv_row(self):
        return (f"{self.psnr_db!r},{self.fid_score!r},{self.mse!r},"
                f"{self.symbols},{self.config_hash}")
