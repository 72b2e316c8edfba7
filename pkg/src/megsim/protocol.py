"""Edge-inferencing protocol: server/receiver state machines, the binary
seed frame, and the end-to-end driver that runs one generation (plus the
two benchmark transmission modes) over a shared fading trace.

Seed frame layout (little endian)::

    offset  size  field
    0       4     magic "MGSF"
    4       1     format version (1)
    5       2     compression rate, unsigned 0.16 fixed point
    7       6     latent shape, three u16 dims
    13      4     payload length in symbols, u32
    17      4     coherence block length, u32
    21      8     power normalization scale, f64
    29      4     CRC32 of bytes 0..29
    33      ...   payload, float32 symbols

Only the payload ever crosses the noisy channel; the header is control
information and is assumed delivered intact.
"""

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import channel as ch
from . import genmodel, metrics
from .errors import ChannelErasure, FrameError, ProtocolError
from .seedcodec import CodecPair, Seed, seed_length
from .util import as_rng, derive_seed

FRAME_MAGIC = b"MGSF"
FRAME_VERSION = 1
_HEADER = "<4sBH3HIId"
_HEADER_LEN = 29
RATE_FIXED_ONE = 1 << 16


# ---------------------------------------------------------------------------
# wire format

@dataclass
class SeedFrame:
    rate_fixed: int
    latent_shape: tuple
    block_length: int
    scale: float
    payload: np.ndarray

    @property
    def rate(self):
        return self.rate_fixed / RATE_FIXED_ONE

    def __eq__(self, other):
        return (isinstance(other, SeedFrame)
                and self.rate_fixed == other.rate_fixed
                and self.latent_shape == other.latent_shape
                and self.block_length == other.block_length
                and self.scale == other.scale
                and self.payload.tobytes() == other.payload.tobytes())


def frame_from_seed(seed: Seed, block_length: int) -> SeedFrame:
    """Wrap a seed for the wire; checks the payload/rate contract."""
    if len(seed.latent_shape) != 3:
        raise FrameError("latent shape must have three dimensions")
    expected = seed_length(int(np.prod(seed.latent_shape)), seed.rate)
    if seed.symbols.size != expected:
        raise FrameError(
            f"seed has {seed.symbols.size} symbols, rate implies {expected}")
    return SeedFrame(int(round(seed.rate * RATE_FIXED_ONE)),
                     tuple(seed.latent_shape), int(block_length),
                     float(seed.scale),
                     np.ascontiguousarray(seed.symbols, dtype="<f4"))


def encode_frame(frame: SeedFrame) -> bytes:
    header = struct.pack(_HEADER, FRAME_MAGIC, FRAME_VERSION,
                         frame.rate_fixed, *frame.latent_shape,
                         frame.payload.size, frame.block_length, frame.scale)
    crc = zlib.crc32(header)
    return header + crc.to_bytes(4, "little") + frame.payload.tobytes()


def decode_frame(data: bytes) -> SeedFrame:
    if len(data) < _HEADER_LEN + 4:
        raise FrameError("frame shorter than its header")
    header = data[:_HEADER_LEN]
    magic, version, rate_fixed, d0, d1, d2, payload_len, block_len, scale = \
        struct.unpack(_HEADER, header)
    if magic != FRAME_MAGIC:
        raise FrameError("bad frame magic")
    if version != FRAME_VERSION:
        raise FrameError(f"unsupported frame version {version}")
    crc = int.from_bytes(data[_HEADER_LEN:_HEADER_LEN + 4], "little")
    if crc != zlib.crc32(header):
        raise FrameError("header checksum mismatch")
    body = data[_HEADER_LEN + 4:]
    if len(body) != payload_len * 4:
        raise FrameError(
            f"payload of {len(body)} bytes, header says {payload_len * 4}")
    payload = np.frombuffer(body, dtype="<f4").copy()
    return SeedFrame(rate_fixed, (d0, d1, d2), block_len, scale, payload)


def chunk_seed(symbols, block_length):
    """Split a symbol vector into contiguous blocks; the last may be short."""
    if block_length < 1:
        raise ValueError("block length must be >= 1")
    x = symbols.symbols if isinstance(symbols, Seed) else np.asarray(symbols)
    return [x[i:i + block_length] for i in range(0, len(x), block_length)]


# ---------------------------------------------------------------------------
# session state machines

class _Session:
    """Linear state machine; any out-of-order call is a protocol error."""

    ORDER = ()

    def __init__(self):
        self.state = self.ORDER[0]

    def _advance(self, expected_from, method):
        if self.state != expected_from:
            raise ProtocolError(
                f"{type(self).__name__}.{method} called in state {self.state!r}")
        self.state = self.ORDER[self.ORDER.index(expected_from) + 1]


class EsSession(_Session):
    ORDER = ("idle", "inferring", "transmitting", "done")

    def start_inference(self):
        self._advance("idle", "start_inference")

    def seed_ready(self):
        self._advance("inferring", "seed_ready")

    def transmission_complete(self):
        self._advance("transmitting", "transmission_complete")


class UeSession(_Session):
    ORDER = ("idle", "receiving", "decoding", "done")

    def start_receiving(self):
        self._advance("idle", "start_receiving")

    def start_decoding(self):
        self._advance("receiving", "start_decoding")

    def decoding_complete(self):
        self._advance("decoding", "decoding_complete")


# ---------------------------------------------------------------------------
# requests, bundles, results

@dataclass
class GenerationRequest:
    prompt: str
    rate: float
    image_shape: tuple
    noise_seed: int


@dataclass
class ModelBundle:
    """Everything both endpoints need to run generations."""
    autoencoder: genmodel.AutoencoderPair
    denoiser: genmodel.Denoiser
    schedule: genmodel.NoiseSchedule
    codecs: dict
    extractor: metrics.FeatureExtractor
    image_shape: tuple
    latent_shape: tuple
    downsample: int
    config_hash: str = ""

    def codec_for(self, rate) -> CodecPair:
        if rate not in self.codecs:
            raise ProtocolError(f"no codec trained for rate {rate}")
        return self.codecs[rate]


@dataclass
class EsResult:
    seed: Seed
    frame: SeedFrame
    latent: np.ndarray


def upload_prompt(prompt: str) -> str:
    """Uplink of the prompt text; modeled as lossless, so a no-op."""
    return prompt


def es_handle_request(bundle: ModelBundle, request: GenerationRequest,
                      block_length: int) -> EsResult:
    """Server side of one request: embed, generate, compress, frame."""
    if tuple(request.image_shape) != tuple(bundle.image_shape):
        raise ProtocolError(
            f"request dims {request.image_shape} do not match deployed "
            f"model dims {bundle.image_shape}")
    codec = bundle.codec_for(request.rate)
    session = EsSession()
    session.start_inference()
    embedding = genmodel.embed_prompt(request.prompt,
                                      bundle.denoiser.max_tokens,
                                      bundle.denoiser.embed_dim)
    noise = as_rng(request.noise_seed).standard_normal(bundle.latent_shape)
    latent = genmodel.generate_latent(bundle.denoiser, embedding,
                                      noise.astype(np.float32),
                                      bundle.schedule)
    seed = codec.compress(latent)
    session.seed_ready()
    frame = frame_from_seed(seed, block_length)
    session.transmission_complete()
    return EsResult(seed, frame, latent)


@dataclass
class ReceivedBlock:
    values: np.ndarray
    gain: float
    power: float


@dataclass
class GenerationResult:
    mode: str
    images: list
    report: metrics.MetricReport
    power_log: list
    degraded: bool = False
    trace_seed: int | None = None

    @property
    def image(self):
        return self.images[0]


@dataclass
class EndToEndReport:
    results: dict
    ground_truths: list
    latents: list
    trace: ch.FadingTrace

    def __getitem__(self, mode):
        return self.results[mode]


# ---------------------------------------------------------------------------
# transmission helpers

def transmit_stream(symbols, trace: ch.FadingTrace, noise_std, rng,
                    powers=None):
    """Send one symbol vector block by block over a trace."""
    blocks = chunk_seed(symbols, trace.block_length)
    out = []
    for i, block in enumerate(blocks):
        p = 1.0 if powers is None else float(powers[i])
        y = ch.transmit(block, trace.gains[i], p, noise_std, rng)
        out.append(ReceivedBlock(y, float(trace.gains[i]), p))
    return out


def recover_stream(blocks, expected_len):
    """Equalize received blocks; erased blocks come back as zeros."""
    parts = []
    degraded = False
    for blk in blocks:
        try:
            parts.append(ch.equalize(blk.values, blk.gain, blk.power))
        except ChannelErasure:
            parts.append(np.zeros_like(np.asarray(blk.values, dtype=np.float64)))
            degraded = True
    flat = np.concatenate(parts) if parts else np.zeros(0)
    if flat.size != expected_len:
        raise FrameError(
            f"recovered {flat.size} symbols, expected {expected_len}")
    return flat, degraded


def ue_receive(bundle: ModelBundle, deliveries, ground_truths,
               config_hash="", trace_seed=None):
    """Receiver side for a batch of seed deliveries.

    Each delivery is (frame_bytes, received blocks or None). ``None``
    blocks mean the perfect channel carried the payload intact. Returns a
    GenerationResult with quality metrics against the ground-truth batch.
    """
    session = UeSession()
    session.start_receiving()
    frames = [decode_frame(data) for data, _ in deliveries]
    session.start_decoding()
    images, degraded_any, power_log = [], False, []
    for frame, (_, blocks) in zip(frames, deliveries):
        codec = bundle.codec_for(_nearest_rate(bundle, frame))
        if blocks is None:
            symbols = frame.payload.astype(np.float64)
        else:
            symbols, lost = recover_stream(blocks, frame.payload.size)
            degraded_any |= lost
            power_log = [b.power for b in blocks]
        latent = codec.decompress(symbols, frame.scale)
        images.append(bundle.autoencoder.decode(latent))
    session.decoding_complete()
    report = batch_report(images, ground_truths, bundle.extractor,
                          symbols=frames[0].payload.size,
                          config_hash=config_hash)
    return GenerationResult("meg", images, report, power_log,
                            degraded_any, trace_seed)


def _nearest_rate(bundle: ModelBundle, frame: SeedFrame):
    # the header rate is 16-bit quantized; snap to the deployed codec set
    return min(bundle.codecs, key=lambda r: abs(r - frame.rate))


def batch_report(images, ground_truths, extractor, symbols, config_hash=""):
    """PSNR/MSE averaged over the batch plus batch Frechet score."""
    mses = [metrics.mse(img, ref) for img, ref in zip(images, ground_truths)]
    mean_mse = float(np.mean(mses))
    psnr_db = math.inf if mean_mse == 0.0 else 10.0 * math.log10(1.0 / mean_mse)
    fid_score = metrics.fid(np.stack(images), np.stack(ground_truths),
                            extractor)
    return metrics.MetricReport(psnr_db, fid_score, mean_mse, symbols,
                                config_hash).validate()


# ---------------------------------------------------------------------------
# end-to-end driver

@dataclass
class RunSpec:
    """One paired trial: every mode rides the same fading trace."""
    prompts: list
    rate: float
    snr_db: float | None          # None is the perfect channel
    channel_kind: str = "rayleigh_block"
    block_length: int = 16
    seed: int = 0
    modes: tuple = ("centralized", "raw_feature", "meg")
    powers: list | None = None    # per-block powers for the meg seed download
    config_hash: str = ""


def run_end_to_end(bundle: ModelBundle, spec: RunSpec) -> EndToEndReport:
    """Generate, transmit under every requested mode, decode, and score."""
    if not spec.prompts:
        raise ValueError("at least one prompt is required")
    block_len = spec.block_length
    pixels = int(np.prod(bundle.image_shape))
    latent_size = int(np.prod(bundle.latent_shape))

    es_results, ground_truths, latents = [], [], []
    for i, prompt in enumerate(spec.prompts):
        request = GenerationRequest(upload_prompt(prompt), spec.rate,
                                    bundle.image_shape,
                                    derive_seed(spec.seed, 0, i))
        res = es_handle_request(bundle, request, block_len)
        es_results.append(res)
        latents.append(res.latent)
        ground_truths.append(bundle.autoencoder.decode(res.latent))

    counts = {"centralized": pixels, "raw_feature": latent_size,
              "meg": es_results[0].seed.symbols.size}
    max_blocks = max(-(-counts[m] // block_len) for m in spec.modes)
    model = ch.ChannelModel(spec.channel_kind, block_len)
    trace_seed = derive_seed(spec.seed, 1)
    trace = ch.sample_fading_trace(model, max_blocks, trace_seed)
    noise_std = (0.0 if spec.snr_db is None
                 else ch.snr_to_noise_std(spec.snr_db, 1.0))
    perfect = spec.snr_db is None

    results = {}
    for mode_idx, mode in enumerate(spec.modes):
        noise_rng = as_rng(derive_seed(spec.seed, 2, mode_idx))
        if mode == "meg":
            deliveries = []
            for res in es_results:
                data = encode_frame(res.frame)
                if perfect:
                    deliveries.append((data, None))
                else:
                    blocks = transmit_stream(res.frame.payload, trace,
                                             noise_std, noise_rng,
                                             spec.powers)
                    deliveries.append((data, blocks))
            result = ue_receive(bundle, deliveries, ground_truths,
                                spec.config_hash, trace_seed)
            if not result.power_log:
                result.power_log = [1.0] * (-(-counts["meg"] // block_len))
        else:
            images = []
            degraded = False
            n_blocks = -(-counts[mode] // block_len)
            for res, truth in zip(es_results, ground_truths):
                if mode == "centralized":
                    payload = truth.reshape(-1).astype(np.float64)
                else:
                    payload = res.latent.reshape(-1).astype(np.float64)
                if perfect:
                    recovered = payload
                else:
                    scale = float(np.sqrt(np.mean(payload ** 2)))
                    scale = scale if scale > 0 else 1.0
                    sent = transmit_stream(payload / scale, trace,
                                           noise_std, noise_rng)
                    flat, lost = recover_stream(sent, payload.size)
                    degraded |= lost
                    recovered = flat * scale
                if mode == "centralized":
                    images.append(np.clip(recovered, 0.0, 1.0)
                                  .reshape(bundle.image_shape)
                                  .astype(np.float32))
                else:
                    images.append(bundle.autoencoder.decode(
                        recovered.astype(np.float32).reshape(bundle.latent_shape)))
            report = batch_report(images, ground_truths, bundle.extractor,
                                  counts[mode], spec.config_hash)
            result = GenerationResult(mode, images, report,
                                      [1.0] * n_blocks, degraded, trace_seed)
        results[mode] = result
    return EndToEndReport(results, ground_truths, latents, trace)
