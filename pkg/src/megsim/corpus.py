"""Procedural training images keyed by prompt words.

Each prompt like ``"large rings left"`` maps deterministically to an
image: the pattern word picks a renderer and the remaining words are
hashed into its parameters. This gives ground-truth prompt/image pairs
without any external dataset.
"""

import numpy as np

from .util import as_rng, stable_word_seed

PATTERN_WORDS = ("blob", "stripes", "rings", "checker", "cross", "waves")
SIZE_WORDS = ("tiny", "small", "medium", "large", "huge")
PLACE_WORDS = ("left", "right", "top", "bottom", "center")


def _word_unit(word, salt):
    """Deterministic float in [0, 1) derived from a word."""
    return (stable_word_seed(word, salt) % (1 << 24)) / float(1 << 24)


def _grid(height, width):
    ys = np.linspace(-1.0, 1.0, height)[:, None]
    xs = np.linspace(-1.0, 1.0, width)[None, :]
    return ys, xs


def _render_pattern(pattern, cx, cy, scale, angle, height, width):
    ys, xs = _grid(height, width)
    u = (xs - cx) * np.cos(angle) + (ys - cy) * np.sin(angle)
    v = -(xs - cx) * np.sin(angle) + (ys - cy) * np.cos(angle)
    r2 = u * u + v * v
    if pattern == "blob":
        img = np.exp(-r2 / (2.0 * scale * scale))
    elif pattern == "stripes":
        img = 0.5 + 0.5 * np.sin(u * np.pi / scale)
    elif pattern == "rings":
        img = 0.5 + 0.5 * np.cos(np.sqrt(r2) * np.pi / scale)
    elif pattern == "checker":
        img = 0.5 + 0.5 * np.sign(np.sin(u * np.pi / scale)
                                  * np.sin(v * np.pi / scale))
    elif pattern == "cross":
        img = np.maximum(np.exp(-u * u / (2 * scale * scale)),
                         np.exp(-v * v / (2 * scale * scale)))
    elif pattern == "waves":
        img = 0.5 + 0.5 * np.sin(u * np.pi / scale + 2.0 * np.sin(v * np.pi))
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return np.clip(img, 0.0, 1.0)


def render_prompt_image(prompt, channels, height, width):
    """Render the deterministic image for a prompt, shape [C, H, W] in [0, 1]."""
    words = prompt.lower().split()
    if not words:
        raise ValueError("empty prompt")
    pattern = next((w for w in words if w in PATTERN_WORDS), "blob")
    cx = 1.2 * _word_unit(" ".join(words), "cx") - 0.6
    cy = 1.2 * _word_unit(" ".join(words), "cy") - 0.6
    scale = 0.15 + 0.5 * _word_unit(" ".join(words), "scale")
    angle = np.pi * _word_unit(" ".join(words), "angle")
    img = np.empty((channels, height, width), dtype=np.float32)
    for c in range(channels):
        # each channel gets a rotated, slightly rescaled variant
        img[c] = _render_pattern(pattern, cx, cy, scale * (1.0 + 0.3 * c),
                                 angle + 0.7 * c, height, width)
    return img


def sample_prompts(count, rng):
    """Draw distinct three-word prompts from the fixed vocabulary."""
    rng = as_rng(rng)
    seen = set()
    prompts = []
    while len(prompts) < count:
        p = " ".join([SIZE_WORDS[rng.integers(len(SIZE_WORDS))],
                      PATTERN_WORDS[rng.integers(len(PATTERN_WORDS))],
                      PLACE_WORDS[rng.integers(len(PLACE_WORDS))]])
        if p not in seen:
            seen.add(p)
            prompts.append(p)
        elif len(seen) >= (len(SIZE_WORDS) * len(PATTERN_WORDS)
                           * len(PLACE_WORDS)):
            prompts.append(p)  # vocabulary exhausted, allow repeats
    return prompts


def build_corpus(count, channels, height, width, seed):
    """Seeded corpus of (prompts, images[count, C, H, W])."""
    prompts = sample_prompts(count, as_rng(seed))
    images = np.stack([render_prompt_image(p, channels, height, width)
                       for p in prompts])
    return prompts, images
