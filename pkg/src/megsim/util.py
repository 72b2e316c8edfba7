"""Small shared helpers: deterministic seeding and hashing."""

import hashlib

import numpy as np


def as_rng(seed_or_rng) -> np.random.Generator:
    """Coerce an int seed (or an existing Generator) into a Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def stable_word_seed(word: str, salt: str = "") -> int:
    """64-bit seed derived from a token, stable across runs and processes."""
    digest = hashlib.sha256((salt + word).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(master_seed: int, *indices: int) -> int:
    """Derive an independent child seed from a master seed and a path of indices."""
    ss = np.random.SeedSequence([int(master_seed), *[int(i) for i in indices]])
    return int(ss.generate_state(1, np.uint64)[0])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
