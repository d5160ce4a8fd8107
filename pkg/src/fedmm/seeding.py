"""Stable seed derivation.

Every random draw in a run is keyed by a named path derived from the run
seed, so results are reproducible regardless of execution order or thread
count. The derivation is a SHA-256 over the stringified path parts joined
by an ASCII unit separator, truncated to 64 bits (little-endian).

Reserved path tags used across the package:
    ("init", "extractor", k)   per-modality extractor initialization
    ("init", "classifier")     fusion classifier initialization (shape-keyed
                               only through the layer sizes it is used with)
    ("split", hospital_id)     train/test split shuffle
    ("shuffle", round, cid)    minibatch shuffles for one client round
    ("synthetic",)             synthetic data master stream
    ("mixing", k)              per-modality mixing matrix
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map a path of parts to a stable 64-bit seed."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
