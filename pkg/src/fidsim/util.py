"""Small shared helpers: seeded RNG derivation, canonical JSON, digests."""

import hashlib
import json

import numpy as np


def derive_seed(base_seed: int, *labels) -> int:
    """Derive a stable child seed from a base seed and a label path.

    Hash-based (not sequential) so adding a new consumer never shifts the
    streams of existing ones.
    """
    material = ":".join([str(int(base_seed))] + [str(l) for l in labels])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_from(base_seed: int, *labels) -> np.random.Generator:
    """Independent Generator for (seed, label path)."""
    return np.random.default_rng(derive_seed(base_seed, *labels))


def canonical_json(obj) -> str:
    """Deterministic JSON encoding: sorted keys, no whitespace, no NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
