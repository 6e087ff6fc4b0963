"""Deterministic seed derivation for per-question randomness streams."""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Derive a 64-bit seed from the given parts, stably across runs.

    Uses SHA-256 over the joined string forms, so seeds do not depend on
    Python's per-process hash randomization and are identical on every
    platform. Parts are joined with a separator so ("ab", "c") and
    ("a", "bc") derive different seeds.
    """
    material = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
