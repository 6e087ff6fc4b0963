"""Option extraction from model completions.

Three paths: parse an explicit option label out of the completion, map
free text onto the closest option by embedding cosine similarity, or fall
back to a seeded uniform choice when nothing else works.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backend import EmbeddingBackend, embed_batch
from .seeding import derive_seed

METHOD_LABEL_PARSE = "label_parse"
METHOD_SIMILARITY = "similarity"
METHOD_RANDOM_FALLBACK = "random_fallback"

_OPTION_LABEL_RE = re.compile(r"option\s*(\d+)", re.IGNORECASE)
_PAREN_DIGIT_RE = re.compile(r"\((\d+)\)")
_LEADING_DIGIT_RE = re.compile(r"^\s*(\d+)\b")


@dataclass(frozen=True)
class ParsedAnswer:
    slot: int | None
    method: str
    raw: str


def parse_option_label(completion: str, n: int) -> int | None:
    """Extract a 0-based option slot from a completion, or None.

    Patterns are tried in order of explicitness: "option <d>" anywhere,
    then "(<d>)" anywhere, then a bare digit at the start of the text.
    Only 1-based labels d with 1 <= d <= n count; out-of-range matches are
    skipped, not treated as failures.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    for pattern in (_OPTION_LABEL_RE, _PAREN_DIGIT_RE):
        for match in pattern.finditer(completion):
            label = int(match.group(1))
            if 1 <= label <= n:
                return label - 1
    match = _LEADING_DIGIT_RE.match(completion)
    if match:
        label = int(match.group(1))
        if 1 <= label <= n:
            return label - 1
    return None


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    # zero-magnitude vectors score 0 instead of raising
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u.astype(np.float64), v.astype(np.float64)) / (nu * nv))


def select_by_similarity(
    free_text: str,
    options: Sequence[str],
    backend: EmbeddingBackend,
) -> int:
    """Slot of the option most cosine-similar to the free-text answer.

    The free text and all options are embedded in one batch; ties break
    toward the lower slot.
    """
    if not options:
        raise ValueError("options must be non-empty")
    vectors = embed_batch([free_text, *options], backend)
    query = vectors[0]
    best_slot = 0
    best_score = -float("inf")
    for slot, vector in enumerate(vectors[1:]):
        score = _cosine(query, vector)
        if score > best_score:
            best_score = score
            best_slot = slot
    return best_slot


def fallback_random(n: int, seed: int, question_id: str) -> int:
    """Uniform slot choice, deterministic per (seed, question_id)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(derive_seed(seed, "fallback", question_id))
    return rng.randrange(n)
