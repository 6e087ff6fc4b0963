"""Shared test doubles and synthetic data builders."""

from __future__ import annotations

import json
import random
from pathlib import Path

import numpy as np
import pytest

from standsqa.corpus import Chunk
from standsqa.prompt import McqQuestion

GOLDENS_DIR = Path(__file__).parent / "goldens"


class EchoCompletionBackend:
    """Returns a scripted response per prompt position; records traffic."""

    def __init__(self, responses=None, model_id="echo"):
        self.model_id = model_id
        self.retry_count = 0
        self.responses = responses
        self.calls = 0
        self.batches: list[list[str]] = []

    def complete(self, prompts, *, max_new_tokens, temperature, seed=None):
        self.calls += 1
        self.batches.append(list(prompts))
        if self.responses is None:
            return [f"echo {i}" for i in range(len(prompts))]
        return [self.responses(p) for p in prompts]


class ScriptedEmbeddingBackend:
    """Maps exact texts to fixed vectors; unknown texts embed to zeros."""

    def __init__(self, table: dict[str, list[float]], dim: int, model_id="scripted-embed"):
        self.table = table
        self.dim = dim
        self.model_id = model_id
        self.retry_count = 0
        self.calls = 0
        self.batch_sizes: list[int] = []

    def embed(self, texts):
        self.calls += 1
        self.batch_sizes.append(len(texts))
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            if text in self.table:
                out[i] = np.asarray(self.table[text], dtype=np.float32)
        return out


def make_chunks(texts, doc_id="doc"):
    return [
        Chunk(f"{doc_id}:s0:c{i}", doc_id, "1 Heading", text) for i, text in enumerate(texts)
    ]


def make_question(qid="q1", n=4, gold=0, marker=None, category="Standards Specifications"):
    """A synthetic MCQ whose gold option optionally carries a marker token."""
    options = []
    for slot in range(n):
        if slot == gold and marker is not None:
            options.append(f"{marker} answer for {qid}")
        else:
            options.append(f"distractor {slot} for {qid}")
    return McqQuestion(
        question_id=qid,
        text=f"what is the defined behavior in case {qid}?",
        options=tuple(options),
        gold=gold,
        category=category,
    )


def make_biased_dataset(count, seed, marker="veritas", n=4):
    """Questions with gold slots uniform over the n positions."""
    rng = random.Random(seed)
    return [
        make_question(f"q{i:04d}", n=n, gold=rng.randrange(n), marker=marker)
        for i in range(count)
    ]


def write_dataset_file(path: Path, questions) -> Path:
    payload = {}
    for q in questions:
        entry = {"question": q.text, "category": q.category}
        for i, option in enumerate(q.options, 1):
            entry[f"option {i}"] = option
        if q.gold is not None:
            entry["answer"] = f"option {q.gold + 1}: {q.options[q.gold]}"
        payload[q.question_id] = entry
    path.write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def tmp_dataset(tmp_path):
    def _build(questions, name="dataset.json"):
        return write_dataset_file(tmp_path / name, questions)

    return _build
