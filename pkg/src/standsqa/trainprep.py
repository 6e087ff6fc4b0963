"""Question-masked loss primitives and fine-tuning record emission.

The loss here is a verifiable primitive: cross-entropy restricted by a
0/1 mask so only answer tokens contribute, with the prompt part excluded.
Record emission renders one prompt/answer pair per question per epoch,
re-shuffling the option order each epoch; actual gradient updates are the
consuming trainer's job, and adapter hyperparameters are carried through
manifests as metadata only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .abbrev import Detection
from .prompt import McqQuestion, build_phi2_prompt
from .retrieval import Context
from .shuffle import epoch_permutation

ROW_SUM_TOLERANCE = 1e-6

DEFAULT_TOKENIZER_ID = "whitespace"

# Reference tokenizers runnable in-process; external model tokenizers are
# declared by id in emitted records but cannot be executed here.
TOKENIZERS: dict[str, Callable[[str], list[str]]] = {
    "whitespace": lambda text: text.split(),
}


def tokenize(text: str, tokenizer_id: str) -> list[str]:
    try:
        fn = TOKENIZERS[tokenizer_id]
    except KeyError:
        raise ValueError(
            f"unknown tokenizer id {tokenizer_id!r}; built-ins: {sorted(TOKENIZERS)}"
        ) from None
    return fn(text)


@dataclass(frozen=True)
class TokenSequence:
    """A token id sequence split at a prompt/answer boundary.

    The first `boundary` tokens are the prompt, the rest are the answer.
    """

    tokens: tuple[int, ...]
    boundary: int

    def __post_init__(self) -> None:
        if not 0 <= self.boundary <= len(self.tokens):
            raise ValueError(
                f"boundary {self.boundary} out of range for {len(self.tokens)} tokens"
            )

    @property
    def total(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class MaskVector:
    """A 0/1 loss mask; positions with value 1 contribute to the loss."""

    values: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(v not in (0, 1) for v in self.values):
            raise ValueError("mask values must be 0 or 1")

    def __len__(self) -> int:
        return len(self.values)


def mask_vector(total: int, boundary: int) -> MaskVector:
    """Mask that zeroes the first `boundary` positions and keeps the rest."""
    if total < 0:
        raise ValueError("length must be non-negative")
    if not 0 <= boundary <= total:
        raise ValueError(f"boundary {boundary} out of range for length {total}")
    return MaskVector(tuple(0 if t < boundary else 1 for t in range(total)))


@dataclass(frozen=True, eq=False)
class PredictionTable:
    """Per-position probability distributions plus the true token per position."""

    probs: np.ndarray
    targets: tuple[int, ...]

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise ValueError("probs must be a 2-D table (positions x vocabulary)")
        if probs.shape[0] != len(self.targets):
            raise ValueError(
                f"{len(self.targets)} targets for {probs.shape[0]} positions"
            )
        if probs.size:
            if probs.min() < 0.0 or probs.max() > 1.0 + 1e-9:
                raise ValueError("probabilities must lie in [0, 1]")
            sums = probs.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE):
                worst = int(np.argmax(np.abs(sums - 1.0)))
                raise ValueError(f"row {worst} sums to {sums[worst]}, not 1")
        for t, target in enumerate(self.targets):
            if not 0 <= target < probs.shape[1]:
                raise ValueError(f"target {target} at position {t} outside vocabulary")

    @property
    def length(self) -> int:
        return self.probs.shape[0]


def masked_cross_entropy(preds: PredictionTable, mask: MaskVector) -> float:
    """Sum of -log(true-token probability) over positions the mask keeps.

    Positions the mask zeroes contribute nothing, whatever their predicted
    distributions hold. A zero probability at a kept position raises,
    signaling the infinite loss explicitly.
    """
    if len(mask) != preds.length:
        raise ValueError(f"mask length {len(mask)} != table length {preds.length}")
    kept = np.flatnonzero(np.asarray(mask.values, dtype=np.int64))
    if kept.size == 0:
        return 0.0
    p = preds.probs[kept, np.asarray(preds.targets, dtype=np.int64)[kept]]
    zero = p <= 0.0
    if np.any(zero):
        position = int(kept[int(np.argmax(zero))])
        raise ValueError(f"zero probability for the true token at position {position}")
    return float(-np.sum(np.log(p)))


def full_cross_entropy(preds: PredictionTable) -> float:
    """Cross-entropy over every position (an all-ones mask)."""
    return masked_cross_entropy(preds, mask_vector(preds.length, 0))


def find_answer_boundary(tokens: Sequence[int], cue: Sequence[int]) -> int:
    """Prompt length up to and including the first occurrence of the cue.

    Returns the count of prompt tokens, i.e. the boundary to feed
    mask_vector. A cue ending the sequence leaves an empty answer.
    """
    if not cue:
        raise ValueError("cue must be non-empty")
    tokens = list(tokens)
    cue = list(cue)
    span = len(cue)
    for start in range(len(tokens) - span + 1):
        if tokens[start : start + span] == cue:
            return start + span
    raise ValueError("answer cue not found in token sequence")


@dataclass(frozen=True)
class TrainingConfig:
    """Adapter fine-tuning hyperparameters, recorded verbatim in manifests.

    These are not executed by this package; they travel with the emitted
    training set so an external trainer reproduces the intended setup.
    """

    lora_rank: int = 64
    lora_alpha: int = 16
    lora_dropout: float = 0.05
    adapter_targets: tuple[str, ...] = (
        "attention.query",
        "attention.key",
        "attention.value",
        "feed_forward",
    )
    quantized: bool = False

    def to_dict(self) -> dict:
        return {
            "lora_rank": self.lora_rank,
            "lora_alpha": self.lora_alpha,
            "lora_dropout": self.lora_dropout,
            "adapter_targets": list(self.adapter_targets),
            "quantized": self.quantized,
        }


@dataclass(frozen=True)
class TrainingRecord:
    """One fine-tuning example: prompt, answer, and the mask boundary.

    boundary counts prompt tokens under the declared tokenizer; the answer
    label is expressed in the permuted option coordinates so the record is
    self-consistent with its option_order.
    """

    question_id: str
    epoch: int
    prompt: str
    answer: str
    boundary: int
    option_order: tuple[int, ...]
    tokenizer_id: str

    def to_obj(self) -> dict:
        return {
            "question_id": self.question_id,
            "epoch": self.epoch,
            "prompt": self.prompt,
            "answer": self.answer,
            "boundary": self.boundary,
            "option_order": list(self.option_order),
            "tokenizer_id": self.tokenizer_id,
        }


def emit_training_set(
    questions: Sequence[McqQuestion],
    contexts_by_qid: Mapping[str, Context] | None,
    epochs: int,
    seed: int,
    tokenizer_id: str = DEFAULT_TOKENIZER_ID,
    abbrevs_by_qid: Mapping[str, Sequence[Detection]] | None = None,
) -> list[TrainingRecord]:
    """Render one training record per question per epoch.

    Each epoch draws a fresh option order per question from
    (seed, epoch, question_id); the answer text is
    "option <slot>: <gold text>" in the permuted coordinates. Output is
    deterministic for fixed inputs and seed.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    for q in questions:
        if q.gold is None:
            raise ValueError(f"question {q.question_id!r} has no gold answer")
    records: list[TrainingRecord] = []
    for epoch in range(epochs):
        for q in questions:
            perm = epoch_permutation(len(q.options), epoch, seed, q.question_id)
            displayed = perm.apply(q.options)
            gold_slot = perm.slot_of(q.gold)  # type: ignore[arg-type]
            contexts = contexts_by_qid.get(q.question_id) if contexts_by_qid else None
            detections = tuple(abbrevs_by_qid.get(q.question_id, ())) if abbrevs_by_qid else ()
            prompt = build_phi2_prompt(q, displayed, detections, contexts, option_order=perm.mapping)
            answer = f"option {gold_slot + 1}: {q.options[q.gold]}"
            boundary = len(tokenize(prompt.rendered, tokenizer_id))
            records.append(
                TrainingRecord(
                    question_id=q.question_id,
                    epoch=epoch,
                    prompt=prompt.rendered,
                    answer=answer,
                    boundary=boundary,
                    option_order=perm.mapping,
                    tokenizer_id=tokenizer_id,
                )
            )
    return records


def write_training_records(records: Sequence[TrainingRecord], path: str | Path) -> None:
    """Serialize records as line-delimited JSON, byte-stable across runs."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_obj(), sort_keys=True) + "\n")


def write_training_manifest(
    path: str | Path,
    config: TrainingConfig,
    *,
    epochs: int,
    seed: int,
    tokenizer_id: str,
    record_count: int,
) -> None:
    """Write the training manifest embedding the TrainingConfig verbatim.

    The loss primitive is an unnormalized sum over answer tokens; the
    manifest recommends mean-over-answer-tokens normalization to trainers
    for numeric stability, keeping the two clearly separated.
    """
    payload = {
        "training_config": config.to_dict(),
        "objective": "masked_cross_entropy_sum_over_answer_tokens",
        "recommended_loss_normalization": "mean_over_answer_tokens",
        "epochs": epochs,
        "seed": seed,
        "tokenizer_id": tokenizer_id,
        "record_count": record_count,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
