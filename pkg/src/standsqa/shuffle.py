"""Option-order shuffling and vote aggregation.

Language models show selection bias on MCQs: they favor option positions
regardless of content. Answering one question through k prompts with
independently permuted option orders, mapping each answer back through
the inverse permutation, and majority-voting the corrected answers
decorrelates that bias. Sampling k orders instead of enumerating all n!
keeps the per-question cost O(k).
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, replace
from typing import Sequence

from .answer import parse_option_label
from .backend import CompletionBackend, CompletionRequest, complete_batch
from .prompt import McqQuestion, build_phi2_prompt
from .retrieval import Context
from .seeding import derive_seed

DEFAULT_SHUFFLE_K = 20
DEFAULT_MAX_NEW_TOKENS = 32

# enumerate all n! orders up to this size; rejection-sample beyond it
ENUMERATION_LIMIT = 720


class NoParsableAnswersError(Exception):
    """Every completion in a shuffle batch failed to parse."""


@dataclass(frozen=True)
class Permutation:
    """A display order for options: slot j shows canonical option mapping[j]."""

    mapping: tuple[int, ...]

    def __post_init__(self) -> None:
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise ValueError(f"mapping {self.mapping!r} is not a bijection")

    @property
    def n(self) -> int:
        return len(self.mapping)

    def apply(self, options: Sequence[str]) -> list[str]:
        return [options[j] for j in self.mapping]

    def slot_of(self, canonical: int) -> int:
        return self.mapping.index(canonical)


@dataclass(frozen=True)
class VoteTally:
    """Per-canonical-option vote counts from one shuffle batch.

    counts sums to the number of parsable completions, which can be below
    k when some completions were dropped.
    """

    counts: tuple[int, ...]
    k: int
    winner: int


def sample_permutations(n: int, k: int, seed: int) -> list[Permutation]:
    """Sample min(k, n!) distinct option orders uniformly without replacement.

    Deterministic for a given seed. When k >= n! all n! permutations are
    returned in lexicographic enumeration order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    total = math.factorial(n)
    rng = random.Random(seed)
    if total <= ENUMERATION_LIMIT:
        everything = list(itertools.permutations(range(n)))
        if k >= total:
            return [Permutation(p) for p in everything]
        return [Permutation(p) for p in rng.sample(everything, k)]
    target = min(k, total)
    seen: set[tuple[int, ...]] = set()
    out: list[Permutation] = []
    while len(out) < target:
        candidate = list(range(n))
        rng.shuffle(candidate)
        mapping = tuple(candidate)
        if mapping in seen:
            continue
        seen.add(mapping)
        out.append(Permutation(mapping))
    return out


def map_back(perm: Permutation, selected_slot: int) -> int:
    """Canonical option index shown at the selected display slot."""
    if not 0 <= selected_slot < perm.n:
        raise ValueError(f"slot {selected_slot} out of range for {perm.n} options")
    return perm.mapping[selected_slot]


def majority_vote(votes: Sequence[int], n: int, k: int | None = None) -> VoteTally:
    """Tally canonical votes; the winner is the argmax, ties to the lowest index."""
    if not votes:
        raise NoParsableAnswersError("no parsable answers")
    counts = [0] * n
    for vote in votes:
        if not 0 <= vote < n:
            raise ValueError(f"vote {vote} out of range for {n} options")
        counts[vote] += 1
    winner = counts.index(max(counts))
    return VoteTally(tuple(counts), k if k is not None else len(votes), winner)


def answer_with_shuffle(
    q: McqQuestion,
    k: int,
    seed: int,
    *,
    backend: CompletionBackend,
    abbrevs: Sequence = (),
    contexts: Context | None = None,
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
    temperature: float = 0.0,
    diagnostics: list | None = None,
) -> VoteTally:
    """Answer one question through a batch of option-shuffled prompts.

    Samples min(k, n!) permutations from a per-question stream derived
    from (seed, question_id), renders one prompt per permutation, submits
    them as a single batch, maps each parsed answer back to canonical
    coordinates, and majority-votes. Unparsable completions are dropped
    from the tally (they are recorded in diagnostics); if nothing parses,
    NoParsableAnswersError surfaces so the caller can fall back.
    """
    n = len(q.options)
    question_seed = derive_seed(seed, "shuffle", q.question_id)
    perms = sample_permutations(n, k, question_seed)
    prompts = [
        build_phi2_prompt(q, perm.apply(q.options), abbrevs, contexts, option_order=perm.mapping).rendered
        for perm in perms
    ]
    request = CompletionRequest(
        prompts=tuple(prompts),
        max_new_tokens=max_new_tokens,
        temperature=temperature,
        seed=question_seed,
        model_id=backend.model_id,
    )
    completions = complete_batch(request, backend)
    votes: list[int] = []
    parsed_slots: list[int | None] = []
    for perm, completion in zip(perms, completions):
        slot = parse_option_label(completion, n)
        parsed_slots.append(slot)
        if slot is not None:
            votes.append(map_back(perm, slot))
    record = None
    if diagnostics is not None:
        record = {
            "question_id": q.question_id,
            "permutations": [list(p.mapping) for p in perms],
            "completions": completions,
            "parsed_slots": parsed_slots,
            "votes": votes,
        }
        diagnostics.append(record)
    tally = majority_vote(votes, n, k=len(perms))
    if record is not None:
        record["tally"] = {"counts": list(tally.counts), "k": tally.k, "winner": tally.winner}
    return tally


def epoch_permutation(n: int, epoch: int, seed: int, question_id: str) -> Permutation:
    """The option order a question gets in a given training epoch."""
    rng = random.Random(derive_seed(seed, "epoch", epoch, question_id))
    mapping = list(range(n))
    rng.shuffle(mapping)
    return Permutation(tuple(mapping))


def epoch_shuffle(records: Sequence[McqQuestion], epoch: int, seed: int) -> list[McqQuestion]:
    """Permute each question's option order for one epoch.

    Orders are drawn deterministically from (seed, epoch, question_id) and
    gold indices are remapped so the gold option text is unchanged.
    """
    out: list[McqQuestion] = []
    for q in records:
        perm = epoch_permutation(len(q.options), epoch, seed, q.question_id)
        gold = perm.slot_of(q.gold) if q.gold is not None else None
        out.append(replace(q, options=tuple(perm.apply(q.options)), gold=gold))
    return out
