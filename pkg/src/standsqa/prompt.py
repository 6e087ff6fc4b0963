"""Prompt rendering for MCQ answering.

Two templates: an instruct-style prompt that lists the options and ends
with an output cue, and a free-text expert prompt that deliberately
withholds the options. Both repeat the question before and after the
retrieved contexts, which helps small models reason over the contexts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .abbrev import Detection
from .retrieval import Context

PHI2_STYLE = "phi2_mcq"
FALCON_STYLE = "falcon_free"

OUTPUT_CUE = "Output :"
CONTEXT_HEADER = "Considering the following retrieved contexts"
FALCON_SYSTEM_LINE = (
    "Youre a Telecommunication standards expert. "
    "Please answer the question  first consider the given context for the answer."
)


@dataclass(frozen=True)
class McqQuestion:
    """One multiple-choice question with 2 to 5 ordered options.

    gold, when present, is the canonical index of the correct option.
    """

    question_id: str
    text: str
    options: tuple[str, ...]
    gold: int | None = None
    category: str = ""

    def __post_init__(self) -> None:
        if not 2 <= len(self.options) <= 5:
            raise ValueError(
                f"question {self.question_id!r}: option count {len(self.options)} not in [2, 5]"
            )
        if self.gold is not None and not 0 <= self.gold < len(self.options):
            raise ValueError(f"question {self.question_id!r}: gold index {self.gold} out of range")


@dataclass(frozen=True)
class PromptText:
    rendered: str
    style: str
    option_order: tuple[int, ...]


def render_abbrev_block(detections: Sequence[Detection]) -> str:
    """One "token: expansion" line per expanded detection, in input order."""
    return "\n".join(f"{d.token}: {d.expansion}" for d in detections if d.expansion)


def _context_block(contexts: Context | None) -> str:
    lines = [CONTEXT_HEADER]
    if contexts is not None:
        for i, text in enumerate(contexts.texts, 1):
            lines.append(f"context {i}: {text}")
    return "\n\n".join(lines)


def _derive_order(canonical: Sequence[str], displayed: Sequence[str]) -> tuple[int, ...]:
    used = [False] * len(canonical)
    order: list[int] = []
    for text in displayed:
        for j, option in enumerate(canonical):
            if not used[j] and option == text:
                used[j] = True
                order.append(j)
                break
        else:
            raise ValueError(f"displayed option {text!r} is not one of the question options")
    return tuple(order)


def build_phi2_prompt(
    q: McqQuestion,
    options_in_order: Sequence[str],
    abbrevs: Sequence[Detection] = (),
    contexts: Context | None = None,
    option_order: Sequence[int] | None = None,
) -> PromptText:
    """Render the instruct-style MCQ prompt.

    Layout: instruct line with the question, the abbreviation block (omitted
    entirely when no detection has an expansion), the context header with
    numbered context entries (header kept even with zero contexts), the
    question repeated, the numbered options in the given display order, and
    the terminal output cue.
    """
    if not options_in_order:
        raise ValueError("options_in_order must be non-empty")
    if sorted(options_in_order) != sorted(q.options):
        raise ValueError("options_in_order must be a permutation of the question options")
    if option_order is None:
        option_order = _derive_order(q.options, options_in_order)
    else:
        option_order = tuple(option_order)
        if sorted(option_order) != list(range(len(q.options))):
            raise ValueError("option_order must be a permutation of option indices")
        if [q.options[j] for j in option_order] != list(options_in_order):
            raise ValueError("option_order does not describe options_in_order")

    parts = [f"Instruct: {q.text}"]
    block = render_abbrev_block(abbrevs)
    if block:
        parts.append(f"Abbreviations:\n{block}")
    parts.append(_context_block(contexts))
    parts.append(q.text)
    parts.append("\n".join(f"option {i}: {text}" for i, text in enumerate(options_in_order, 1)))
    parts.append(OUTPUT_CUE)
    return PromptText("\n\n".join(parts), PHI2_STYLE, tuple(option_order))


def build_falcon_prompt(
    q: McqQuestion,
    abbrevs: Sequence[Detection] = (),
    contexts: Context | None = None,
) -> PromptText:
    """Render the free-text expert prompt: no options, no output cue."""
    parts = [FALCON_SYSTEM_LINE, q.text]
    block = render_abbrev_block(abbrevs)
    if block:
        parts.append(f"Abbreviations:\n{block}")
    parts.append(_context_block(contexts))
    parts.append(q.text)
    return PromptText("\n\n".join(parts), FALCON_STYLE, tuple(range(len(q.options))))
