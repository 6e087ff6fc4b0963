"""Abbreviation mining, detection, and dictionary coverage metrics.

Standards questions lean heavily on abbreviations, so the engine mines
token/expansion pairs from the definitions sections of parsed documents
and expands any abbreviation it can find in a question before prompting.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Document

# Common English words that pass the uppercase-token grammar when a
# question is written in caps; never treated as abbreviations.
DEFAULT_STOPWORDS = frozenset(
    "AN AND ARE AS AT BE BY DO FOR IF IN IS IT NO NOT OF ON OR SO THE TO".split()
)

_DEFINITION_LINE_RE = re.compile(r"^\s*(\S+)\s+(\S.*?)\s*$")
_TOKEN_RE = re.compile(r"[A-Za-z0-9]+(?:-[A-Za-z0-9]+)*")


def is_abbrev_token(token: str, stopwords: frozenset[str] = DEFAULT_STOPWORDS) -> bool:
    """Whether a token looks like an abbreviation.

    Grammar: length >= 2; characters limited to uppercase letters, digits
    and hyphens; at least half of the characters are uppercase letters;
    not a stopword.
    """
    if len(token) < 2 or token in stopwords:
        return False
    upper = 0
    for ch in token:
        if "A" <= ch <= "Z":
            upper += 1
        elif not (ch.isdigit() or ch == "-"):
            return False
    return 2 * upper >= len(token)


@dataclass(frozen=True)
class AbbrevEntry:
    abbrev: str
    expansion: str
    source_doc: str

    def __post_init__(self) -> None:
        if len(self.abbrev) < 2:
            raise ValueError(f"abbreviation {self.abbrev!r} shorter than 2 characters")
        if not self.expansion:
            raise ValueError(f"empty expansion for {self.abbrev!r}")


@dataclass
class AbbrevDict:
    """Immutable-after-merge mapping from abbreviation token to expansion.

    Exactly one expansion is kept per token; alternates discarded during
    merging are retained in conflict_log for audit.
    """

    entries: dict[str, AbbrevEntry] = field(default_factory=dict)
    conflict_log: list[AbbrevEntry] = field(default_factory=list)

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def expansion(self, token: str) -> str | None:
        entry = self.entries.get(token)
        return entry.expansion if entry else None

    def save(self, path: str | Path) -> None:
        """Persist as a JSON object {abbrev: expansion}."""
        payload = {token: entry.expansion for token, entry in self.entries.items()}
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AbbrevDict":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = {
            token: AbbrevEntry(token, expansion, source_doc="")
            for token, expansion in payload.items()
        }
        return cls(entries=entries)

    def save_conflicts(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for entry in self.conflict_log:
                record = {
                    "abbrev": entry.abbrev,
                    "expansion": entry.expansion,
                    "source_doc": entry.source_doc,
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass(frozen=True)
class Detection:
    """An abbreviation-shaped token spotted in free text.

    span holds the character offsets of the token's first occurrence;
    expansion is present exactly when the token is in the dictionary.
    """

    token: str
    expansion: str | None
    span: tuple[int, int]


def extract_abbreviations(document: Document) -> list[AbbrevEntry]:
    """Mine token/expansion pairs from a document's definitions sections.

    Only sections whose heading contains "abbreviation" (case-insensitive)
    are scanned, and never front-matter sections. Each body line of the
    form TOKEN whitespace EXPANSION with a grammar-conforming token yields
    one entry; other lines are ignored.
    """
    entries: list[AbbrevEntry] = []
    for section in document.sections:
        if section.is_front_matter:
            continue
        if "abbreviation" not in section.heading.lower():
            continue
        for line in section.body.splitlines():
            match = _DEFINITION_LINE_RE.match(line)
            if not match:
                continue
            token, expansion = match.group(1), match.group(2)
            if not is_abbrev_token(token):
                continue
            entries.append(AbbrevEntry(token, expansion, document.doc_id))
    return entries


def merge_dictionaries(entry_lists: Iterable[Sequence[AbbrevEntry]]) -> AbbrevDict:
    """Merge entry lists with a first-seen-wins policy per token.

    A later entry whose expansion differs from the kept one is appended to
    the conflict log; exact duplicates are ignored, so re-merging a
    dictionary's own entries changes nothing.
    """
    entries: dict[str, AbbrevEntry] = {}
    conflicts: list[AbbrevEntry] = []
    for entry_list in entry_lists:
        for entry in entry_list:
            kept = entries.get(entry.abbrev)
            if kept is None:
                entries[entry.abbrev] = entry
            elif kept.expansion != entry.expansion:
                conflicts.append(entry)
    return AbbrevDict(entries=entries, conflict_log=conflicts)


def detect_abbreviations(
    text: str,
    abbrevs: AbbrevDict,
    stopwords: frozenset[str] = DEFAULT_STOPWORDS,
) -> list[Detection]:
    """Find abbreviation-shaped tokens in text, one Detection per distinct token."""
    detections: list[Detection] = []
    seen: set[str] = set()
    for match in _TOKEN_RE.finditer(text):
        token = match.group(0)
        if token in seen or not is_abbrev_token(token, stopwords):
            continue
        seen.add(token)
        detections.append(Detection(token, abbrevs.expansion(token), (match.start(), match.end())))
    return detections


def hit_rate(questions: Sequence[str], abbrevs: AbbrevDict) -> float:
    """Dictionary coverage over the distinct abbreviation tokens in questions.

    Returns covered/detected over the union of detected tokens across the
    whole question set, or 1.0 when nothing is detected at all.
    """
    detected: set[str] = set()
    for question in questions:
        for det in detect_abbreviations(question, abbrevs):
            detected.add(det.token)
    if not detected:
        return 1.0
    covered = sum(1 for token in detected if token in abbrevs)
    return covered / len(detected)
