"""Parsing of standards documents into sections and heading-prefixed chunks.

Documents are plain-text UTF-8 files whose structure follows numbered
section headings ("1 Scope", "4.1 Paging"). Text ahead of the first
heading (the title page) and sections named in the front-matter skip list
are excluded from chunking; every emitted chunk starts with the heading of
the section it came from so retrieval hits keep their context.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_CHUNK_SIZE = 1024
DEFAULT_HEADING_PATTERN = r"^\d+(?:\.\d+)*\s+\S"
DEFAULT_FRONT_MATTER_HEADINGS = ("Contents", "Scope", "References", "Foreword")

TITLE_PAGE_HEADING = "Title page"

_NUMBERING_RE = re.compile(r"^\d+(?:\.\d+)*\s+")


class CorpusError(Exception):
    """Raised when corpus input files cannot be read or are inconsistent."""


@dataclass(frozen=True)
class ChunkingConfig:
    """Knobs for section detection and chunk windowing.

    chunk_size and chunk_overlap are measured in characters, never bytes,
    so multi-byte characters are never split. The default overlap of 0
    makes chunk bodies partition each section body exactly.
    """

    chunk_size: int = DEFAULT_CHUNK_SIZE
    chunk_overlap: int = 0
    heading_pattern: str = DEFAULT_HEADING_PATTERN
    front_matter_headings: tuple[str, ...] = DEFAULT_FRONT_MATTER_HEADINGS

    def __post_init__(self) -> None:
        if self.chunk_size <= 0:
            raise ValueError("chunk_size must be positive")
        if self.chunk_overlap < 0 or self.chunk_overlap >= self.chunk_size:
            raise ValueError("chunk_overlap must be in [0, chunk_size)")

    def to_dict(self) -> dict:
        return {
            "chunk_size": self.chunk_size,
            "chunk_overlap": self.chunk_overlap,
            "heading_pattern": self.heading_pattern,
            "front_matter_headings": list(self.front_matter_headings),
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Section:
    heading: str
    body: str
    is_front_matter: bool = False

    def __post_init__(self) -> None:
        if not self.heading:
            raise ValueError("section heading must be non-empty")


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    sections: tuple[Section, ...]


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    heading: str
    body: str

    @property
    def text(self) -> str:
        """Retrieval text: the section heading prepended to the body."""
        return f"{self.heading}\n{self.body}"


@dataclass(frozen=True)
class CorpusManifest:
    doc_ids: tuple[str, ...]
    section_counts: dict[str, int]
    chunk_counts: dict[str, int]
    config_hash: str

    def to_json(self) -> str:
        payload = {
            "doc_ids": list(self.doc_ids),
            "section_counts": self.section_counts,
            "chunk_counts": self.chunk_counts,
            "config_hash": self.config_hash,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _heading_title(heading: str) -> str:
    """Heading text with any leading section numbering removed."""
    return _NUMBERING_RE.sub("", heading).strip()


def parse_document(raw_text: str, doc_id: str, cfg: ChunkingConfig | None = None) -> Document:
    """Split raw document text into sections along heading lines.

    Every line matching the configured heading pattern starts a new
    section; the lines between two headings form the section body,
    preserved byte for byte. Text before the first heading becomes a
    front-matter section, as do sections whose heading (numbering
    stripped) matches the front-matter skip list case-insensitively.
    """
    cfg = cfg or ChunkingConfig()
    if not doc_id:
        raise ValueError("doc_id must be non-empty")
    if not raw_text.strip():
        raise ValueError("empty document")

    heading_re = re.compile(cfg.heading_pattern)
    skip = {h.strip().lower() for h in cfg.front_matter_headings}

    pre_lines: list[str] = []
    headings: list[str] = []
    bodies: list[list[str]] = []
    for line in raw_text.splitlines():
        if heading_re.match(line):
            headings.append(line.rstrip())
            bodies.append([])
        elif headings:
            bodies[-1].append(line)
        else:
            pre_lines.append(line)

    sections: list[Section] = []
    pre_text = "\n".join(pre_lines)
    if pre_text.strip():
        sections.append(Section(TITLE_PAGE_HEADING, pre_text, is_front_matter=True))
    for heading, body_lines in zip(headings, bodies):
        title = _heading_title(heading).lower()
        is_fm = title in skip or heading.strip().lower() in skip
        sections.append(Section(heading, "\n".join(body_lines), is_front_matter=is_fm))

    title = next((ln.strip() for ln in pre_lines if ln.strip()), doc_id)
    return Document(doc_id=doc_id, title=title, sections=tuple(sections))


def chunk_section(
    section: Section,
    cfg: ChunkingConfig | None = None,
    *,
    doc_id: str = "",
    section_index: int = 0,
) -> list[Chunk]:
    """Window a section body into heading-prefixed chunks.

    Windows are chunk_size characters wide and advance by
    chunk_size - chunk_overlap; the last window may be shorter. An empty
    body yields no chunks. Front-matter sections are never chunked.
    """
    cfg = cfg or ChunkingConfig()
    if section.is_front_matter:
        raise ValueError("front-matter sections are never chunked")
    step = cfg.chunk_size - cfg.chunk_overlap
    chunks: list[Chunk] = []
    start = 0
    ordinal = 0
    while start < len(section.body):
        piece = section.body[start : start + cfg.chunk_size]
        chunk_id = f"{doc_id}:s{section_index}:c{ordinal}"
        chunks.append(Chunk(chunk_id, doc_id, section.heading, piece))
        ordinal += 1
        start += step
    return chunks


def chunk_document(document: Document, cfg: ChunkingConfig | None = None) -> list[Chunk]:
    """All chunks of a document's non-front-matter sections, in order."""
    cfg = cfg or ChunkingConfig()
    out: list[Chunk] = []
    for index, section in enumerate(document.sections):
        if section.is_front_matter:
            continue
        out.extend(chunk_section(section, cfg, doc_id=document.doc_id, section_index=index))
    return out


def build_corpus(
    paths: Sequence[str | Path],
    cfg: ChunkingConfig | None = None,
) -> tuple[list[Chunk], CorpusManifest]:
    """Parse and chunk every file in input order.

    Document ids are the file stems and must be unique across the corpus.
    The manifest records per-document section and chunk counts plus the
    config hash, so identical inputs always produce identical manifests.
    """
    cfg = cfg or ChunkingConfig()
    chunks: list[Chunk] = []
    doc_ids: list[str] = []
    section_counts: dict[str, int] = {}
    chunk_counts: dict[str, int] = {}
    for path in paths:
        path = Path(path)
        try:
            raw = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise CorpusError(f"cannot read {path}: {exc}") from exc
        doc_id = path.stem
        if doc_id in section_counts:
            raise CorpusError(f"duplicate document id {doc_id!r} from {path}")
        document = parse_document(raw, doc_id, cfg)
        doc_chunks = chunk_document(document, cfg)
        chunks.extend(doc_chunks)
        doc_ids.append(doc_id)
        section_counts[doc_id] = len(document.sections)
        chunk_counts[doc_id] = len(doc_chunks)
    manifest = CorpusManifest(
        doc_ids=tuple(doc_ids),
        section_counts=section_counts,
        chunk_counts=chunk_counts,
        config_hash=cfg.config_hash(),
    )
    return chunks, manifest


def write_chunks(chunks: Iterable[Chunk], path: str | Path) -> None:
    """Serialize chunks as line-delimited JSON records."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for chunk in chunks:
            record = {
                "chunk_id": chunk.chunk_id,
                "doc_id": chunk.doc_id,
                "heading": chunk.heading,
                "body": chunk.body,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_chunks(path: str | Path) -> list[Chunk]:
    chunks: list[Chunk] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                chunks.append(
                    Chunk(record["chunk_id"], record["doc_id"], record["heading"], record["body"])
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed chunk record: {exc}") from exc
    return chunks
