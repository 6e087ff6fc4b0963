"""Dataset loading, pipeline orchestration, and accuracy reporting.

run_pipeline wires the whole engine together for one configuration:
abbreviation detection, optional hybrid retrieval, answering via
shuffle-vote, single labeled prompt, or free-text similarity, and a
seeded random fallback so no question is ever dropped from the
denominator.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .abbrev import AbbrevDict, Detection, detect_abbreviations
from .answer import (
    METHOD_LABEL_PARSE,
    METHOD_RANDOM_FALLBACK,
    METHOD_SIMILARITY,
    fallback_random,
    parse_option_label,
    select_by_similarity,
)
from .backend import (
    ANSWER_EMBEDDING,
    BackendConfig,
    BackendError,
    CompletionBackend,
    CompletionRequest,
    EmbeddingBackend,
    GENERATION,
    build_backend,
    complete_batch,
)
from .corpus import Chunk
from .prompt import McqQuestion, build_falcon_prompt, build_phi2_prompt
from .retrieval import (
    Bm25Index,
    Context,
    DenseRetriever,
    RetrievalError,
    hybrid_retrieve,
)
from .seeding import derive_seed
from .shuffle import NoParsableAnswersError, answer_with_shuffle

METHOD_SHUFFLE_VOTE = "shuffle_vote"

_ANSWER_LABEL_RE = re.compile(r"^\s*option\s+(\d+)\s*:?", re.IGNORECASE)
_OPTION_KEY_RE = re.compile(r"^option (\d+)$")


class DatasetError(Exception):
    """Raised when an MCQ dataset file is malformed."""


class PipelineError(Exception):
    """A pipeline run aborted; partial per-question records ride along."""

    def __init__(self, message: str, partial_records: list[dict] | None = None):
        super().__init__(message)
        self.partial_records = partial_records or []


def load_dataset(path: str | Path) -> list[McqQuestion]:
    """Load a JSON map of question objects into McqQuestions.

    Expected entry shape: {"question": ..., "option 1": ..., ...,
    "answer": "option 3: ...", "category": ...}. Option labels must be
    contiguous from 1; the gold index comes from the answer label. Entries
    without an answer field load with gold None.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"dataset {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise DatasetError(f"dataset {path} must be a JSON object of question entries")

    questions: list[McqQuestion] = []
    for qid, entry in data.items():
        if not isinstance(entry, dict):
            raise DatasetError(f"question {qid}: entry must be an object")
        if "question" not in entry:
            raise DatasetError(f"question {qid}: missing 'question' field")
        labeled: dict[int, str] = {}
        for key, value in entry.items():
            match = _OPTION_KEY_RE.match(key)
            if match:
                labeled[int(match.group(1))] = str(value)
        labels = sorted(labeled)
        if labels != list(range(1, len(labels) + 1)):
            raise DatasetError(f"question {qid}: non-contiguous option labels {labels}")
        if not 2 <= len(labels) <= 5:
            raise DatasetError(f"question {qid}: option count {len(labels)} not in [2, 5]")
        options = tuple(labeled[i] for i in labels)
        gold: int | None = None
        if "answer" in entry and entry["answer"] is not None:
            match = _ANSWER_LABEL_RE.match(str(entry["answer"]))
            if not match:
                raise DatasetError(f"question {qid}: unparsable answer label {entry['answer']!r}")
            gold = int(match.group(1)) - 1
            if not 0 <= gold < len(options):
                raise DatasetError(f"question {qid}: answer label {gold + 1} out of range")
        questions.append(
            McqQuestion(
                question_id=str(qid),
                text=str(entry["question"]),
                options=options,
                gold=gold,
                category=str(entry.get("category", "")),
            )
        )
    return questions


@dataclass(frozen=True)
class PipelineConfig:
    """One evaluation variant: which stages are on and which backends serve them.

    shuffle_k = 0 turns shuffle-voting off; include_options = False routes
    answering through the free-text similarity path (and is incompatible
    with shuffle_k > 0, which needs option labels in the prompt).
    """

    rag_enabled: bool = True
    include_options: bool = True
    shuffle_k: int = 20
    per_retriever_k: int = 2
    backends: tuple[tuple[str, BackendConfig], ...] = ()
    retrieval_embedders: tuple[BackendConfig, ...] = ()
    seed: int = 0
    max_new_tokens: int = 32
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.shuffle_k < 0:
            raise ValueError("shuffle_k must be >= 0")
        if self.per_retriever_k < 1:
            raise ValueError("per_retriever_k must be >= 1")
        if self.shuffle_k > 0 and not self.include_options:
            raise ValueError("shuffle_k > 0 requires include_options")
        roles = [role for role, _ in self.backends]
        if len(roles) != len(set(roles)):
            raise ValueError("each backend role may be bound at most once")

    def backend_for(self, role: str) -> BackendConfig | None:
        for bound_role, config in self.backends:
            if bound_role == role:
                return config
        return None

    def to_dict(self) -> dict:
        return {
            "rag_enabled": self.rag_enabled,
            "include_options": self.include_options,
            "shuffle_k": self.shuffle_k,
            "per_retriever_k": self.per_retriever_k,
            "backends": {role: cfg.to_dict() for role, cfg in self.backends},
            "retrieval_embedders": [cfg.to_dict() for cfg in self.retrieval_embedders],
            "seed": self.seed,
            "max_new_tokens": self.max_new_tokens,
            "temperature": self.temperature,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class PipelineArtifacts:
    """Prebuilt corpus artifacts a pipeline run queries against."""

    chunks_by_id: Mapping[str, Chunk] = field(default_factory=dict)
    dense: tuple[DenseRetriever, ...] = ()
    bm25: Bm25Index | None = None
    abbrevs: AbbrevDict = field(default_factory=AbbrevDict)


@dataclass
class EvalReport:
    total: int
    correct: int
    accuracy: float
    per_category: dict[str, dict]
    records: list[dict]
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "per_category": self.per_category,
            "records": self.records,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def accuracy(predictions: Sequence[int], golds: Sequence[int]) -> float:
    """Percentage of predictions equal to their gold answers."""
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds must have equal length")
    if not predictions:
        raise ValueError("cannot compute accuracy over zero questions")
    matches = sum(1 for p, g in zip(predictions, golds) if p == g)
    return 100.0 * matches / len(predictions)


def _answer_question(
    cfg: PipelineConfig,
    q: McqQuestion,
    detections: Sequence[Detection],
    contexts: Context | None,
    generation: CompletionBackend,
    answer_embedding: EmbeddingBackend | None,
    diagnostics: list | None,
) -> tuple[int, str, dict]:
    if cfg.include_options and cfg.shuffle_k > 0:
        try:
            tally = answer_with_shuffle(
                q,
                cfg.shuffle_k,
                cfg.seed,
                backend=generation,
                abbrevs=detections,
                contexts=contexts,
                max_new_tokens=cfg.max_new_tokens,
                temperature=cfg.temperature,
                diagnostics=diagnostics,
            )
        except NoParsableAnswersError:
            slot = fallback_random(len(q.options), cfg.seed, q.question_id)
            return slot, METHOD_RANDOM_FALLBACK, {"reason": "no parsable answers"}
        return tally.winner, METHOD_SHUFFLE_VOTE, {"counts": list(tally.counts), "k": tally.k}

    if cfg.include_options:
        prompt = build_phi2_prompt(q, list(q.options), detections, contexts)
        request = CompletionRequest(
            prompts=(prompt.rendered,),
            max_new_tokens=cfg.max_new_tokens,
            temperature=cfg.temperature,
            seed=derive_seed(cfg.seed, "single", q.question_id),
            model_id=generation.model_id,
        )
        completion = complete_batch(request, generation)[0]
        slot = parse_option_label(completion, len(q.options))
        if slot is None:
            fallback = fallback_random(len(q.options), cfg.seed, q.question_id)
            return fallback, METHOD_RANDOM_FALLBACK, {"raw": completion}
        return slot, METHOD_LABEL_PARSE, {"raw": completion}

    assert answer_embedding is not None
    prompt = build_falcon_prompt(q, detections, contexts)
    request = CompletionRequest(
        prompts=(prompt.rendered,),
        max_new_tokens=cfg.max_new_tokens,
        temperature=cfg.temperature,
        seed=derive_seed(cfg.seed, "free", q.question_id),
        model_id=generation.model_id,
    )
    completion = complete_batch(request, generation)[0]
    slot = select_by_similarity(completion, list(q.options), answer_embedding)
    return slot, METHOD_SIMILARITY, {"raw": completion}


def run_pipeline(
    cfg: PipelineConfig,
    questions: Sequence[McqQuestion],
    artifacts: PipelineArtifacts,
    *,
    generation: CompletionBackend | None = None,
    answer_embedding: EmbeddingBackend | None = None,
    diagnostics: list | None = None,
) -> EvalReport:
    """Evaluate questions under one configuration and report accuracy.

    Backends default to instances built from the config; pass instances to
    override (tests inject mocks this way). Backend and retrieval failures
    abort the run with a PipelineError carrying the partial records;
    extraction failures never abort, they fall back to a seeded random
    choice and are flagged in the record.
    """
    if not questions:
        raise ValueError("no questions to evaluate")
    for q in questions:
        if q.gold is None:
            raise DatasetError(f"question {q.question_id!r} has no gold answer")

    if generation is None:
        gen_cfg = cfg.backend_for(GENERATION)
        if gen_cfg is None:
            raise PipelineError("no generation backend configured")
        generation = build_backend(gen_cfg)
    if not cfg.include_options and answer_embedding is None:
        ans_cfg = cfg.backend_for(ANSWER_EMBEDDING)
        if ans_cfg is None:
            raise PipelineError("no answer_embedding backend configured")
        answer_embedding = build_backend(ans_cfg)

    records: list[dict] = []
    predictions: list[int] = []
    golds: list[int] = []
    for q in questions:
        detections = detect_abbreviations(q.text, artifacts.abbrevs)
        try:
            contexts = (
                hybrid_retrieve(
                    q.text,
                    artifacts.dense,
                    artifacts.bm25,
                    artifacts.chunks_by_id,
                    cfg.per_retriever_k,
                )
                if cfg.rag_enabled
                else None
            )
            prediction, method, extra = _answer_question(
                cfg, q, detections, contexts, generation, answer_embedding, diagnostics
            )
        except (BackendError, RetrievalError) as exc:
            raise PipelineError(
                f"aborted at question {q.question_id!r}: {exc}", partial_records=records
            ) from exc
        record = {
            "question_id": q.question_id,
            "category": q.category,
            "prediction": prediction,
            "gold": q.gold,
            "correct": prediction == q.gold,
            "method": method,
            "diagnostics": extra,
        }
        records.append(record)
        predictions.append(prediction)
        golds.append(q.gold)  # type: ignore[arg-type]

    per_category: dict[str, dict] = {}
    for record in records:
        bucket = per_category.setdefault(record["category"], {"total": 0, "correct": 0})
        bucket["total"] += 1
        bucket["correct"] += int(record["correct"])
    for bucket in per_category.values():
        bucket["accuracy"] = 100.0 * bucket["correct"] / bucket["total"]

    overall = accuracy(predictions, golds)
    return EvalReport(
        total=len(records),
        correct=sum(1 for r in records if r["correct"]),
        accuracy=overall,
        per_category=per_category,
        records=records,
        config_hash=cfg.config_hash(),
    )


def answer_single(
    cfg: PipelineConfig,
    q: McqQuestion,
    artifacts: PipelineArtifacts,
    *,
    generation: CompletionBackend | None = None,
    answer_embedding: EmbeddingBackend | None = None,
    diagnostics: list | None = None,
) -> dict:
    """Answer one question (gold not required) and return its record."""
    if generation is None:
        gen_cfg = cfg.backend_for(GENERATION)
        if gen_cfg is None:
            raise PipelineError("no generation backend configured")
        generation = build_backend(gen_cfg)
    if not cfg.include_options and answer_embedding is None:
        ans_cfg = cfg.backend_for(ANSWER_EMBEDDING)
        if ans_cfg is None:
            raise PipelineError("no answer_embedding backend configured")
        answer_embedding = build_backend(ans_cfg)
    detections = detect_abbreviations(q.text, artifacts.abbrevs)
    contexts = (
        hybrid_retrieve(
            q.text, artifacts.dense, artifacts.bm25, artifacts.chunks_by_id, cfg.per_retriever_k
        )
        if cfg.rag_enabled
        else None
    )
    prediction, method, extra = _answer_question(
        cfg, q, detections, contexts, generation, answer_embedding, diagnostics
    )
    return {
        "question_id": q.question_id,
        "prediction": prediction,
        "option": q.options[prediction],
        "method": method,
        "diagnostics": extra,
    }


def resolve_artifacts(
    index_dir: str | Path | None,
    abbrev_path: str | Path | None,
    cfg: PipelineConfig,
) -> PipelineArtifacts:
    """Load index and dictionary files and bind query embedders by model id."""
    chunks_by_id: Mapping[str, Chunk] = {}
    dense: tuple[DenseRetriever, ...] = ()
    bm25: Bm25Index | None = None
    if index_dir is not None:
        from .retrieval import load_index

        index = load_index(index_dir)
        chunks_by_id = index.chunks_by_id
        bm25 = index.bm25
        by_model = {cfg_.model_id: cfg_ for cfg_ in cfg.retrieval_embedders}
        retrievers = []
        for matrix in index.matrices:
            embedder_cfg = by_model.get(matrix.model_id)
            if embedder_cfg is None:
                raise PipelineError(
                    f"no retrieval embedder configured for index model {matrix.model_id!r}"
                )
            retrievers.append(DenseRetriever(matrix, build_backend(embedder_cfg)))
        dense = tuple(retrievers)
    abbrevs = AbbrevDict.load(abbrev_path) if abbrev_path is not None else AbbrevDict()
    return PipelineArtifacts(
        chunks_by_id=chunks_by_id, dense=dense, bm25=bm25, abbrevs=abbrevs
    )


def load_pipeline_config(payload: dict) -> PipelineConfig:
    """Build a PipelineConfig from a parsed config-file dictionary."""
    backends: list[tuple[str, BackendConfig]] = []
    for role, entry in (payload.get("backends") or {}).items():
        backends.append((role, BackendConfig.from_dict(entry, role=role)))
    embedders = tuple(
        BackendConfig.from_dict(entry, role="retrieval_embedding")
        for entry in payload.get("retrieval_embedders") or []
    )
    return PipelineConfig(
        rag_enabled=bool(payload.get("rag_enabled", True)),
        include_options=bool(payload.get("include_options", True)),
        shuffle_k=int(payload.get("shuffle_k", 20)),
        per_retriever_k=int(payload.get("per_retriever_k", 2)),
        backends=tuple(backends),
        retrieval_embedders=embedders,
        seed=int(payload.get("seed", 0)),
        max_new_tokens=int(payload.get("max_new_tokens", 32)),
        temperature=float(payload.get("temperature", 0.0)),
    )
