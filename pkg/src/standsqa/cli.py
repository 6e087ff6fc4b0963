"""Command-line entry points.

Subcommands cover the whole flow: ingest a corpus, build the retrieval
index and abbreviation dictionary, inspect retrieval and prompts, answer
single questions, evaluate a dataset, and emit fine-tuning records.
Failures exit nonzero with a machine-readable error JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import abbrev as abbrev_mod
from . import corpus as corpus_mod
from . import retrieval as retrieval_mod
from .backend import build_backend
from .evaluate import (
    DatasetError,
    PipelineError,
    answer_single,
    load_dataset,
    load_pipeline_config,
    resolve_artifacts,
    run_pipeline,
)
from .prompt import build_falcon_prompt, build_phi2_prompt
from .trainprep import (
    DEFAULT_TOKENIZER_ID,
    TrainingConfig,
    emit_training_set,
    write_training_manifest,
    write_training_records,
)


def _read_config(args) -> dict:
    if getattr(args, "config", None):
        return json.loads(Path(args.config).read_text(encoding="utf-8"))
    return {}


def _pipeline_config(args):
    payload = _read_config(args)
    for flag in ("seed", "shuffle_k", "per_retriever_k", "rag_enabled", "include_options"):
        value = getattr(args, flag, None)
        if value is not None:
            payload[flag] = value
    return load_pipeline_config(payload)


def _chunking_config(args) -> corpus_mod.ChunkingConfig:
    return corpus_mod.ChunkingConfig(
        chunk_size=args.chunk_size,
        chunk_overlap=args.chunk_overlap,
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(args) -> int:
    cfg = _chunking_config(args)
    chunks, manifest = corpus_mod.build_corpus(args.paths, cfg)
    out = _out_dir(args)
    corpus_mod.write_chunks(chunks, out / "chunks.jsonl")
    (out / "corpus_manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    print(json.dumps({"chunks": len(chunks), "documents": len(manifest.doc_ids)}, sort_keys=True))
    return 0


def cmd_build_abbrev(args) -> int:
    entry_lists = []
    for path in args.paths:
        raw = Path(path).read_text(encoding="utf-8")
        document = corpus_mod.parse_document(raw, Path(path).stem)
        entry_lists.append(abbrev_mod.extract_abbreviations(document))
    merged = abbrev_mod.merge_dictionaries(entry_lists)
    out = _out_dir(args)
    merged.save(out / "abbrev.json")
    merged.save_conflicts(out / "abbrev_conflicts.jsonl")
    print(json.dumps({"entries": len(merged), "conflicts": len(merged.conflict_log)}, sort_keys=True))
    return 0


def cmd_hit_rate(args) -> int:
    questions = [q.text for q in load_dataset(args.dataset)]
    dictionary = abbrev_mod.AbbrevDict.load(args.abbrev)
    rate = abbrev_mod.hit_rate(questions, dictionary)
    print(json.dumps({"hit_rate": rate, "questions": len(questions)}, sort_keys=True))
    return 0


def cmd_build_index(args) -> int:
    cfg = _pipeline_config(args)
    if not cfg.retrieval_embedders:
        raise PipelineError("config declares no retrieval_embedders")
    chunks = corpus_mod.read_chunks(args.chunks)
    matrices = []
    for embedder_cfg in cfg.retrieval_embedders:
        backend = build_backend(embedder_cfg)
        matrices.append(retrieval_mod.embed_chunks(chunks, backend, args.batch_size))
    bm25 = retrieval_mod.bm25_build(chunks, k1=args.k1, b=args.b)
    retrieval_mod.save_index(args.out, chunks, matrices, bm25)
    print(
        json.dumps(
            {"chunks": len(chunks), "models": [m.model_id for m in matrices]}, sort_keys=True
        )
    )
    return 0


def cmd_query(args) -> int:
    cfg = _pipeline_config(args)
    artifacts = resolve_artifacts(args.index, None, cfg)
    context = retrieval_mod.hybrid_retrieve(
        args.question, artifacts.dense, artifacts.bm25, artifacts.chunks_by_id, cfg.per_retriever_k
    )
    payload = [
        {"chunk_id": e.chunk_id, "retriever_id": e.retriever_id, "score": e.score, "text": e.text}
        for e in context.entries
    ]
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def _find_question(args):
    questions = load_dataset(args.dataset)
    if args.question_id is None:
        return questions[0]
    for q in questions:
        if q.question_id == args.question_id:
            return q
    raise DatasetError(f"question id {args.question_id!r} not in dataset")


def cmd_render_prompt(args) -> int:
    cfg = _pipeline_config(args)
    artifacts = resolve_artifacts(args.index, args.abbrev, cfg)
    q = _find_question(args)
    detections = abbrev_mod.detect_abbreviations(q.text, artifacts.abbrevs)
    contexts = None
    if cfg.rag_enabled and args.index is not None:
        contexts = retrieval_mod.hybrid_retrieve(
            q.text, artifacts.dense, artifacts.bm25, artifacts.chunks_by_id, cfg.per_retriever_k
        )
    if args.style == "falcon":
        prompt = build_falcon_prompt(q, detections, contexts)
    else:
        prompt = build_phi2_prompt(q, list(q.options), detections, contexts)
    print(prompt.rendered)
    return 0


def cmd_ask(args) -> int:
    cfg = _pipeline_config(args)
    artifacts = resolve_artifacts(args.index, args.abbrev, cfg)
    q = _find_question(args)
    record = answer_single(cfg, q, artifacts)
    print(json.dumps(record, sort_keys=True, indent=2))
    return 0


def _print_report_table(report) -> None:
    print(f"{'category':<40} {'total':>6} {'correct':>8} {'accuracy':>9}")
    for category in sorted(report.per_category):
        bucket = report.per_category[category]
        label = category or "(uncategorized)"
        print(
            f"{label:<40} {bucket['total']:>6} {bucket['correct']:>8} "
            f"{bucket['accuracy']:>8.2f}%"
        )
    print(f"{'TOTAL':<40} {report.total:>6} {report.correct:>8} {report.accuracy:>8.2f}%")


def cmd_evaluate(args) -> int:
    cfg = _pipeline_config(args)
    artifacts = resolve_artifacts(args.index, args.abbrev, cfg)
    questions = load_dataset(args.dataset)
    out = _out_dir(args)
    diagnostics: list = []
    try:
        report = run_pipeline(cfg, questions, artifacts, diagnostics=diagnostics)
    except PipelineError as exc:
        # dump whatever was answered before the abort, then re-raise
        partial = {"error": str(exc), "records": exc.partial_records}
        (out / "partial_report.json").write_text(
            json.dumps(partial, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        raise
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    with (out / "diagnostics.jsonl").open("w", encoding="utf-8") as fh:
        for record in diagnostics:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    _print_report_table(report)
    return 0


def cmd_prep_train(args) -> int:
    cfg = _pipeline_config(args)
    artifacts = resolve_artifacts(args.index, args.abbrev, cfg)
    questions = load_dataset(args.dataset)
    contexts_by_qid = {}
    abbrevs_by_qid = {}
    for q in questions:
        abbrevs_by_qid[q.question_id] = abbrev_mod.detect_abbreviations(q.text, artifacts.abbrevs)
        if cfg.rag_enabled and args.index is not None:
            contexts_by_qid[q.question_id] = retrieval_mod.hybrid_retrieve(
                q.text, artifacts.dense, artifacts.bm25, artifacts.chunks_by_id, cfg.per_retriever_k
            )
    records = emit_training_set(
        questions,
        contexts_by_qid,
        epochs=args.epochs,
        seed=cfg.seed,
        tokenizer_id=args.tokenizer,
        abbrevs_by_qid=abbrevs_by_qid,
    )
    out = _out_dir(args)
    write_training_records(records, out / "training.jsonl")
    write_training_manifest(
        out / "training_manifest.json",
        TrainingConfig(quantized=args.quantized),
        epochs=args.epochs,
        seed=cfg.seed,
        tokenizer_id=args.tokenizer,
        record_count=len(records),
    )
    print(json.dumps({"records": len(records), "epochs": args.epochs}, sort_keys=True))
    return 0


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline config JSON file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--shuffle-k", dest="shuffle_k", type=int, default=None)
    parser.add_argument("--per-retriever-k", dest="per_retriever_k", type=int, default=None)
    parser.add_argument(
        "--rag", dest="rag_enabled", action=argparse.BooleanOptionalAction, default=None
    )
    parser.add_argument(
        "--options", dest="include_options", action=argparse.BooleanOptionalAction, default=None
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="standsqa",
        description="Retrieval-augmented MCQ answering over technical-standards corpora",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and chunk documents into a corpus")
    p.add_argument("paths", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-size", dest="chunk_size", type=int, default=corpus_mod.DEFAULT_CHUNK_SIZE)
    p.add_argument("--chunk-overlap", dest="chunk_overlap", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-abbrev", help="mine an abbreviation dictionary from documents")
    p.add_argument("paths", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_abbrev)

    p = sub.add_parser("hit-rate", help="dictionary coverage over a question set")
    p.add_argument("--dataset", required=True)
    p.add_argument("--abbrev", required=True)
    p.set_defaults(func=cmd_hit_rate)

    p = sub.add_parser("build-index", help="embed chunks and build the hybrid index")
    p.add_argument("--chunks", required=True, help="chunks.jsonl from ingest")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=retrieval_mod.DEFAULT_BATCH_SIZE)
    p.add_argument("--k1", type=float, default=retrieval_mod.DEFAULT_BM25_K1)
    p.add_argument("--b", type=float, default=retrieval_mod.DEFAULT_BM25_B)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("query", help="inspect hybrid retrieval for a question")
    p.add_argument("--index", required=True)
    p.add_argument("--question", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("render-prompt", help="render a prompt for inspection")
    p.add_argument("--dataset", required=True)
    p.add_argument("--question-id", dest="question_id", default=None)
    p.add_argument("--style", choices=["phi2", "falcon"], default="phi2")
    p.add_argument("--index", default=None)
    p.add_argument("--abbrev", default=None)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_render_prompt)

    p = sub.add_parser("ask", help="answer a single question")
    p.add_argument("--dataset", required=True)
    p.add_argument("--question-id", dest="question_id", default=None)
    p.add_argument("--index", default=None)
    p.add_argument("--abbrev", default=None)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("evaluate", help="run a dataset through the pipeline and score it")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--abbrev", default=None)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("prep-train", help="emit fine-tuning records with per-epoch shuffling")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--tokenizer", default=DEFAULT_TOKENIZER_ID)
    p.add_argument("--quantized", action="store_true")
    p.add_argument("--index", default=None)
    p.add_argument("--abbrev", default=None)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_prep_train)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single choke point for the error JSON contract
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
