import json

import pytest

from standsqa.cli import main

from conftest import make_biased_dataset, write_dataset_file


DOC_A = """ACME Radio Interface Specification
1 Scope
This clause describes scope and is skipped.
3 Definitions of terms, symbols and abbreviations
UE\tUser Equipment
RAN\tRadio Access Network
QFX\tQuantum Flux Procedure
4 General
The general clause explains veritas procedures in detail. {filler}
4.1 Paging
Paging reaches idle devices through the quantum flux capacitor alignment.
"""

DOC_B = """ACME Core Network Specification
1 Scope
Skipped again.
4 Architecture
The architecture clause lists functions and reference points. {filler}
5 Handover
Handover moves sessions between cells without loss.
"""


@pytest.fixture
def workspace(tmp_path):
    docs = tmp_path / "docs"
    docs.mkdir()
    (docs / "doc_a.txt").write_text(DOC_A.format(filler="alpha " * 300), encoding="utf-8")
    (docs / "doc_b.txt").write_text(DOC_B.format(filler="beta " * 300), encoding="utf-8")

    rules = tmp_path / "rules.txt"
    rules.write_text("slot-of: veritas\ndefault: unknown\n", encoding="utf-8")

    config = tmp_path / "config.json"
    config.write_text(
        json.dumps(
            {
                "seed": 3,
                "shuffle_k": 4,
                "per_retriever_k": 2,
                "backends": {
                    "generation": {"kind": "script", "model_id": "mock", "script_path": str(rules)},
                    "answer_embedding": {"kind": "hash", "model_id": "answer-hash", "dim": 64},
                },
                "retrieval_embedders": [
                    {"kind": "hash", "model_id": "hash-a", "dim": 32},
                    {"kind": "hash", "model_id": "hash-b", "dim": 16},
                ],
            }
        ),
        encoding="utf-8",
    )

    dataset = write_dataset_file(
        tmp_path / "dataset.json", make_biased_dataset(10, seed=4, marker="veritas")
    )
    return tmp_path, docs, config, dataset


def _run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_full_cli_flow(workspace, capsys):
    tmp_path, docs, config, dataset = workspace
    work = tmp_path / "work"

    code, out, _ = _run(
        capsys,
        ["ingest", str(docs / "doc_a.txt"), str(docs / "doc_b.txt"), "--out", str(work),
         "--chunk-size", "256"],
    )
    assert code == 0
    assert json.loads(out)["documents"] == 2
    assert (work / "chunks.jsonl").exists()
    assert (work / "corpus_manifest.json").exists()

    code, out, _ = _run(
        capsys,
        ["build-abbrev", str(docs / "doc_a.txt"), str(docs / "doc_b.txt"), "--out", str(work)],
    )
    assert code == 0
    assert json.loads(out)["entries"] == 3
    abbrev_payload = json.loads((work / "abbrev.json").read_text())
    assert abbrev_payload["UE"] == "User Equipment"

    code, out, _ = _run(
        capsys,
        ["build-index", "--chunks", str(work / "chunks.jsonl"), "--out", str(work / "index"),
         "--config", str(config)],
    )
    assert code == 0
    assert json.loads(out)["models"] == ["hash-a", "hash-b"]

    code, out, _ = _run(
        capsys, ["hit-rate", "--dataset", str(dataset), "--abbrev", str(work / "abbrev.json")]
    )
    assert code == 0
    assert 0.0 <= json.loads(out)["hit_rate"] <= 1.0

    code, out, _ = _run(
        capsys,
        ["query", "--index", str(work / "index"), "--config", str(config),
         "--question", "how does paging reach idle devices?"],
    )
    assert code == 0
    results = json.loads(out)
    assert results
    assert {r["retriever_id"] for r in results} <= {"hash-a", "hash-b", "bm25"}

    code, out, _ = _run(
        capsys,
        ["render-prompt", "--dataset", str(dataset), "--style", "phi2",
         "--index", str(work / "index"), "--abbrev", str(work / "abbrev.json"),
         "--config", str(config)],
    )
    assert code == 0
    assert "Instruct:" in out
    assert "Output :" in out

    code, out, _ = _run(
        capsys,
        ["ask", "--dataset", str(dataset), "--index", str(work / "index"),
         "--abbrev", str(work / "abbrev.json"), "--config", str(config)],
    )
    assert code == 0
    record = json.loads(out)
    assert record["method"] == "shuffle_vote"


def test_evaluate_is_deterministic_and_scores_truth_teller(workspace, capsys):
    tmp_path, docs, config, dataset = workspace
    work = tmp_path / "work"
    _run(capsys, ["ingest", str(docs / "doc_a.txt"), str(docs / "doc_b.txt"),
                  "--out", str(work), "--chunk-size", "256"])
    _run(capsys, ["build-index", "--chunks", str(work / "chunks.jsonl"),
                  "--out", str(work / "index"), "--config", str(config)])

    outputs = []
    for name in ("out1", "out2"):
        code, out, _ = _run(
            capsys,
            ["evaluate", "--dataset", str(dataset), "--out", str(tmp_path / name),
             "--index", str(work / "index"), "--config", str(config)],
        )
        assert code == 0
        assert "TOTAL" in out
        outputs.append((tmp_path / name / "report.json").read_bytes())
    assert outputs[0] == outputs[1]
    report = json.loads(outputs[0])
    assert report["accuracy"] == 100.0
    assert (tmp_path / "out1" / "diagnostics.jsonl").read_bytes() == (
        tmp_path / "out2" / "diagnostics.jsonl"
    ).read_bytes()


def test_prep_train_is_deterministic(workspace, capsys):
    tmp_path, _, config, dataset = workspace
    outputs = []
    for name in ("t1", "t2"):
        code, out, _ = _run(
            capsys,
            ["prep-train", "--dataset", str(dataset), "--out", str(tmp_path / name),
             "--epochs", "2", "--config", str(config), "--no-rag"],
        )
        assert code == 0
        assert json.loads(out)["records"] == 20
        outputs.append((tmp_path / name / "training.jsonl").read_bytes())
    assert outputs[0] == outputs[1]
    manifest = json.loads((tmp_path / "t1" / "training_manifest.json").read_text())
    assert manifest["training_config"]["lora_rank"] == 64
    assert manifest["record_count"] == 20


def test_cli_failure_emits_error_json(workspace, capsys):
    tmp_path, _, config, _ = workspace
    code, _, err = _run(
        capsys,
        ["evaluate", "--dataset", str(tmp_path / "missing.json"),
         "--out", str(tmp_path / "out"), "--config", str(config)],
    )
    assert code == 1
    payload = json.loads(err)
    assert payload["error"]["type"] == "DatasetError"
    assert "missing.json" in payload["error"]["message"]


def test_render_prompt_falcon_has_no_options(workspace, capsys):
    tmp_path, _, config, dataset = workspace
    code, out, _ = _run(
        capsys,
        ["render-prompt", "--dataset", str(dataset), "--style", "falcon", "--no-rag",
         "--config", str(config)],
    )
    assert code == 0
    assert "option 1:" not in out
    assert "veritas" not in out
