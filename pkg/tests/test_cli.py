"""CLI surface: exit codes, output contracts, config precedence."""

from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from conftest import (
    CAUSE_ANSWER,
    CAUSE_QUESTION,
    cause_build_script,
    cause_query_script,
    text_el,
    write_docdir,
)
from deckagent.cli import main
from deckagent.config import ConfigError, load_config
from test_merge import oracle_partition
from deckagent.document import load_document


@pytest.fixture
def runner():
    return CliRunner()


def _script_file(tmp_path, records, name="script.json"):
    path = tmp_path / name
    path.write_text(json.dumps(records))
    return str(path)


# --- config precedence ----------------------------------------------------------

def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "cfg.toml"
    cfg_file.write_text(
        '[backend]\nchat_model = "from-file"\napi_base = "http://file.test"\n'
        "[retrieval]\nk_pages = 7\n"
    )
    cfg = load_config(
        cfg_file,
        environ={"DECKAGENT_CHAT_MODEL": "from-env"},
        overrides={"backend.api_base": "http://flag.test", "backend.api_key": None},
    )
    assert cfg.backend.chat_model == "from-env"      # env beats file
    assert cfg.backend.api_base == "http://flag.test"  # flag beats file
    assert cfg.retrieval.k_pages == 7                # file beats default


def test_config_rejects_bad_values(tmp_path):
    cfg_file = tmp_path / "cfg.toml"
    cfg_file.write_text("[retrieval]\ntau = -3\n")
    with pytest.raises(ConfigError, match="tau"):
        load_config(cfg_file)
    cfg_file.write_text("[retrieval]\nk_pages = 0\n")
    with pytest.raises(ConfigError, match="k values"):
        load_config(cfg_file)


def test_config_unknown_key(tmp_path):
    cfg_file = tmp_path / "cfg.toml"
    cfg_file.write_text("[retrieval]\nmystery = 1\n")
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(cfg_file)


# --- ingest -----------------------------------------------------------------------

@pytest.fixture
def fragmented_docdir(tmp_path):
    """Two pages of fragmented words whose merge counts come from the oracle."""
    elements = []
    for page in (1, 2):
        y = 20 * page
        # one 3-word line, fragments 2px apart
        elements += [
            text_el(f"p{page}a", page, (10, y, 40, y + 10), "alpha"),
            text_el(f"p{page}b", page, (42, y, 70, y + 10), "beta"),
            text_el(f"p{page}c", page, (72, y, 100, y + 10), "gamma"),
            # far-away loner
            text_el(f"p{page}z", page, (10, y + 100, 60, y + 110), "loner"),
        ]
    return write_docdir(tmp_path / "frag", "frag",
                        pages=[{"index": 1}, {"index": 2}], elements=elements)


def test_ingest_reports_oracle_counts(runner, tmp_path, fragmented_docdir):
    doc = load_document(fragmented_docdir)
    expected_after = sum(
        len(oracle_partition([e.bbox for e in page.elements], 15.0)) for page in doc.pages
    )
    total_before = sum(len(p.elements) for p in doc.pages)
    out = tmp_path / "merged"
    result = runner.invoke(main, ["ingest", "--input", str(fragmented_docdir), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert f"merged {total_before} -> {expected_after} elements" in result.output
    merged = load_document(out)
    assert sum(len(p.elements) for p in merged.pages) == expected_after
    assert merged.element("p1a+p1b+p1c").verbatim == "alpha beta gamma"


def test_ingest_missing_manifest(runner, tmp_path):
    empty = tmp_path / "nothing"
    empty.mkdir()
    result = runner.invoke(main, ["ingest", "--input", str(empty), "--out", str(tmp_path / "o")])
    assert result.exit_code == 2
    assert "missing manifest.json" in result.output


def test_ingest_tau_zero_identity(runner, tmp_path, fragmented_docdir):
    out = tmp_path / "merged0"
    result = runner.invoke(
        main, ["ingest", "--input", str(fragmented_docdir), "--out", str(out), "--tau", "0"]
    )
    assert result.exit_code == 0
    assert "merged 8 -> 8 elements" in result.output


# --- build ---------------------------------------------------------------------------

def test_build_and_resume(runner, tmp_path, cause_deck, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    kbdir = tmp_path / "kb"
    script = _script_file(tmp_path, cause_build_script())
    result = runner.invoke(main, ["build", "--doc", str(cause_deck), "--kb", str(kbdir),
                                  "--script", script])
    assert result.exit_code == 0, result.output
    assert "4 pages" in result.output
    page1 = (kbdir / "pages" / "0001.json").read_bytes()

    # resume must reuse page 1 byte-identical even with a script that would fail it
    records = [r for r in cause_build_script() if "slide 1 of 4" not in str(r.get("match"))]
    records.insert(2, {"match": "slide 1 of 4", "error": "must not be called"})
    result2 = runner.invoke(main, ["build", "--doc", str(cause_deck), "--kb", str(kbdir),
                                   "--script", _script_file(tmp_path, records, "s2.json"),
                                   "--resume"])
    assert result2.exit_code == 0, result2.output
    assert (kbdir / "pages" / "0001.json").read_bytes() == page1


def test_ingest_build_query_chain(runner, tmp_path, fragmented_docdir, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    docdir = tmp_path / "doc"
    result = runner.invoke(main, ["ingest", "--input", str(fragmented_docdir), "--out", str(docdir)])
    assert result.exit_code == 0, result.output

    build_records = [
        {"match": "Rewrite the overview", "response": _two_page_overview()},
        {"match": "compact deck-level overview", "response": _two_page_overview()},
        {"match": "slide 1 of 2", "response": "Summary: first page words alpha beta gamma.\nRelated slides: none"},
        {"match": "slide 2 of 2", "response": "Summary: second page repeats the words.\nRelated slides: 1"},
        {"match": "Describe the highlighted element",
         "response": "Inferred Importance: low\nSemantic Role: filler"},
    ]
    kbdir = tmp_path / "kb"
    result = runner.invoke(main, ["build", "--doc", str(docdir), "--kb", str(kbdir),
                                  "--script", _script_file(tmp_path, build_records, "b.json")])
    assert result.exit_code == 0, result.output

    query_records = [
        {"match": "Classify the question", "response": "global-understanding"},
        {"match": "short search phrases", "response": ""},
        {"match": "Deck overview:", "response": "ANSWER: a two page word list\nREASONING: title"},
    ]
    result = runner.invoke(main, ["query", "What is this deck about?", "--kb", str(kbdir),
                                  "--script", _script_file(tmp_path, query_records, "q.json"),
                                  "--json"])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["answer"] == "a two page word list"
    assert payload["mode"] == "direct-single-agent"


def _two_page_overview() -> str:
    return (
        "**Title**\nWord List\n\n**Objective**\nList words\n\n**Structure Overview**\n"
        "- **Slide 1**: words\n- **Slide 2**: more words\n\n**Key Insights**\n- words repeat\n\n"
        "**Audience**\nNobody\n\n**Tone**\nDry"
    )


def test_build_missing_docdir(runner, tmp_path):
    result = runner.invoke(main, ["build", "--doc", str(tmp_path / "nope"),
                                  "--kb", str(tmp_path / "kb"), "--script", "x"])
    assert result.exit_code == 2


def test_build_backend_failure_keeps_partial(runner, tmp_path, cause_deck):
    records = [
        {"match": "compact deck-level overview",
         "response": "**Title**\nT\n**Objective**\nO\n**Structure Overview**\n- Slide 1: a\n"
                     "**Key Insights**\n- k\n**Audience**\nA\n**Tone**\nT"},
        {"match": "slide 1 of 4", "response": "Summary: one\nRelated slides: none"},
        {"match": "slide 2 of 4", "error": "outage"},
    ]
    kbdir = tmp_path / "kb"
    result = runner.invoke(main, ["build", "--doc", str(cause_deck), "--kb", str(kbdir),
                                  "--script", _script_file(tmp_path, records)])
    assert result.exit_code == 3
    assert "partial results kept" in result.output
    assert (kbdir / "pages" / "0001.json").is_file()


# --- query ----------------------------------------------------------------------------

@pytest.fixture
def built_kb(runner, tmp_path, cause_deck, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    kbdir = tmp_path / "kb"
    script = _script_file(tmp_path, cause_build_script(), "build.json")
    result = runner.invoke(main, ["build", "--doc", str(cause_deck), "--kb", str(kbdir),
                                  "--script", script])
    assert result.exit_code == 0, result.output
    return kbdir


def test_query_fixture_answer(runner, tmp_path, built_kb):
    script = _script_file(tmp_path, cause_query_script(), "query.json")
    result = runner.invoke(main, [
        "query", CAUSE_QUESTION, "--kb", str(built_kb), "--script", script,
        "--k-pages", "1", "--k-elements", "1",
    ])
    assert result.exit_code == 0, result.output
    assert CAUSE_ANSWER in result.output
    assert "pages 4" in result.output
    assert "flowchart" in result.output


def test_query_json_output(runner, tmp_path, built_kb):
    script = _script_file(tmp_path, cause_query_script(), "query.json")
    result = runner.invoke(main, [
        "query", CAUSE_QUESTION, "--kb", str(built_kb), "--script", script,
        "--k-pages", "1", "--k-elements", "1", "--json",
    ])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["answer"] == CAUSE_ANSWER
    assert payload["mode"] == "synthesized"
    assert payload["provenance"] == {"pages": [4], "elements": ["flowchart"]}


def test_query_gt_pages(runner, tmp_path, built_kb):
    records = [
        {"match": "Classify the question", "response": "fact-direct"},
        {"match": "short search phrases", "response": ""},
        {"match": "Slide 3 notes", "response": "ANSWER: retail\nREASONING: given"},
        {"match": "Element", "response": "ANSWER: retail\nREASONING: e"},
    ]
    result = runner.invoke(main, [
        "query", "What is on page 3?", "--kb", str(built_kb),
        "--script", _script_file(tmp_path, records, "gt.json"), "--gt-pages", "3",
    ])
    assert result.exit_code == 0, result.output
    assert "retail" in result.output


def test_query_unknown_kbdir(runner, tmp_path):
    result = runner.invoke(main, ["query", "q", "--kb", str(tmp_path / "missing"),
                                  "--script", "unused"])
    assert result.exit_code == 2


def test_query_backend_outage_exit_3(runner, tmp_path, built_kb):
    records = [
        {"match": "Classify the question", "response": "global-understanding"},
        {"match": "short search phrases", "response": ""},
        {"match": "Deck overview:", "error": "outage"},
    ]
    result = runner.invoke(main, ["query", "anything", "--kb", str(built_kb),
                                  "--script", _script_file(tmp_path, records, "o.json")])
    assert result.exit_code == 3
    assert "trace" in result.output


# --- eval / rank-eval --------------------------------------------------------------------

def test_eval_end_to_end(runner, tmp_path, cause_deck, built_kb):
    docs_root = tmp_path / "docs"
    kb_root = tmp_path / "kbs"
    docs_root.mkdir()
    kb_root.mkdir()
    (docs_root / "deck-cause").symlink_to(cause_deck)
    (kb_root / "deck-cause").symlink_to(built_kb)
    dataset = tmp_path / "data.jsonl"
    dataset.write_text(json.dumps({
        "doc_id": "deck-cause", "question": CAUSE_QUESTION,
        "answer": "business under-performance", "gt_pages": [4],
    }) + "\n")
    report_path = tmp_path / "report.json"
    result = runner.invoke(main, [
        "eval", "--dataset", str(dataset), "--docs-root", str(docs_root),
        "--kb-root", str(kb_root), "--report", str(report_path),
        "--script", _script_file(tmp_path, cause_query_script(), "q.json"),
    ])
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text())
    assert report["summary"]["overall"] == 100.0
    assert report["summary"]["f1"] == 100.0
    assert report["summary"]["mrr"] == 1.0


def test_eval_gt_pages_mode_bypasses_retrieval(runner, tmp_path, cause_deck, built_kb):
    docs_root = tmp_path / "docs"
    kb_root = tmp_path / "kbs"
    docs_root.mkdir()
    kb_root.mkdir()
    (docs_root / "deck-cause").symlink_to(cause_deck)
    (kb_root / "deck-cause").symlink_to(built_kb)
    dataset = tmp_path / "data.jsonl"
    dataset.write_text(json.dumps({
        "doc_id": "deck-cause", "question": "What is on the given page?",
        "answer": "retail", "gt_pages": [3],
    }) + "\n")
    records = [
        {"match": "Classify the question", "response": "fact-direct"},
        {"match": "short search phrases", "response": ""},
        {"match": "Slide 3 notes", "response": "ANSWER: retail\nREASONING: given"},
        {"match": "Element", "response": "ANSWER: retail\nREASONING: e"},
    ]
    result = runner.invoke(main, [
        "eval", "--dataset", str(dataset), "--docs-root", str(docs_root),
        "--kb-root", str(kb_root), "--report", str(tmp_path / "r.json"),
        "--gt-pages-mode", "--script", _script_file(tmp_path, records, "gt.json"),
    ])
    assert result.exit_code == 0, result.output
    from deckagent.orchestrator import query_hash

    trace = json.loads(
        (built_kb / "traces" / f"{query_hash('What is on the given page?')}.json").read_text()
    )
    assert trace["retrieval"]["bypassed"] is True
    assert trace["retrieval"]["pages"][0]["source"] == "ground-truth"


def test_eval_empty_dataset(runner, tmp_path):
    dataset = tmp_path / "empty.jsonl"
    dataset.write_text("")
    result = runner.invoke(main, [
        "eval", "--dataset", str(dataset), "--docs-root", str(tmp_path),
        "--kb-root", str(tmp_path), "--report", str(tmp_path / "r.json"),
    ])
    assert result.exit_code == 2
    assert "empty" in result.output


def test_rank_eval_knowledge_beats_ocr(runner, tmp_path, cause_deck, built_kb):
    docs_root = tmp_path / "docs"
    kb_root = tmp_path / "kbs"
    docs_root.mkdir()
    kb_root.mkdir()
    (docs_root / "deck-cause").symlink_to(cause_deck)
    (kb_root / "deck-cause").symlink_to(built_kb)
    dataset = tmp_path / "data.jsonl"
    # "under-performance" appears only in the built page knowledge, not the OCR text
    dataset.write_text(json.dumps({
        "doc_id": "deck-cause", "question": "Which slide explains the business under-performance?",
        "answer": "slide 4", "gt_pages": [4],
    }) + "\n")
    report_path = tmp_path / "rank.json"
    result = runner.invoke(main, [
        "rank-eval", "--dataset", str(dataset), "--docs-root", str(docs_root),
        "--kb-root", str(kb_root), "--report", str(report_path),
    ])
    assert result.exit_code == 0, result.output
    grid = json.loads(report_path.read_text())["grid"]
    assert grid["bm25/knowledge"]["mrr"] > grid["bm25/ocr"]["mrr"]
