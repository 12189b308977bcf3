"""Operator CLI: ingest documents, build knowledge, answer queries, evaluate.

Exit codes: 0 success, 2 usage/input error, 3 backend/runtime error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backend import BackendError
from .config import Config, ConfigError, load_config, make_backend
from .document import DocumentError, load_document, save_document
from .evaluation import (
    EvalRecord,
    SystemResult,
    first_relevant_rank,
    hit_at_k,
    load_dataset,
    mrr,
    ndcg_at_k,
    recall_at_k,
    render_table,
    run_eval,
    write_report,
)
from .knowledge import KnowledgeBuildError, build_knowledge_base, load_kb
from .merge import merge_document
from .orchestrator import OrchestratorError, QueryConfig, answer_query, query_hash
from .retrieval import QueryPlan, QueryCase, index_pages, retrieve_pages

EXIT_INPUT = 2
EXIT_RUNTIME = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_cfg(ctx) -> Config:
    try:
        return load_config(ctx.obj.get("config_path"), overrides=ctx.obj.get("overrides", {}))
    except ConfigError as exc:
        _fail(EXIT_INPUT, str(exc))


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="TOML config file.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for any sampling.")
@click.pass_context
def main(ctx, config_path, seed):
    """Hierarchical agentic question answering over slide decks."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["overrides"] = {}
    ctx.obj["seed"] = seed


def _backend_options(fn):
    fn = click.option("--script", default=None, help="Scripted-backend response file.")(fn)
    fn = click.option("--api-base", default=None, help="OpenAI-compatible API base URL.")(fn)
    fn = click.option("--api-key", default=None)(fn)
    fn = click.option("--chat-model", default=None)(fn)
    fn = click.option("--embed-model", default=None)(fn)
    return fn


def _cfg_with_backend(ctx, script, api_base, api_key, chat_model, embed_model, **retrieval):
    overrides = {
        "backend.script": script,
        "backend.api_base": api_base,
        "backend.api_key": api_key,
        "backend.chat_model": chat_model,
        "backend.embed_model": embed_model,
    }
    overrides.update({f"retrieval.{k}": v for k, v in retrieval.items()})
    try:
        return load_config(ctx.obj.get("config_path"), overrides=overrides)
    except ConfigError as exc:
        _fail(EXIT_INPUT, str(exc))


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--tau", type=float, default=None, help="Merge distance threshold in pixels.")
@click.pass_context
def ingest(ctx, input_dir, out_dir, tau):
    """Validate a raw extracted document and merge fragmented text boxes."""
    cfg = _load_cfg(ctx)
    tau = cfg.retrieval.tau if tau is None else tau
    if tau < 0:
        _fail(EXIT_INPUT, "tau must be >= 0")
    try:
        doc = load_document(input_dir)
    except DocumentError as exc:
        _fail(EXIT_INPUT, str(exc))
    merged, stats = merge_document(doc, tau)
    save_document(merged, out_dir)
    click.echo(
        f"merged {stats['elements_before']} -> {stats['elements_after']} elements "
        f"(tau={tau:g}) into {out_dir}"
    )


@main.command()
@click.option("--doc", "docdir", required=True, type=click.Path())
@click.option("--kb", "kbdir", required=True, type=click.Path())
@click.option("--resume", is_flag=True, help="Reuse already-persisted build steps.")
@_backend_options
@click.pass_context
def build(ctx, docdir, kbdir, resume, script, api_base, api_key, chat_model, embed_model):
    """Construct the knowledge base for an ingested document."""
    cfg = _cfg_with_backend(ctx, script, api_base, api_key, chat_model, embed_model)
    try:
        doc = load_document(docdir)
    except DocumentError as exc:
        _fail(EXIT_INPUT, str(exc))
    try:
        backend = make_backend(cfg)
    except ConfigError as exc:
        _fail(EXIT_INPUT, str(exc))
    try:
        kb = build_knowledge_base(doc, backend, kbdir, docdir=docdir, resume=resume)
    except (BackendError, KnowledgeBuildError) as exc:
        _fail(EXIT_RUNTIME, f"build failed (partial results kept in {kbdir}): {exc}")
    failed = kb.build_metadata.get("failed_elements") or {}
    click.echo(
        f"built knowledge base in {kbdir}: {len(kb.pages)} pages, "
        f"{len(kb.elements)} elements"
        + (f", {len(failed)} element failures" if failed else "")
    )


def _load_doc_and_kb(kbdir, docdir):
    try:
        kb = load_kb(kbdir)
    except (FileNotFoundError, KnowledgeBuildError) as exc:
        _fail(EXIT_INPUT, str(exc))
    docdir = docdir or kb.build_metadata.get("docdir")
    if not docdir:
        _fail(EXIT_INPUT, "knowledge base does not record its document; pass --doc")
    try:
        doc = load_document(docdir)
    except DocumentError as exc:
        _fail(EXIT_INPUT, str(exc))
    if doc.doc_id != kb.doc_id:
        _fail(EXIT_INPUT, f"kb is for {kb.doc_id!r} but document is {doc.doc_id!r}")
    return doc, kb


def _query_config(cfg: Config) -> QueryConfig:
    return QueryConfig(
        k_pages=cfg.retrieval.k_pages,
        k_elements=cfg.retrieval.k_elements,
        retriever=cfg.retrieval.retriever,
        index_mode=cfg.retrieval.index_mode,
        subquery_cap=cfg.retrieval.subquery_cap,
    )


@main.command()
@click.argument("question")
@click.option("--kb", "kbdir", required=True, type=click.Path())
@click.option("--doc", "docdir", type=click.Path(), default=None, help="Override the recorded docdir.")
@click.option("--gt-pages", default=None, help="Comma-separated page indices; bypasses retrieval.")
@click.option("--json", "as_json", is_flag=True, help="Emit the answer as JSON.")
@click.option("--trace", "show_trace", is_flag=True, help="Dump the full trace.")
@click.option("--k-pages", type=int, default=None)
@click.option("--k-elements", type=int, default=None)
@click.option("--retriever", type=click.Choice(["bm25", "dense"]), default=None)
@click.option("--index-mode", type=click.Choice(["knowledge", "ocr"]), default=None)
@_backend_options
@click.pass_context
def query(ctx, question, kbdir, docdir, gt_pages, as_json, show_trace, k_pages, k_elements,
          retriever, index_mode, script, api_base, api_key, chat_model, embed_model):
    """Answer one question against a built knowledge base."""
    cfg = _cfg_with_backend(
        ctx, script, api_base, api_key, chat_model, embed_model,
        k_pages=k_pages, k_elements=k_elements, retriever=retriever, index_mode=index_mode,
    )
    doc, kb = _load_doc_and_kb(kbdir, docdir)
    try:
        backend = make_backend(cfg)
    except ConfigError as exc:
        _fail(EXIT_INPUT, str(exc))
    gt = None
    if gt_pages:
        try:
            gt = [int(p) for p in gt_pages.split(",")]
        except ValueError:
            _fail(EXIT_INPUT, f"bad --gt-pages value: {gt_pages!r}")
    try:
        final = answer_query(
            doc, kb, question, backend,
            kbdir=kbdir, config=_query_config(cfg), gt_pages=gt,
        )
    except ValueError as exc:
        _fail(EXIT_INPUT, str(exc))
    except OrchestratorError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    except BackendError as exc:
        _fail(EXIT_RUNTIME, f"backend failure: {exc}")

    if as_json:
        click.echo(json.dumps(final.to_json(), sort_keys=True))
    else:
        click.echo(final.answer)
        prov = []
        if final.pages:
            prov.append("pages " + ", ".join(str(p) for p in final.pages))
        if final.elements:
            prov.append("elements " + ", ".join(final.elements))
        click.echo(f"[{final.mode}" + (f"; {'; '.join(prov)}" if prov else "") + "]")
    if show_trace:
        trace_path = Path(kbdir) / "traces" / f"{query_hash(question)}.json"
        click.echo(trace_path.read_text(encoding="utf-8"))


def _eval_system(cfg, backend, docs_root, kb_root, gt_mode):
    doc_cache: dict = {}

    def system(rec: EvalRecord) -> SystemResult:
        if rec.doc_id not in doc_cache:
            kbdir = Path(kb_root) / rec.doc_id
            doc = load_document(Path(docs_root) / rec.doc_id)
            kb = load_kb(kbdir)
            doc_cache[rec.doc_id] = (doc, kb, kbdir)
        doc, kb, kbdir = doc_cache[rec.doc_id]
        gt = sorted(rec.gold_pages) if gt_mode and rec.gold_pages else None
        final = answer_query(
            doc, kb, rec.question, backend,
            kbdir=kbdir, config=_query_config(cfg), gt_pages=gt,
        )
        trace = json.loads(
            (Path(kbdir) / "traces" / f"{query_hash(rec.question)}.json").read_text(encoding="utf-8")
        )
        ranked = [row["page_index"] for row in trace["retrieval"]["pages"]]
        return SystemResult(answer=final.answer, ranked_pages=ranked if not gt_mode else None)

    return system


@main.command("eval")
@click.option("--dataset", required=True, type=click.Path())
@click.option("--docs-root", required=True, type=click.Path())
@click.option("--kb-root", required=True, type=click.Path())
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--gt-pages-mode", is_flag=True, help="Hand gold pages to the agents, bypassing retrieval.")
@_backend_options
@click.pass_context
def eval_cmd(ctx, dataset, docs_root, kb_root, report_path, gt_pages_mode,
             script, api_base, api_key, chat_model, embed_model):
    """Run end-to-end QA over a JSONL dataset and write a scored report."""
    cfg = _cfg_with_backend(ctx, script, api_base, api_key, chat_model, embed_model)
    try:
        records = load_dataset(dataset)
    except (OSError, ValueError) as exc:
        _fail(EXIT_INPUT, str(exc))
    if not records:
        _fail(EXIT_INPUT, f"dataset is empty: {dataset}")
    try:
        backend = make_backend(cfg)
    except ConfigError as exc:
        _fail(EXIT_INPUT, str(exc))
    report = run_eval(
        records,
        _eval_system(cfg, backend, docs_root, kb_root, gt_pages_mode),
        report_path,
    )
    click.echo(render_table(report))


@main.command("rank-eval")
@click.option("--dataset", required=True, type=click.Path())
@click.option("--docs-root", required=True, type=click.Path())
@click.option("--kb-root", required=True, type=click.Path())
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--k", type=int, default=3, show_default=True)
@click.option("--retrievers", default="bm25", show_default=True, help="Comma-separated retriever kinds.")
@click.option("--modes", default="ocr,knowledge", show_default=True, help="Comma-separated index modes.")
@_backend_options
@click.pass_context
def rank_eval(ctx, dataset, docs_root, kb_root, report_path, k, retrievers, modes,
              script, api_base, api_key, chat_model, embed_model):
    """Compare page-retrieval quality across retriever kinds and index modes."""
    cfg = _cfg_with_backend(ctx, script, api_base, api_key, chat_model, embed_model)
    try:
        records = load_dataset(dataset)
    except (OSError, ValueError) as exc:
        _fail(EXIT_INPUT, str(exc))
    records = [r for r in records if r.gold_pages]
    if not records:
        _fail(EXIT_INPUT, "dataset has no rows with gt_pages")
    backend = None
    retriever_list = [r.strip() for r in retrievers.split(",") if r.strip()]
    mode_list = [m.strip() for m in modes.split(",") if m.strip()]
    if "dense" in retriever_list:
        try:
            backend = make_backend(cfg)
        except ConfigError as exc:
            _fail(EXIT_INPUT, str(exc))

    loaded: dict = {}
    grid: dict = {}
    for retriever in retriever_list:
        for mode in mode_list:
            ranks = []
            per_query = []
            for rec in records:
                if rec.doc_id not in loaded:
                    loaded[rec.doc_id] = (
                        load_document(Path(docs_root) / rec.doc_id),
                        load_kb(Path(kb_root) / rec.doc_id),
                    )
                doc, kb = loaded[rec.doc_id]
                index = index_pages(
                    kb, doc, mode=mode, retriever=retriever, backend=backend,
                    k1=cfg.retrieval.bm25_k1, b=cfg.retrieval.bm25_b,
                )
                plan = QueryPlan(rec.question, QueryCase.UNCERTAIN, ())
                ranked = retrieve_pages(plan, index, k, backend=backend)
                keys = [r.page_index for r in ranked]
                relevant = set(rec.gold_pages)
                ranks.append(first_relevant_rank(keys, relevant))
                per_query.append(
                    {
                        "hit": hit_at_k(keys, relevant, k),
                        "recall": recall_at_k(keys, relevant, k),
                        "ndcg": ndcg_at_k(keys, relevant, k),
                    }
                )
            n = len(per_query)
            grid[f"{retriever}/{mode}"] = {
                "mrr": round(mrr(ranks), 4),
                f"hit@{k}": round(sum(p["hit"] for p in per_query) / n, 4),
                f"recall@{k}": round(sum(p["recall"] for p in per_query) / n, 4),
                f"ndcg@{k}": round(sum(p["ndcg"] for p in per_query) / n, 4),
            }
    report = {"summary": {"records": len(records), "k": k}, "grid": grid}
    write_report(report, report_path)
    click.echo(json.dumps(grid, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
