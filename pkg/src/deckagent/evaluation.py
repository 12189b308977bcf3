"""Scoring for QA predictions and retrieval rankings.

Numeric questions are scored 0/1 after normalizing both sides to one format
(suffixes, word numbers, percentages, separators, currency); everything else
gets token-multiset F1 with stopwords and punctuation removed. Rankings are
scored with MRR, Hit@k, Recall@k, and nDCG@k over binary relevance.
"""

from __future__ import annotations

import json
import math
import os
import re
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Iterable, Sequence

STOPWORDS = frozenset(
    """
    a an and are as at be been being but by did do does for from had has have
    he her his i if in into is it its my of on or our she so than that the
    their them then these they this those to was we were what which who will
    with your
    """.split()
)

_UNITS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11,
    "twelve": 12, "thirteen": 13, "fourteen": 14, "fifteen": 15,
    "sixteen": 16, "seventeen": 17, "eighteen": 18, "nineteen": 19,
    "twenty": 20,
}
_TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50,
    "sixty": 60, "seventy": 70, "eighty": 80, "ninety": 90,
}
_WORD_MULTIPLIERS = {"thousand": 1000, "million": 1000000, "billion": 1000000000}
_SUFFIX_MULTIPLIERS = {"k": 1000, "m": 1000000, "b": 1000000000}

# one digit-number atom: grouped thousands (groups of exactly three, not
# followed by a further digit) or plain, optional decimals, optional attached
# k/m/b suffix, optional % (also spaced)
_ATOM_RE = re.compile(
    r"(?P<currency>[$€£¥])"
    r"|(?P<number>\d{1,3}(?:,\d{3})+(?!\d)(?:\.\d+)?|\d+(?:\.\d+)?)(?P<suffix>[kKmMbB]\b)?"
    r"|(?P<word>[A-Za-z]+)"
    r"|(?P<pct>%)"
    r"|(?P<other>\S)"
)


@dataclass(frozen=True, slots=True)
class CanonicalNumber:
    value: Decimal
    origin_form: str

    @property
    def canonical_text(self) -> str:
        text = format(self.value, "f")
        if "." in text:
            text = text.rstrip("0").rstrip(".")
        return text


def _match_word_number(atoms: list, i: int) -> tuple[Decimal, int] | None:
    """Parse a word number at atom i; returns (value, next index) or None."""
    word = atoms[i][0].lower() if atoms[i][1] == "word" else None
    if word is None:
        return None
    if word in _TENS:
        value = Decimal(_TENS[word])
        j = i + 1
        if j < len(atoms) and atoms[j][1] == "other" and atoms[j][0] == "-":
            j += 1
        if j < len(atoms) and atoms[j][1] == "word":
            unit = atoms[j][0].lower()
            if unit in _UNITS and 1 <= _UNITS[unit] <= 9:
                return value + _UNITS[unit], j + 1
        return value, i + 1
    if word in _UNITS:
        return Decimal(_UNITS[word]), i + 1
    return None


def _classify_atom(m: re.Match) -> str | None:
    if m.group("currency") is not None:
        return None
    if m.group("number") is not None:
        return "number"
    if m.group("word") is not None:
        return "word"
    if m.group("pct") is not None:
        return "pct"
    return "other"


def extract_numbers(text: str) -> list[CanonicalNumber]:
    """Every number found in text, normalized, in order of appearance."""
    atoms = []
    for m in _ATOM_RE.finditer(text):
        kind = _classify_atom(m)
        if kind is not None:
            atoms.append((m.group(0), kind, m))
    out: list[CanonicalNumber] = []
    i = 0
    while i < len(atoms):
        raw, kind, m = atoms[i]
        value: Decimal | None = None
        start, end = m.start(), m.end()
        j = i + 1
        if kind == "number":
            value = Decimal(m.group("number").replace(",", ""))
            if m.group("suffix"):
                value *= _SUFFIX_MULTIPLIERS[m.group("suffix").lower()]
        elif kind == "word":
            parsed = _match_word_number(atoms, i)
            if parsed is not None:
                value, j = parsed
                end = atoms[j - 1][2].end()
        if value is None:
            i += 1
            continue
        # optional word multiplier, then optional percent
        if j < len(atoms) and atoms[j][1] == "word" and atoms[j][0].lower() in _WORD_MULTIPLIERS:
            value *= _WORD_MULTIPLIERS[atoms[j][0].lower()]
            end = atoms[j][2].end()
            j += 1
        if j < len(atoms) and (
            atoms[j][1] == "pct" or (atoms[j][1] == "word" and atoms[j][0].lower() == "percent")
        ):
            value /= 100
            end = atoms[j][2].end()
            j += 1
        out.append(CanonicalNumber(value=value, origin_form=text[start:end]))
        i = j
    return out


def normalize_number(text: str) -> CanonicalNumber | None:
    """First number found in text, or None when there is none."""
    numbers = extract_numbers(text)
    return numbers[0] if numbers else None


def numeric_match(pred: str, gold: str, rel_tol: float = 0.0) -> bool:
    """True iff any number in pred equals the gold value (exact by default)."""
    gold_num = normalize_number(gold)
    if gold_num is None:
        raise ValueError(f"gold answer has no number: {gold!r}")
    for n in extract_numbers(pred):
        if rel_tol == 0.0:
            if n.value == gold_num.value:
                return True
        elif abs(n.value - gold_num.value) <= Decimal(str(rel_tol)) * abs(gold_num.value):
            return True
    return False


def _answer_tokens(s: str) -> list[str]:
    # keep intra-word hyphens, drop all other punctuation
    cleaned = re.sub(r"[^\w\s-]", " ", s.lower())
    tokens = []
    for tok in cleaned.split():
        tok = tok.strip("-_")
        if tok and tok not in STOPWORDS:
            tokens.append(tok)
    return tokens


def token_f1(pred: str, gold: str) -> float:
    """F1 over preprocessed token multisets; two empty multisets count as 1.0."""
    p = Counter(_answer_tokens(pred))
    g = Counter(_answer_tokens(gold))
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((p & g).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(p.values())
    recall = overlap / sum(g.values())
    return 2 * precision * recall / (precision + recall)


def _key(item):
    if hasattr(item, "page_index"):
        return item.page_index
    if hasattr(item, "element_id"):
        return item.element_id
    return item


def first_relevant_rank(ranking: Sequence, relevant: set) -> int | None:
    for pos, item in enumerate(ranking, 1):
        if _key(item) in relevant:
            return pos
    return None


def mrr(ranks: Iterable[int | None]) -> float:
    """Mean reciprocal of the first relevant position; None contributes 0."""
    ranks = list(ranks)
    if not ranks:
        raise ValueError("mrr needs at least one query")
    total = 0.0
    for r in ranks:
        if r is None:
            continue
        if r < 1:
            raise ValueError(f"ranks are 1-based, got {r}")
        total += 1.0 / r
    return total / len(ranks)


def hit_at_k(ranking: Sequence, relevant: set, k: int) -> float:
    """1.0 when any relevant item appears in the top k (0.0 on empty relevant)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        return 0.0
    return 1.0 if any(_key(item) in relevant for item in ranking[:k]) else 0.0


def recall_at_k(ranking: Sequence, relevant: set, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise ValueError("recall needs a non-empty relevant set")
    found = {_key(item) for item in ranking[:k]} & set(relevant)
    return len(found) / len(relevant)


def ndcg_at_k(ranking: Sequence, relevant: set, k: int) -> float:
    """Binary-relevance nDCG with gain 1/log2(pos + 1)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise ValueError("ndcg needs a non-empty relevant set")
    dcg = sum(
        1.0 / math.log2(pos + 1)
        for pos, item in enumerate(ranking[:k], 1)
        if _key(item) in relevant
    )
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(len(relevant), k) + 1))
    return dcg / ideal


@dataclass(slots=True)
class EvalRecord:
    doc_id: str
    question: str
    gold_answer: str
    gold_pages: frozenset[int] | None = None
    # populated by run_eval
    prediction: str = ""
    scores: dict = field(default_factory=dict)


@dataclass(slots=True)
class SystemResult:
    answer: str
    ranked_pages: list[int] | None = None


def load_dataset(path: str | Path) -> list[EvalRecord]:
    """JSONL rows: {doc_id, question, answer, gt_pages?}."""
    records: list[EvalRecord] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            records.append(
                EvalRecord(
                    doc_id=row["doc_id"],
                    question=row["question"],
                    gold_answer=str(row["answer"]),
                    gold_pages=frozenset(int(p) for p in row["gt_pages"]) if row.get("gt_pages") else None,
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad dataset row ({exc})") from exc
    return records


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def run_eval(
    records: list[EvalRecord],
    system: Callable[[EvalRecord], SystemResult],
    report_path: str | Path | None = None,
    *,
    ks: tuple[int, ...] = (1, 3),
) -> dict:
    """Score each record, aggregate, and (optionally) write the report.

    Per-record failures score 0 and are logged in the row; the run continues.
    """
    rows: list[dict] = []
    for rec in records:
        route = "numeric" if normalize_number(rec.gold_answer) is not None else "f1"
        row = {
            "doc_id": rec.doc_id,
            "question": rec.question,
            "gold_answer": rec.gold_answer,
            "route": route,
            "prediction": None,
            "score": 0.0,
            "error": None,
        }
        try:
            result = system(rec)
            row["prediction"] = result.answer
            if route == "numeric":
                row["score"] = 1.0 if numeric_match(result.answer, rec.gold_answer) else 0.0
            else:
                row["score"] = token_f1(result.answer, rec.gold_answer)
            if rec.gold_pages and result.ranked_pages is not None:
                ranking = result.ranked_pages
                relevant = set(rec.gold_pages)
                row["rank_first_relevant"] = first_relevant_rank(ranking, relevant)
                row["ranking"] = {
                    f"hit@{k}": hit_at_k(ranking, relevant, k) for k in ks
                } | {
                    f"recall@{k}": recall_at_k(ranking, relevant, k) for k in ks
                } | {
                    f"ndcg@{k}": ndcg_at_k(ranking, relevant, k) for k in ks
                }
        except Exception as exc:  # per-record isolation
            row["error"] = f"{type(exc).__name__}: {exc}"
        rec.prediction = row["prediction"] or ""
        rec.scores = {"score": row["score"], "route": route} | row.get("ranking", {})
        rows.append(row)

    numeric_scores = [r["score"] for r in rows if r["route"] == "numeric"]
    f1_scores = [r["score"] for r in rows if r["route"] == "f1"]
    all_scores = [r["score"] for r in rows]
    summary = {
        "records": len(rows),
        "overall": round(100 * _mean(all_scores), 4) if all_scores else None,
        "num": round(100 * _mean(numeric_scores), 4) if numeric_scores else None,
        "f1": round(100 * _mean(f1_scores), 4) if f1_scores else None,
        "failures": sum(1 for r in rows if r["error"]),
    }
    ranked_rows = [r for r in rows if "rank_first_relevant" in r]
    if ranked_rows:
        summary["mrr"] = round(mrr([r["rank_first_relevant"] for r in ranked_rows]), 4)
        for k in ks:
            for metric in ("hit", "recall", "ndcg"):
                name = f"{metric}@{k}"
                summary[name] = round(_mean([r["ranking"][name] for r in ranked_rows]), 4)

    report = {"summary": summary, "records": rows}
    if report_path is not None:
        write_report(report, report_path)
    return report


def render_table(report: dict) -> str:
    """Small fixed-width summary table for terminals."""
    summary = report["summary"]
    keys = [k for k in summary if summary[k] is not None]
    width = max(len(k) for k in keys)
    lines = ["eval summary", "-" * (width + 12)]
    for k in keys:
        lines.append(f"{k:<{width}}  {summary[k]}")
    return "\n".join(lines)


def write_report(report: dict, path: str | Path) -> None:
    """Atomic write: JSON report plus a .txt table next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    path.with_suffix(path.suffix + ".txt").write_text(render_table(report) + "\n", encoding="utf-8")
