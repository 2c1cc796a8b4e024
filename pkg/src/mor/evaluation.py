"""Run scoring against qrels: NDCG@K, recall@K, win-rate matrices, reports.

Gains are exponential (2^grade - 1) with a log2 rank discount, the common
trec_eval convention. Run files use the TREC format:
"query_id Q0 doc_id rank score run_tag".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Qrels
from .errors import ContractError, FormatError, ParseError


@dataclass(frozen=True)
class EvalReport:
    per_query: Mapping[str, Mapping[str, float]]
    aggregates: Mapping[str, float]
    metadata: dict = field(default_factory=dict)


def _dcg(gains: Iterable[int], k: int) -> float:
    return sum(
        (2.0 ** g - 1.0) / math.log2(rank + 1)
        for rank, g in enumerate(gains, 1)
        if rank <= k
    )


def ndcg_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    """NDCG of a ranking under graded judgments, 0 when nothing is relevant."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if len(set(ranking)) != len(ranking):
        raise ContractError("duplicate doc in ranking")
    ideal = sorted(grades.values(), reverse=True)
    idcg = _dcg(ideal, k)
    if idcg == 0.0:
        return 0.0
    dcg = _dcg((grades.get(d, 0) for d in ranking[:k]), k)
    return dcg / idcg


def recall_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    """Fraction of relevant docs appearing in the top k."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if len(set(ranking)) != len(ranking):
        raise ContractError("duplicate doc in ranking")
    relevant = {d for d, g in grades.items() if g > 0}
    if not relevant:
        return 0.0
    hits = sum(1 for d in ranking[:k] if d in relevant)
    return hits / len(relevant)


_METRIC_FUNCS = {"ndcg": ndcg_at_k, "recall": recall_at_k}


def parse_metric(spec: str) -> tuple[str, int]:
    """Split "ndcg@20" into ("ndcg", 20)."""
    try:
        name, k_str = spec.split("@")
        k = int(k_str)
    except ValueError:
        raise ContractError(f"bad metric spec {spec!r}, expected name@k") from None
    if name not in _METRIC_FUNCS or k < 1:
        raise ContractError(f"unsupported metric {spec!r}")
    return name, k


def win_rate_matrix(
    rankings: Mapping[str, Mapping[str, Sequence[str]]],
    qrels: Qrels,
    k: int = 20,
) -> tuple[list[str], np.ndarray]:
    """Pairwise win rates: (A, B) = fraction of queries A hits gold in its
    top-k while B misses. Micro-averaged over the shared query set."""
    names = list(rankings)
    if not names:
        raise ContractError("no rankings supplied")
    query_ids = sorted(set.intersection(*(set(r) for r in rankings.values())))
    hits = {
        name: {
            qid: bool(qrels.gold_docs(qid) & set(rankings[name][qid][:k]))
            for qid in query_ids
        }
        for name in names
    }
    matrix = np.zeros((len(names), len(names)))
    if not query_ids:
        return names, matrix
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            if i == j:
                continue
            wins = sum(1 for qid in query_ids if hits[a][qid] and not hits[b][qid])
            matrix[i, j] = wins / len(query_ids)
    return names, matrix


# --- TREC run files ----------------------------------------------------------


def write_run(
    path: str | Path,
    rankings: Mapping[str, Sequence[tuple[str, float]]],
    tag: str,
) -> None:
    """Write rankings as a TREC run, queries in ascending id order."""
    with open(path, "w", encoding="utf-8") as fh:
        for query_id in sorted(rankings):
            for rank, (doc_id, score) in enumerate(rankings[query_id], 1):
                fh.write(f"{query_id} Q0 {doc_id} {rank} {score:.6f} {tag}\n")


def load_run(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    """Parse a TREC run file back into per-query rankings (rank order kept)."""
    per_query: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 columns, got {len(cols)}")
            query_id, _, doc_id, rank_str, score_str, _ = cols
            try:
                rank, score = int(rank_str), float(score_str)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad rank or score") from exc
            per_query.setdefault(query_id, []).append((rank, doc_id, score))
    return {
        qid: [(doc_id, score) for _, doc_id, score in sorted(rows)]
        for qid, rows in per_query.items()
    }


def evaluate_run(
    run: str | Path | Mapping[str, Sequence[tuple[str, float]]],
    qrels: Qrels,
    metrics: Sequence[str] = ("ndcg@5", "ndcg@20"),
    run_tag: str = "",
) -> EvalReport:
    """Score a run against qrels, per query and aggregated.

    Queries unknown to the qrels are skipped with a note in the metadata;
    queries judged but with no relevant doc score 0 and are excluded from
    the aggregates.
    """
    if isinstance(run, (str, Path)):
        run = load_run(run)
    parsed = [parse_metric(m) for m in metrics]

    per_query: dict[str, dict[str, float]] = {}
    skipped_unknown: list[str] = []
    no_relevant: list[str] = []
    known = qrels.query_ids
    for query_id in sorted(run):
        if query_id not in known:
            skipped_unknown.append(query_id)
            continue
        grades = qrels.for_query(query_id)
        ranking = [doc_id for doc_id, _ in run[query_id]]
        values = {
            f"{name}@{k}": _METRIC_FUNCS[name](ranking, grades, k)
            for name, k in parsed
        }
        per_query[query_id] = values
        if not any(g > 0 for g in grades.values()):
            no_relevant.append(query_id)

    included = [q for q in per_query if q not in no_relevant]
    aggregates = {
        f"{name}@{k}": (
            sum(per_query[q][f"{name}@{k}"] for q in included) / len(included)
            if included
            else 0.0
        )
        for name, k in parsed
    }
    metadata = {
        "run_tag": run_tag,
        "num_queries": len(per_query),
        "num_scored": len(included),
        "skipped_unknown": skipped_unknown,
        "no_relevant": no_relevant,
    }
    return EvalReport(per_query, aggregates, metadata)


def write_report_tsv(report: EvalReport, path: str | Path) -> None:
    """Per-query metrics plus aggregate rows, tab-separated."""
    metrics = sorted(report.aggregates)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query_id\t" + "\t".join(metrics) + "\n")
        for query_id in sorted(report.per_query):
            row = "\t".join(f"{report.per_query[query_id][m]:.6f}" for m in metrics)
            fh.write(f"{query_id}\t{row}\n")
        agg = "\t".join(f"{report.aggregates[m]:.6f}" for m in metrics)
        fh.write(f"__aggregate__\t{agg}\n")


def format_comparison(reports: Mapping[str, EvalReport]) -> str:
    """Pretty text table of aggregate metrics across runs."""
    metrics = sorted({m for r in reports.values() for m in r.aggregates})
    tag_width = max([len("run")] + [len(tag) for tag in reports])
    header = "run".ljust(tag_width) + "".join(f"  {m:>10}" for m in metrics)
    lines = [header, "-" * len(header)]
    for tag, report in reports.items():
        cells = "".join(f"  {report.aggregates.get(m, float('nan')):>10.4f}" for m in metrics)
        lines.append(tag.ljust(tag_width) + cells)
    return "\n".join(lines)
