"""Weight allocation and score fusion across a pool of retrievers.

Pool members are keyed by label "name/granularity". Fusing computes an
adjusted score per document as the weight-scaled sum of the members'
normalized scores, then re-ranks with a global deterministic tie-break
(score descending, doc id ascending).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import Corpus, Qrels
from .embeddings import ScoreVector
from .errors import ContractError
from .evaluation import ndcg_at_k
from .signals import SignalBundle

GRANULARITIES = ("q-d", "q-p", "sq-d", "sq-p")

DEFAULT_COEFFICIENTS = (0.1, 0.3, 0.6)


@dataclass(frozen=True)
class WeightAllocation:
    """Per-query weights over pool members."""

    query_id: str
    weights: Mapping[str, float]
    mode: str
    coefficients: tuple[float, float, float] | None = None

    @property
    def degenerate(self) -> bool:
        """True when no member carries a strictly positive weight."""
        return not any(w > 0.0 for w in self.weights.values())


@dataclass(frozen=True)
class FusedRun:
    """Ranked documents for one query with a weight/score audit trail."""

    query_id: str
    ranked: tuple[tuple[str, float, int], ...]  # (doc_id, score, 1-based rank)
    audit: dict = field(default_factory=dict)

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(d for d, _, _ in self.ranked)


def _check_signals(signals: Mapping[str, SignalBundle]) -> None:
    if not signals:
        raise ContractError("no signals supplied")
    for label, bundle in signals.items():
        if bundle is None:
            raise ContractError(f"missing signal bundle for pool member {label!r}")


def weight_pre(query_id: str, signals: Mapping[str, SignalBundle]) -> WeightAllocation:
    """Weights equal to the pre-retrieval familiarity signal, verbatim."""
    _check_signals(signals)
    weights = {label: bundle.v_pre for label, bundle in signals.items()}
    return WeightAllocation(query_id, weights, mode="pre")


def weight_post(
    query_id: str,
    signals: Mapping[str, SignalBundle],
    a: float = DEFAULT_COEFFICIENTS[0],
    b: float = DEFAULT_COEFFICIENTS[1],
    c: float = DEFAULT_COEFFICIENTS[2],
) -> WeightAllocation:
    """Affine combination of the three signals, floored at 0."""
    if a < 0 or b < 0 or c < 0:
        raise ContractError(f"coefficients must be non-negative, got ({a}, {b}, {c})")
    _check_signals(signals)
    weights = {
        label: max(0.0, a * s.v_pre + b * s.i_moran + c * s.v_post)
        for label, s in signals.items()
    }
    return WeightAllocation(query_id, weights, mode="post", coefficients=(a, b, c))


def baseline_allocation(
    query_id: str, weights: Mapping[str, float], name: str
) -> WeightAllocation:
    """Wrap externally computed baseline weights (floored at 0)."""
    floored = {label: max(0.0, w) for label, w in weights.items()}
    return WeightAllocation(query_id, floored, mode=f"baseline:{name}")


# --- granularity aggregation -------------------------------------------------


def max_by_parent(scores: Mapping[str, float], parent_of: Mapping[str, str]) -> dict[str, float]:
    """Collapse unit scores to parent level, keeping the max per parent."""
    out: dict[str, float] = {}
    for unit_id, score in scores.items():
        try:
            parent = parent_of[unit_id]
        except KeyError:
            raise ContractError(f"unit {unit_id!r} has no parent mapping") from None
        if parent not in out or score > out[parent]:
            out[parent] = score
    return out


def mean_score_vectors(vectors: Sequence[Mapping[str, float]]) -> dict[str, float]:
    """Elementwise mean over score maps sharing one universe."""
    if not vectors:
        raise ContractError("no score vectors to average")
    universe = set(vectors[0])
    for v in vectors[1:]:
        if set(v) != universe:
            raise ContractError("score universes differ across vectors")
    n = len(vectors)
    return {d: sum(v[d] for v in vectors) / n for d in universe}


def granularity_aggregate(
    granularity: str,
    per_subquery: Sequence[ScoreVector],
    unit_parent: Mapping[str, str] | None = None,
) -> ScoreVector:
    """Aggregate atomic-unit scores to document level.

    Proposition scores collapse to their parent document by max; per
    sub-query document vectors are averaged. q-d input passes through.
    """
    if granularity not in GRANULARITIES:
        raise ContractError(f"unknown granularity {granularity!r}")
    if not per_subquery:
        raise ContractError("no score vectors supplied")
    if granularity.startswith("q-") and len(per_subquery) != 1:
        raise ContractError(f"{granularity} expects exactly one score vector")
    if granularity.endswith("-p") and unit_parent is None:
        raise ContractError(f"{granularity} requires a unit-to-document map")

    doc_level: list[dict[str, float]] = []
    for sv in per_subquery:
        if granularity.endswith("-p"):
            doc_level.append(max_by_parent(sv.scores, unit_parent))
        else:
            doc_level.append(dict(sv.scores))
    merged = doc_level[0] if len(doc_level) == 1 else mean_score_vectors(doc_level)
    first = per_subquery[0]
    return ScoreVector(first.query_id, first.space_id, merged)


def collapse_chunks(scores: ScoreVector, corpus: Corpus) -> ScoreVector:
    """Map chunk-level scores to original documents, max over chunks."""
    out: dict[str, float] = {}
    for doc_id, score in scores.scores.items():
        original = corpus.original_of(doc_id)
        if original not in out or score > out[original]:
            out[original] = score
    return ScoreVector(scores.query_id, scores.space_id, out)


# --- fusing ------------------------------------------------------------------


def _rank(scored: Mapping[str, float]) -> tuple[tuple[str, float, int], ...]:
    ordered = sorted(scored.items(), key=lambda kv: (-kv[1], kv[0]))
    return tuple((doc_id, score, rank) for rank, (doc_id, score) in enumerate(ordered, 1))


def fuse(
    score_vectors: Mapping[str, ScoreVector],
    allocation: WeightAllocation,
    audit_depth: int = 20,
) -> FusedRun:
    """Weighted sum of normalized member scores, re-ranked globally."""
    if not score_vectors:
        raise ContractError("no score vectors to fuse")
    labels = list(score_vectors)
    universe = set(score_vectors[labels[0]].scores)
    for label in labels[1:]:
        if set(score_vectors[label].scores) != universe:
            raise ContractError(f"doc universe of {label!r} differs from the pool's")
    missing = [label for label in labels if label not in allocation.weights]
    if missing:
        raise ContractError(f"allocation lacks weights for {missing}")

    # canonical accumulation order: fusing is independent of pool enumeration
    fused = dict.fromkeys(universe, 0.0)
    for label in sorted(labels):
        weight = allocation.weights[label]
        if weight == 0.0:
            continue
        for doc_id, score in score_vectors[label].scores.items():
            fused[doc_id] += weight * score

    ranked = _rank(fused)
    contributions = {
        doc_id: {label: score_vectors[label].scores[doc_id] for label in labels}
        for doc_id, _, _ in ranked[:audit_depth]
    }
    audit = {
        "mode": allocation.mode,
        "weights": dict(allocation.weights),
        "contributions": contributions,
    }
    if allocation.coefficients is not None:
        audit["coefficients"] = allocation.coefficients
    return FusedRun(allocation.query_id, ranked, audit)


def prereject(
    allocation: WeightAllocation, threshold_percent: float
) -> tuple[WeightAllocation, float]:
    """Zero out weights below a percentile cut between min and max.

    The argmax member always survives. Returns the new allocation and the
    fraction of members retained.
    """
    if not 0.0 <= threshold_percent <= 100.0:
        raise ContractError(f"threshold must be in [0, 100], got {threshold_percent}")
    if not allocation.weights:
        raise ContractError("empty weight allocation")
    values = allocation.weights.values()
    w_min, w_max = min(values), max(values)
    cut = w_min + (threshold_percent / 100.0) * (w_max - w_min)
    survivors = {label for label, w in allocation.weights.items() if w >= cut}
    # the best member is never rejected, even under float artifacts at t=100
    survivors.add(max(allocation.weights.items(), key=lambda kv: (kv[1], kv[0]))[0])
    kept = {
        label: (w if label in survivors else 0.0)
        for label, w in allocation.weights.items()
    }
    return (
        WeightAllocation(allocation.query_id, kept, allocation.mode, allocation.coefficients),
        len(survivors) / len(kept),
    )


def rrf(
    rank_lists: Mapping[str, Sequence[str]],
    k_rrf: float = 60.0,
    query_id: str = "",
) -> FusedRun:
    """Reciprocal rank fusion: score(d) = sum over lists of 1/(k + rank)."""
    if k_rrf <= 0:
        raise ContractError(f"k_rrf must be positive, got {k_rrf}")
    if not rank_lists:
        raise ContractError("no rank lists supplied")
    scores: dict[str, float] = {}
    for label, docs in rank_lists.items():
        if len(set(docs)) != len(docs):
            raise ContractError(f"duplicate doc within rank list {label!r}")
        for rank, doc_id in enumerate(docs, 1):
            scores[doc_id] = scores.get(doc_id, 0.0) + 1.0 / (k_rrf + rank)
    ranked = _rank(scores)
    return FusedRun(query_id, ranked, {"mode": "rrf", "k_rrf": k_rrf})


def route_oracle(
    candidates: Mapping[str, FusedRun],
    qrels: Qrels,
    k: int = 20,
) -> tuple[FusedRun, str, bool]:
    """Pick the single member whose ranking maximizes NDCG@k for this query.

    Ties go to the earliest member in pool order. When the query has no
    positively judged document the first member is passed through and the
    run is flagged (callers skip it in aggregates).
    """
    if not candidates:
        raise ContractError("no candidate runs")
    labels = list(candidates)
    query_ids = {run.query_id for run in candidates.values()}
    if len(query_ids) != 1:
        raise ContractError(f"candidates span multiple queries: {sorted(query_ids)}")
    query_id = query_ids.pop()

    grades = qrels.for_query(query_id)
    if not any(g > 0 for g in grades.values()):
        chosen = labels[0]
        run = candidates[chosen]
        audit = dict(run.audit)
        audit.update({"mode": "route-oracle", "chosen": chosen, "no_judged": True})
        return FusedRun(query_id, run.ranked, audit), chosen, True

    best_label, best_metric = labels[0], -1.0
    for label in labels:
        metric = ndcg_at_k(candidates[label].doc_ids, grades, k)
        if metric > best_metric:
            best_label, best_metric = label, metric
    run = candidates[best_label]
    audit = dict(run.audit)
    audit.update({"mode": "route-oracle", "chosen": best_label, "metric": best_metric})
    return FusedRun(query_id, run.ranked, audit), best_label, False


def merge_ablation(
    score_vectors: Mapping[str, ScoreVector],
    allocation: WeightAllocation | None = None,
    granularity_merge: str = "none",
    retriever_merge: str = "weights",
) -> FusedRun:
    """Ablation variants of the fusion step.

    granularity_merge in {none, max, mean} collapses each retriever's
    granularity variants (labels "name/granularity") before weighting;
    the collapsed weight is the mean of the variant weights.
    retriever_merge "mean" sets all member weights equal; "weights" uses
    the supplied allocation.
    """
    if granularity_merge not in ("none", "max", "mean"):
        raise ContractError(f"unknown granularity merge {granularity_merge!r}")
    if retriever_merge not in ("weights", "mean"):
        raise ContractError(f"unknown retriever merge {retriever_merge!r}")
    if retriever_merge == "weights" and allocation is None:
        raise ContractError("retriever_merge='weights' requires an allocation")
    if not score_vectors:
        raise ContractError("no score vectors supplied")

    query_id = next(iter(score_vectors.values())).query_id
    if allocation is not None and allocation.query_id != query_id:
        raise ContractError("allocation query differs from score vectors")

    merged_vectors: dict[str, ScoreVector] = dict(score_vectors)
    merged_weights: dict[str, float] = dict(allocation.weights) if allocation else {}

    if granularity_merge != "none":
        by_name: dict[str, list[str]] = {}
        for label in score_vectors:
            name = label.split("/", 1)[0]
            by_name.setdefault(name, []).append(label)
        merged_vectors = {}
        merged_weights = {}
        for name, labels in by_name.items():
            maps = [score_vectors[label].scores for label in labels]
            if granularity_merge == "mean":
                combined = mean_score_vectors(maps)
            else:
                combined = dict(maps[0])
                for other in maps[1:]:
                    if set(other) != set(combined):
                        raise ContractError("score universes differ across variants")
                    for doc_id, score in other.items():
                        if score > combined[doc_id]:
                            combined[doc_id] = score
            merged_vectors[name] = ScoreVector(query_id, name, combined)
            if allocation is not None:
                merged_weights[name] = sum(allocation.weights[lb] for lb in labels) / len(labels)

    if retriever_merge == "mean":
        merged_weights = dict.fromkeys(merged_vectors, 1.0)

    mode = f"ablate[g={granularity_merge},r={retriever_merge}]"
    merged_allocation = WeightAllocation(query_id, merged_weights, mode)
    return fuse(merged_vectors, merged_allocation)
