"""End-to-end engine: pool construction, signal computation, fusion runs.

The engine loads all inputs once, builds (or loads from cache) the BM25
indexes and per-space clusterings, then produces per-query weight
allocations and fused runs for every requested mode. Everything downstream
of loading is deterministic given the config seeds.
"""

from __future__ import annotations

import hashlib
import os
import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .config import PipelineConfig
from .corpus import (
    GranularityMap,
    Qrels,
    Query,
    load_corpus,
    load_granularity_map,
    load_qrels,
    load_queries,
)
from .embeddings import (
    EmbeddingIndex,
    ScoreVector,
    SpaceRegistry,
    cosine_scores,
    load_embeddings,
    top_k,
)
from .errors import ConfigError, ContractError, ValidationError
from .fusion import (
    FusedRun,
    WeightAllocation,
    collapse_chunks,
    fuse,
    granularity_aggregate,
    merge_ablation,
    prereject,
    route_oracle,
    rrf,
    weight_post,
    weight_pre,
)
from .retrievers import (
    Bm25Index,
    RetrieverSpec,
    bm25_build,
    dense_score,
    normalize,
    oracle_human_score,
    query_vectors,
)
from .signals import Clustering, SignalBundle, choose_k, kmeans, moran_i, v_post, v_pre


class ArtifactCache:
    """Content-addressed pickle cache for indexes and clusterings."""

    def __init__(self, root: Path | None):
        self.root = root
        self.events: list[tuple[str, str, bool]] = []  # (kind, key, hit)
        if root is not None:
            root.mkdir(parents=True, exist_ok=True)

    def get_or_build(self, kind: str, key_material: str, builder: Callable[[], object]) -> object:
        key = hashlib.sha256(key_material.encode()).hexdigest()[:24]
        if self.root is None:
            self.events.append((kind, key, False))
            return builder()
        path = self.root / f"{kind}-{key}.pkl"
        if path.exists():
            with open(path, "rb") as fh:
                value = pickle.load(fh)
            self.events.append((kind, key, True))
            return value
        value = builder()
        with open(path, "wb") as fh:
            pickle.dump(value, fh)
        self.events.append((kind, key, False))
        return value


def resolve_cache_dir(config: PipelineConfig) -> Path | None:
    env = os.environ.get("MOR_CACHE_DIR")
    if env:
        return Path(env)
    return config.cache_dir


def _file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass(frozen=True)
class QueryResult:
    """Everything the fusion stage needs for one query."""

    query_id: str
    doc_scores: dict[str, ScoreVector]  # label -> normalized doc-level scores
    signals: dict[str, SignalBundle]  # label -> signal bundle


class _Member:
    """Runtime binding of one pool member to its indexes and spaces."""

    def __init__(self, engine: "Engine", spec: RetrieverSpec):
        self.engine = engine
        self.spec = spec
        self.label = spec.label
        self.signal_index: EmbeddingIndex
        self._unit_parent: dict[str, str] | None = None

        if spec.kind == "sparse-bm25":
            self._init_sparse()
        elif spec.kind == "dense":
            self._init_dense()
        else:
            self._init_oracle()

    # --- construction ---------------------------------------------------

    def _init_sparse(self) -> None:
        engine = self.engine
        k1 = float(self.spec.params.get("k1", 1.2))
        b = float(self.spec.params.get("b", 0.75))
        if self.spec.granularity.endswith("-p"):
            items, self._unit_parent = engine.proposition_items()
            side = "props"
        else:
            items = [(doc.doc_id, doc.text) for doc in engine.corpus]
            side = "docs"
        key = f"bm25|{side}|{engine.dataset_digest(side)}|k1={k1}|b={b}"
        self.bm25: Bm25Index = engine.cache.get_or_build(
            "bm25", key, lambda: bm25_build(items, k1=k1, b=b)
        )
        self.signal_index = engine.tfidf_space(self.bm25, side)

    def _init_dense(self) -> None:
        spaces = self.engine.spaces
        granularity = self.spec.granularity
        if granularity.endswith("-p"):
            default_space = str(self.spec.params["prop_space"])
            _, self._unit_parent = self.engine.proposition_items()
        else:
            default_space = str(self.spec.params["doc_space"])
        self.signal_index = spaces.get(self.spec.embedding_space or default_space)

    def _init_oracle(self) -> None:
        params = self.spec.params
        for key in ("domain", "reference_space", "reference_query_space"):
            if key not in params:
                raise ConfigError(f"pool member {self.label!r} lacks params.{key}")
        self.expert_domain = str(params["domain"])
        self.reference_index = self.engine.spaces.get(str(params["reference_space"]))
        self.reference_query_space = str(params["reference_query_space"])
        self.oracle_seed = int(params.get("seed", self.engine.config.simulation.seed))
        self.signal_index = self.reference_index

    # --- scoring ----------------------------------------------------------

    def item_scores(self, query: Query) -> ScoreVector:
        """Item-level scores in this member's own index (signal input)."""
        spec, engine = self.spec, self.engine
        if spec.kind == "sparse-bm25":
            texts = engine.query_side_texts(query, spec.granularity)
            vectors = [self.bm25.score(t, query.query_id) for t in texts]
            merged = vectors[0].scores if len(vectors) == 1 else {
                item: float(np.mean([v.scores[item] for v in vectors]))
                for item in vectors[0].scores
            }
            return ScoreVector(query.query_id, self.signal_index.space_id, merged)
        if spec.kind == "dense":
            if not spec.granularity.endswith("-p"):
                # docs are the items; sq variants are already sub-query means
                return dense_score(spec, engine.spaces, query, engine.gmap,
                                   engine.corpus, do_normalize=False)
            # signal path stays at proposition level: mean across sub-queries
            qvecs = query_vectors(spec, engine.spaces, query, engine.gmap)
            prop_index = engine.spaces.get(str(spec.params["prop_space"]))
            per_subquery = [cosine_scores(prop_index, qv, query.query_id) for qv in qvecs]
            merged = per_subquery[0].scores if len(per_subquery) == 1 else {
                item: float(np.mean([v.scores[item] for v in per_subquery]))
                for item in per_subquery[0].scores
            }
            return ScoreVector(query.query_id, prop_index.space_id, merged)
        return oracle_human_score(self.expert_domain, query, self.engine.item_qrels,
                                  self.reference_index, self.oracle_seed)

    def doc_scores(self, query: Query) -> ScoreVector:
        """Normalized scores over the original-document universe."""
        spec, engine = self.spec, self.engine
        if spec.kind == "dense":
            aggregated = dense_score(spec, engine.spaces, query, engine.gmap,
                                     engine.corpus, do_normalize=False)
        elif spec.kind == "sparse-bm25":
            texts = engine.query_side_texts(query, spec.granularity)
            per_subquery = [self.bm25.score(t, query.query_id) for t in texts]
            aggregated = granularity_aggregate(spec.granularity, per_subquery,
                                               self._unit_parent)
        else:
            aggregated = oracle_human_score(self.expert_domain, query, engine.item_qrels,
                                            self.reference_index, self.oracle_seed)
        restricted = {d: aggregated.scores[d] for d in engine.corpus.doc_ids
                      if d in aggregated.scores}
        if len(restricted) != len(engine.corpus):
            missing = next(d for d in engine.corpus.doc_ids if d not in restricted)
            raise ContractError(
                f"member {self.label!r} scored {len(restricted)} docs, "
                f"missing {missing!r}"
            )
        doc_level = ScoreVector(query.query_id, aggregated.space_id, restricted)
        return normalize(collapse_chunks(doc_level, engine.corpus))

    def signal_qvec(self, query: Query) -> np.ndarray:
        spec, engine = self.spec, self.engine
        if spec.kind == "sparse-bm25":
            texts = engine.query_side_texts(query, spec.granularity)
            vecs = [self.bm25.tfidf_vector(t) for t in texts]
            return np.mean(vecs, axis=0)
        if spec.kind == "dense":
            vecs = query_vectors(spec, engine.spaces, query, engine.gmap)
            return np.mean(np.stack([np.asarray(v, dtype=np.float64) for v in vecs]), axis=0)
        return self.engine.spaces.vector(self.reference_query_space, query.query_id)


class Engine:
    def __init__(self, config: PipelineConfig, cache: ArtifactCache | None = None):
        self.config = config
        self.cache = cache or ArtifactCache(resolve_cache_dir(config))
        self.corpus = load_corpus(config.dataset.corpus)
        self.queries = load_queries(config.dataset.queries)
        self.qrels = load_qrels(config.dataset.qrels) if config.dataset.qrels else None
        if self.qrels is not None:
            known = {q.query_id for q in self.queries}
            stray = sorted(self.qrels.query_ids - known)
            if stray:
                raise ValidationError(
                    f"qrels reference queries outside the query set: {stray[:5]}"
                )

        if config.dataset.propositions or config.dataset.subqueries:
            self.gmap: GranularityMap | None = load_granularity_map(
                config.dataset.propositions, config.dataset.subqueries,
                self.corpus, self.queries,
            )
        else:
            self.gmap = None

        self.spaces = SpaceRegistry()
        for space_id, path in config.spaces.items():
            self.spaces.add(load_embeddings(path, space_id))

        self._digests: dict[str, str] = {}
        self._tfidf_spaces: dict[str, EmbeddingIndex] = {}
        self._prop_items: tuple[list[tuple[str, str]], dict[str, str]] | None = None
        self._clusterings: dict[str, Clustering] = {}

        # qrels at retrieval-item level: judged originals map onto their chunks
        self.item_qrels = self._chunk_qrels() if self.qrels else Qrels({})

        self.members = [_Member(self, spec) for spec in config.pool]

    # --- shared inputs ------------------------------------------------------

    def _chunk_qrels(self) -> Qrels:
        has_chunks = any(doc.chunk_of for doc in self.corpus)
        if not has_chunks:
            return self.qrels
        judgments: dict[tuple[str, str], int] = {}
        by_query: dict[str, dict[str, int]] = {}
        for (qid, did), grade in self.qrels.judgments.items():
            by_query.setdefault(qid, {})[did] = grade
        for doc in self.corpus:
            original = self.corpus.original_of(doc.doc_id)
            for qid, grades in by_query.items():
                if original in grades:
                    judgments[(qid, doc.doc_id)] = grades[original]
        return Qrels(judgments)

    def dataset_digest(self, side: str) -> str:
        if side not in self._digests:
            parts = [_file_digest(self.config.dataset.corpus)]
            if side == "props" and self.config.dataset.propositions:
                parts.append(_file_digest(self.config.dataset.propositions))
            self._digests[side] = hashlib.sha256("|".join(parts).encode()).hexdigest()
        return self._digests[side]

    def proposition_items(self) -> tuple[list[tuple[str, str]], dict[str, str]]:
        """Proposition items plus fallback self-items for bare documents."""
        if self.gmap is None:
            raise ContractError("proposition granularity requires dataset.propositions")
        if self._prop_items is None:
            items: list[tuple[str, str]] = []
            parent: dict[str, str] = {}
            for doc in self.corpus:
                props = self.gmap.props_for(doc.doc_id)
                if props:
                    for pid in props:
                        items.append((pid, self.gmap.text_of(pid)))
                        parent[pid] = doc.doc_id
                else:
                    items.append((doc.doc_id, doc.text))
                    parent[doc.doc_id] = doc.doc_id
            self._prop_items = (items, parent)
        return self._prop_items

    def query_side_texts(self, query: Query, granularity: str) -> list[str]:
        """Sub-query texts for sq-* granularities, falling back to the query."""
        if granularity.startswith("sq") and self.gmap is not None:
            subq_ids = self.gmap.subqs_for(query.query_id)
            if subq_ids:
                return [self.gmap.text_of(s) for s in subq_ids]
        return [query.text]

    def tfidf_space(self, index: Bm25Index, side: str) -> EmbeddingIndex:
        if side not in self._tfidf_spaces:
            self._tfidf_spaces[side] = index.tfidf_space(f"bm25-tfidf/{side}")
        return self._tfidf_spaces[side]

    # --- clustering -----------------------------------------------------------

    def clustering_for(self, index: EmbeddingIndex) -> Clustering:
        space_id = index.space_id
        if space_id not in self._clusterings:
            k = min(choose_k(len(index)), len(index))
            seed = self.config.fusion.seed
            if space_id.startswith("bm25-tfidf/"):
                key = f"cluster|{space_id}|{self.dataset_digest(space_id.split('/')[1])}|k={k}|seed={seed}"
            else:
                key = f"cluster|{space_id}|{_file_digest(self.config.spaces[space_id])}|k={k}|seed={seed}"
            self._clusterings[space_id] = self.cache.get_or_build(
                "cluster", key, lambda: kmeans(index, k, seed)
            )
        return self._clusterings[space_id]

    def build_indexes(self) -> list[tuple[str, str, bool]]:
        """Force-build every index and clustering; returns cache events."""
        for member in self.members:
            self.clustering_for(member.signal_index)
        return list(self.cache.events)

    # --- per-query computation --------------------------------------------

    def signals_for(self, member: _Member, query: Query) -> SignalBundle:
        clustering = self.clustering_for(member.signal_index)
        pre = v_pre(member.signal_qvec(query), clustering)

        item_scores = member.item_scores(query)
        eligible = {i: s for i, s in item_scores.scores.items() if i in member.signal_index}
        if not eligible:
            raise ContractError(f"member {member.label!r} has no items in its signal space")
        depth = min(self.config.fusion.top_docs, len(eligible))
        top = top_k(ScoreVector(query.query_id, item_scores.space_id, eligible), depth)
        top_ids = [i for i, _ in top]
        top_scores = [s for _, s in top]
        moran = moran_i(top_ids, top_scores, member.signal_index) if len(top_ids) >= 2 else 0.0
        top_vecs = [member.signal_index.vector(i) for i in top_ids]
        post = v_post(top_vecs, clustering)
        return SignalBundle(v_pre=pre, i_moran=moran, v_post=post)

    def query_result(self, query: Query) -> QueryResult:
        doc_scores = {m.label: m.doc_scores(query) for m in self.members}
        signals = {m.label: self.signals_for(m, query) for m in self.members}
        return QueryResult(query.query_id, doc_scores, signals)

    def compute_all(self) -> list[QueryResult]:
        return [self.query_result(q) for q in self.queries]

    # --- fusion modes -------------------------------------------------------

    def allocation(self, result: QueryResult, mode: str) -> WeightAllocation:
        if mode == "mor-pre":
            return weight_pre(result.query_id, result.signals)
        if mode == "mor-post":
            a, b, c = self.config.fusion.coefficients
            return weight_post(result.query_id, result.signals, a, b, c)
        raise ContractError(f"mode {mode!r} has no weight allocation")

    def fused_run(
        self,
        result: QueryResult,
        mode: str,
        threshold: float | None = None,
    ) -> tuple[FusedRun, WeightAllocation | None, float]:
        """One query's fused run; returns (run, allocation, retained_fraction)."""
        if mode in ("mor-pre", "mor-post"):
            allocation = self.allocation(result, mode)
            retained = 1.0
            if threshold is not None:
                allocation, retained = prereject(allocation, threshold)
            return fuse(result.doc_scores, allocation), allocation, retained
        if mode == "rrf":
            depth = self.config.fusion.run_depth
            lists = {
                label: [d for d, _ in top_k(sv, min(depth, len(sv.scores)))]
                for label, sv in result.doc_scores.items()
            }
            return rrf(lists, self.config.fusion.rrf_k, result.query_id), None, 1.0
        if mode == "route-oracle":
            if self.qrels is None:
                raise ConfigError("route-oracle requires dataset.qrels")
            candidates = {
                label: FusedRun(result.query_id,
                                tuple((d, s, r) for r, (d, s) in
                                      enumerate(top_k(sv, len(sv.scores)), 1)))
                for label, sv in result.doc_scores.items()
            }
            run, _, _ = route_oracle(candidates, self.qrels, self.metric_depth())
            return run, None, 1.0
        if mode.startswith("ablate-"):
            gmerge = {"gmax": "max", "gmean": "mean", "gnone": "none"}[mode.split("-")[1]]
            rmerge = {"rmean": "mean", "rpre": "weights"}[mode.split("-")[2]]
            allocation = None
            if rmerge == "weights":
                allocation = weight_pre(result.query_id, result.signals)
            return (
                merge_ablation(result.doc_scores, allocation, gmerge, rmerge),
                allocation,
                1.0,
            )
        raise ConfigError(f"unknown fusion mode {mode!r}")

    def metric_depth(self) -> int:
        ks = [int(m.split("@")[1]) for m in self.config.eval.metrics if "@" in m]
        return ks[-1] if ks else 20

    def run_tag(self, mode: str) -> str:
        if mode == "mor-post":
            a, b, c = self.config.fusion.coefficients
            return f"mor-post({a:g},{b:g},{c:g})"
        if mode == "rrf":
            return f"rrf({self.config.fusion.rrf_k:g})"
        return mode
