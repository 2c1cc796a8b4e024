"""Retriever kinds behind one contract: a normalized per-document score
vector plus an embedding space for signal computation.

Three kinds: sparse Okapi BM25 (whose signal space is its TF-IDF vector
space), dense cosine scoring over imported embeddings, and a simulated
domain expert that ranks gold documents first in its own domain and emits
seeded random ranks elsewhere.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus, GranularityMap, Qrels, Query
from .embeddings import EmbeddingIndex, ScoreVector, SpaceRegistry, cosine, cosine_scores
from .errors import ContractError
from .fusion import GRANULARITIES, granularity_aggregate

_TOKEN_RE = re.compile(r"\w+")

KINDS = ("sparse-bm25", "dense", "oracle-human")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class RetrieverSpec:
    """One pool member: a named retriever at one granularity."""

    name: str
    kind: str
    granularity: str = "q-d"
    embedding_space: str = ""  # space used for signal computation
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown retriever kind {self.kind!r}")
        if self.granularity not in GRANULARITIES:
            raise ContractError(f"unknown granularity {self.granularity!r}")

    @property
    def label(self) -> str:
        return f"{self.name}/{self.granularity}"


def normalize(scores: ScoreVector) -> ScoreVector:
    """Min-max normalize over the full vector; constant vectors map to 0."""
    if not scores.scores:
        raise ContractError("cannot normalize an empty score vector")
    values = scores.scores.values()
    lo, hi = min(values), max(values)
    if hi == lo:
        normalized = dict.fromkeys(scores.scores, 0.0)
    else:
        span = hi - lo
        normalized = {d: (s - lo) / span for d, s in scores.scores.items()}
    return ScoreVector(scores.query_id, scores.space_id, normalized)


# --- sparse BM25 ---------------------------------------------------------


class Bm25Index:
    """Okapi BM25 inverted index over lowercased word tokens.

    Also exposes the corpus's TF-IDF vectors, which serve as this
    retriever's embedding space for clustering and similarity signals.
    """

    def __init__(self, items: Sequence[tuple[str, str]], k1: float = 1.2, b: float = 0.75):
        if not items:
            raise ContractError("cannot build BM25 over an empty corpus")
        if k1 <= 0:
            raise ContractError(f"k1 must be positive, got {k1}")
        if not 0.0 <= b <= 1.0:
            raise ContractError(f"b must be in [0, 1], got {b}")
        self.k1 = k1
        self.b = b
        self.item_ids = tuple(item_id for item_id, _ in items)
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ContractError("duplicate item ids in BM25 corpus")

        token_lists = [tokenize(text) for _, text in items]
        self.doc_lengths = np.array([len(t) for t in token_lists], dtype=np.float64)
        self.avg_doc_length = float(self.doc_lengths.mean()) if len(items) else 0.0

        self.term_freqs: list[Counter] = [Counter(tokens) for tokens in token_lists]
        df = Counter()
        self.postings: dict[str, list[tuple[int, int]]] = {}
        for row, tf in enumerate(self.term_freqs):
            for term, freq in tf.items():
                df[term] += 1
                self.postings.setdefault(term, []).append((row, freq))
        n = len(items)
        self.df = dict(df)
        self.idf = {
            term: math.log(1.0 + (n - d + 0.5) / (d + 0.5)) for term, d in df.items()
        }
        self._vocab = {term: col for col, term in enumerate(sorted(self.idf))}

    def __len__(self) -> int:
        return len(self.item_ids)

    def score(self, query_text: str, query_id: str = "") -> ScoreVector:
        """Raw Okapi scores; items sharing no query term score 0."""
        scores = np.zeros(len(self.item_ids))
        avgdl = self.avg_doc_length if self.avg_doc_length > 0 else 1.0
        for term in tokenize(query_text):
            idf = self.idf.get(term)
            if idf is None:
                continue
            for row, freq in self.postings[term]:
                denom = freq + self.k1 * (1.0 - self.b + self.b * self.doc_lengths[row] / avgdl)
                scores[row] += idf * freq * (self.k1 + 1.0) / denom
        return ScoreVector(query_id, "bm25", dict(zip(self.item_ids, scores.tolist())))

    # TF-IDF vector space -------------------------------------------------

    @property
    def tfidf_dim(self) -> int:
        return len(self._vocab)

    def tfidf_vector(self, text: str) -> np.ndarray:
        """TF-IDF vector of arbitrary text in this index's term space."""
        vec = np.zeros(self.tfidf_dim, dtype=np.float32)
        for term, freq in Counter(tokenize(text)).items():
            col = self._vocab.get(term)
            if col is not None:
                vec[col] = freq * self.idf[term]
        return vec

    def tfidf_space(self, space_id: str) -> EmbeddingIndex:
        """Materialize the corpus TF-IDF vectors as an embedding index."""
        matrix = np.zeros((len(self.item_ids), self.tfidf_dim), dtype=np.float32)
        for row, tf in enumerate(self.term_freqs):
            for term, freq in tf.items():
                matrix[row, self._vocab[term]] = freq * self.idf[term]
        return EmbeddingIndex(space_id, self.item_ids, matrix)


def bm25_build(
    corpus: Corpus | Sequence[tuple[str, str]], k1: float = 1.2, b: float = 0.75
) -> Bm25Index:
    """Build a BM25 index over a corpus or explicit (id, text) items."""
    if isinstance(corpus, Corpus):
        items = [(doc.doc_id, doc.text) for doc in corpus]
    else:
        items = list(corpus)
    return Bm25Index(items, k1=k1, b=b)


def bm25_score(index: Bm25Index, query_text: str, query_id: str = "") -> ScoreVector:
    return index.score(query_text, query_id)


# --- dense over imported embeddings ---------------------------------------


def _space_param(spec: RetrieverSpec, key: str) -> str:
    value = spec.params.get(key)
    if not value:
        raise ContractError(f"retriever {spec.label!r} lacks params[{key!r}]")
    return str(value)


def query_vectors(
    spec: RetrieverSpec,
    spaces: SpaceRegistry,
    query: Query,
    gmap: GranularityMap | None,
) -> list[np.ndarray]:
    """Query-side vectors: the query's own embedding, or its sub-queries'.

    Queries without sub-queries fall back to their own embedding.
    """
    query_space = _space_param(spec, "query_space")
    if spec.granularity.startswith("sq"):
        if gmap is None:
            raise ContractError(f"{spec.granularity} requires a decomposition map")
        subq_ids = gmap.subqs_for(query.query_id)
        if subq_ids:
            subq_space = _space_param(spec, "subq_space")
            return [spaces.vector(subq_space, sid) for sid in subq_ids]
    return [spaces.vector(query_space, query.query_id)]


def dense_score(
    spec: RetrieverSpec,
    spaces: SpaceRegistry,
    query: Query,
    gmap: GranularityMap | None,
    corpus: Corpus,
    do_normalize: bool = True,
) -> ScoreVector:
    """Cosine scores over the granularity's item space, aggregated to
    document level and min-max normalized."""
    qvecs = query_vectors(spec, spaces, query, gmap)
    doc_space = _space_param(spec, "doc_space")

    per_subquery: list[ScoreVector] = []
    unit_parent: dict[str, str] | None = None
    if spec.granularity.endswith("-p"):
        if gmap is None:
            raise ContractError(f"{spec.granularity} requires a decomposition map")
        prop_index = spaces.get(_space_param(spec, "prop_space"))
        unit_parent = {}
        bare_docs = []  # docs without propositions fall back to their own vector
        for doc in corpus:
            props = gmap.props_for(doc.doc_id)
            if props:
                for pid in props:
                    unit_parent[pid] = doc.doc_id
            else:
                bare_docs.append(doc.doc_id)
                unit_parent[doc.doc_id] = doc.doc_id
        for qv in qvecs:
            prop_scores = cosine_scores(prop_index, qv, query.query_id)
            items = {pid: s for pid, s in prop_scores.scores.items() if pid in unit_parent}
            for doc_id in bare_docs:
                items[doc_id] = cosine(spaces.vector(doc_space, doc_id), qv)
            per_subquery.append(ScoreVector(query.query_id, prop_index.space_id, items))
    else:
        doc_index = spaces.get(doc_space)
        for qv in qvecs:
            per_subquery.append(cosine_scores(doc_index, qv, query.query_id))

    aggregated = granularity_aggregate(spec.granularity, per_subquery, unit_parent)
    return normalize(aggregated) if do_normalize else aggregated


# --- simulated human expert ------------------------------------------------


def _stable_seed(seed: int, expert_domain: str, query_id: str) -> int:
    digest = hashlib.sha256(f"{seed}|{expert_domain}|{query_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def oracle_human_score(
    expert_domain: str,
    query: Query,
    qrels: Qrels,
    reference_index: EmbeddingIndex,
    seed: int = 0,
) -> ScoreVector:
    """Simulated domain expert over the reference embedding space.

    In the expert's own domain, gold documents score 1.0 and the rest score
    their max cosine to any gold document rescaled into [0, 1). Elsewhere
    the expert emits deterministic seeded-uniform scores in [0, 1).
    """
    if query.domain is None:
        raise ContractError(f"query {query.query_id!r} lacks a domain label")
    ids = reference_index.ids
    if query.domain == expert_domain:
        gold = sorted(qrels.gold_docs(query.query_id) & set(ids))
        if gold:
            vectors = reference_index.vectors.astype(np.float64)
            norms = np.linalg.norm(vectors, axis=1)
            unit = vectors / np.where(norms > 0.0, norms, 1.0)[:, None]
            gold_rows = [reference_index.row_of(g) for g in gold]
            max_sim = (unit @ unit[gold_rows].T).max(axis=1)
            # cosine in [-1, 1] -> [0, 1), strictly below the gold score
            scores = np.clip((max_sim + 1.0) / 2.0, 0.0, 1.0) * (1.0 - 1e-6)
            score_map = dict(zip(ids, scores.tolist()))
            for g in gold:
                score_map[g] = 1.0
            return ScoreVector(query.query_id, reference_index.space_id, score_map)
    rng = np.random.default_rng(_stable_seed(seed, expert_domain, query.query_id))
    values = rng.random(len(ids))
    return ScoreVector(query.query_id, reference_index.space_id, dict(zip(ids, values.tolist())))
