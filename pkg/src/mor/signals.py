"""Zero-shot trustworthiness signals computed from embedding-space geometry.

Three signals are produced per (query, retriever): a pre-retrieval
familiarity score from the query's position relative to corpus cluster
centroids, a spatial-autocorrelation coefficient over the top retrieved
items, and a post-retrieval score that applies the familiarity measure to
the retrieved items themselves. Lightweight baseline signals live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .embeddings import EmbeddingIndex
from .errors import ContractError, ValidationError

# Near-zero distance guard and its reciprocal cap. A query sitting exactly
# on a centroid is maximal familiarity, not an error.
EPS = 1e-10
CAP = 1e10

# How many top-ranked items feed the post-retrieval signals.
TOP_DOCS = 20


@dataclass(frozen=True)
class Clustering:
    """K-means result over one embedding space."""

    space_id: str
    k: int
    centroids: np.ndarray  # (k, dim) float64
    sizes: np.ndarray  # (k,) int
    assignment: Mapping[str, int]
    seed: int
    inertia: float
    n_iter: int
    inertia_history: tuple[float, ...] = ()

    def __post_init__(self):
        if int(self.sizes.sum()) != len(self.assignment):
            raise ValidationError("cluster sizes do not sum to item count")
        if not np.isfinite(self.centroids).all():
            raise ValidationError("non-finite centroids")


@dataclass(frozen=True)
class SignalBundle:
    """The three per-(query, retriever) trust signals."""

    v_pre: float
    i_moran: float
    v_post: float

    def __post_init__(self):
        for name in ("v_pre", "i_moran", "v_post"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} is not finite")
        if self.v_pre < 0 or self.v_post < 0:
            raise ValidationError("v_pre and v_post must be non-negative")


def choose_k(corpus_size: int) -> int:
    """Cluster count for a corpus: ceil of the fourth root, floored at 3."""
    if corpus_size < 1:
        raise ContractError(f"corpus_size must be >= 1, got {corpus_size}")
    k = max(int(round(corpus_size ** 0.25)), 1)
    # integer-exact ceil: smallest k with k^4 >= corpus_size
    while k ** 4 < corpus_size:
        k += 1
    while k > 1 and (k - 1) ** 4 >= corpus_size:
        k -= 1
    return max(k, 3)


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        (points ** 2).sum(axis=1)[:, None]
        + (centers ** 2).sum(axis=1)[None, :]
        - 2.0 * (points @ centers.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n, dim = points.shape
    centers = np.empty((k, dim), dtype=np.float64)
    centers[0] = points[int(rng.integers(n))]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))  # all remaining points coincide
        centers[j] = points[idx]
        np.minimum(closest, ((points - centers[j]) ** 2).sum(axis=1), out=closest)
    return centers


def kmeans(
    index: EmbeddingIndex,
    k: int,
    seed: int,
    max_iter: int = 100,
    shift_tol: float = 1e-6,
) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding from the given seed.

    Empty clusters are re-seeded to the point farthest from its assigned
    centroid. Converges when the largest centroid shift drops below
    ``shift_tol`` or after ``max_iter`` iterations.
    """
    n = len(index)
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if k > n:
        raise ContractError(f"k={k} exceeds item count {n}")

    points = index.vectors.astype(np.float64)
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(points, k, rng)

    history: list[float] = []
    labels = np.zeros(n, dtype=np.intp)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = _sq_dists(points, centers)
        labels = d2.argmin(axis=1)
        min_d2 = d2[np.arange(n), labels]
        history.append(float(min_d2.sum()))

        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c] > 0:
                new_centers[c] = points[labels == c].mean(axis=0)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            taken: set[int] = set()
            farthest_first = np.argsort(-min_d2, kind="stable")
            for c in empties:
                for idx in farthest_first:
                    if int(idx) not in taken:
                        new_centers[c] = points[idx]
                        taken.add(int(idx))
                        break

        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < shift_tol:
            break

    d2 = _sq_dists(points, centers)
    labels = d2.argmin(axis=1)
    history.append(float(d2[np.arange(n), labels].sum()))
    sizes = np.bincount(labels, minlength=k)
    assignment = {index.ids[i]: int(labels[i]) for i in range(n)}
    return Clustering(
        space_id=index.space_id,
        k=k,
        centroids=centers,
        sizes=sizes,
        assignment=assignment,
        seed=seed,
        inertia=history[-1],
        n_iter=iterations,
        inertia_history=tuple(history),
    )


def v_pre(qvec: np.ndarray, clustering: Clustering, eps: float = EPS, cap: float = CAP) -> float:
    """Familiarity of a vector to a clustered corpus.

    With v_k the offset from the vector to centroid k, returns the norm of
    the size-weighted sum of unit directions scaled by inverse squared
    distance. Symmetric surroundings cancel to 0; coinciding with any
    centroid returns the cap (maximal familiarity).
    """
    q = np.asarray(qvec, dtype=np.float64).reshape(-1)
    if clustering.centroids.shape[0] == 0:
        raise ContractError("clustering has no centroids")
    if q.shape[0] != clustering.centroids.shape[1]:
        raise ContractError(
            f"vector dim {q.shape[0]} != centroid dim {clustering.centroids.shape[1]}"
        )
    offsets = clustering.centroids - q
    norms = np.linalg.norm(offsets, axis=1)
    if bool((norms < eps).any()):
        return cap
    # unit(v_k) / ||v_k||^2 == v_k / ||v_k||^3
    weights = clustering.sizes.astype(np.float64) / clustering.k
    summed = (offsets * (weights / norms ** 3)[:, None]).sum(axis=0)
    return float(np.linalg.norm(summed))


def moran_i(
    top_docs: Sequence[str],
    scores: Sequence[float],
    index: EmbeddingIndex,
) -> float:
    """Spatial autocorrelation of relevance scores over retrieved items.

    Adjacency weights are cosine similarities clipped at 0, zero diagonal.
    Returns 0 when the scores are constant or no item pair is similar.
    """
    if len(top_docs) < 2:
        raise ContractError(f"need at least 2 items, got {len(top_docs)}")
    if len(scores) != len(top_docs):
        raise ContractError("scores and top_docs lengths differ")
    vecs = np.stack([index.vector(d) for d in top_docs]).astype(np.float64)
    norms = np.linalg.norm(vecs, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = vecs / safe[:, None]
    weights = np.clip(unit @ unit.T, 0.0, None)
    np.fill_diagonal(weights, 0.0)

    x = np.asarray(scores, dtype=np.float64)
    centered = x - x.mean()
    variance = float((centered ** 2).sum())
    total_weight = float(weights.sum())
    if variance == 0.0 or total_weight == 0.0:
        return 0.0
    m = len(x)
    return float((m / total_weight) * (centered @ weights @ centered) / variance)


def v_post(top_doc_vecs: Sequence[np.ndarray], clustering: Clustering) -> float:
    """Mean familiarity of the retrieved items to the corpus clustering."""
    if len(top_doc_vecs) == 0:
        raise ContractError("need at least 1 retrieved item")
    return float(np.mean([v_pre(v, clustering) for v in top_doc_vecs]))


# --- baseline signals ------------------------------------------------------


def perf_norm_weights(dev_scores: Mapping[str, float]) -> dict[str, float]:
    """Weights from per-retriever development-set metric values.

    Metric values are already in [0, 1] and are used verbatim.
    """
    if not dev_scores:
        raise ContractError("no development scores supplied")
    return dict(dev_scores)


def cluster_variance_weight(clustering: Clustering, eps: float = EPS) -> float:
    """Reciprocal of the centroid variance (mean per-dimension)."""
    var = float(np.var(clustering.centroids, axis=0).mean())
    return 1.0 / max(var, eps)


def score_variance_weight(scores: Sequence[float], eps: float = EPS) -> float:
    """Reciprocal of the variance of top-ranked scores."""
    if len(scores) == 0:
        raise ContractError("no scores supplied")
    var = float(np.var(np.asarray(scores, dtype=np.float64)))
    return 1.0 / max(var, eps)


def rep_variance_weight(vectors: Sequence[np.ndarray], eps: float = EPS) -> float:
    """Reciprocal of the mean per-dimension variance of top-ranked vectors."""
    if len(vectors) == 0:
        raise ContractError("no vectors supplied")
    mat = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    var = float(np.var(mat, axis=0).mean())
    return 1.0 / max(var, eps)
