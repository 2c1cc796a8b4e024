"""Retriever-mixture engine: per-query trust weights over heterogeneous
retrievers, score fusion, and retrieval evaluation."""

from .corpus import (
    Corpus,
    Document,
    GranularityMap,
    Qrels,
    Query,
    load_corpus,
    load_granularity_map,
    load_qrels,
    load_queries,
    write_corpus,
)
from .embeddings import (
    EmbeddingIndex,
    ScoreVector,
    SpaceRegistry,
    cosine,
    cosine_scores,
    load_embeddings,
    top_k,
    write_embeddings,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    EmbeddingLookupError,
    FormatError,
    MorError,
    ParseError,
    ValidationError,
)
from .evaluation import EvalReport, evaluate_run, ndcg_at_k, recall_at_k, win_rate_matrix
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
    bm25_score,
    dense_score,
    normalize,
    oracle_human_score,
    tokenize,
)
from .signals import (
    Clustering,
    SignalBundle,
    choose_k,
    kmeans,
    moran_i,
    v_post,
    v_pre,
)

__version__ = "0.1.0"
