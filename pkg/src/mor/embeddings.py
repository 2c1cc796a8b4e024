"""Dense vector stores: MORV binary IO, cosine scoring, exact top-k.

MORV format, little-endian:
    magic "MORV" (4 bytes) | version u32 = 1 | dim u32 | count u64
    | count * dim float32, row-major
Sidecar "<file>.ids" is UTF-8, one item id per line, row-aligned.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputError,
    EmbeddingLookupError,
    FormatError,
    ValidationError,
)

MORV_MAGIC = b"MORV"
MORV_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


@dataclass(frozen=True)
class ScoreVector:
    """Per-query relevance scores over one space's items."""

    query_id: str
    space_id: str
    scores: Mapping[str, float]


class EmbeddingIndex:
    """Immutable matrix of float32 vectors with row-aligned item ids."""

    def __init__(self, space_id: str, ids: Sequence[str], vectors: np.ndarray):
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ContractError("vectors must be a 2-D matrix")
        if len(ids) != vectors.shape[0]:
            raise ValidationError(
                f"{space_id}: {len(ids)} ids but {vectors.shape[0]} vector rows"
            )
        if len(set(ids)) != len(ids):
            raise ValidationError(f"{space_id}: item ids are not unique")
        if not np.isfinite(vectors).all():
            raise ValidationError(f"{space_id}: non-finite vector entries")
        self.space_id = space_id
        self.ids = tuple(str(i) for i in ids)
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self._row = {item_id: i for i, item_id in enumerate(self.ids)}
        # float64 norms, precomputed once; zero-norm rows score 0 downstream
        self._norms = np.linalg.norm(vectors.astype(np.float64), axis=1)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._row

    def row_of(self, item_id: str) -> int:
        try:
            return self._row[item_id]
        except KeyError:
            raise EmbeddingLookupError(self.space_id, item_id) from None

    def vector(self, item_id: str) -> np.ndarray:
        return self.vectors[self.row_of(item_id)]


def write_embeddings(path: str | Path, ids: Sequence[str], vectors: np.ndarray) -> None:
    """Write a MORV file plus its .ids sidecar."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] != len(ids):
        raise ContractError("vectors must be (len(ids), dim)")
    count, dim = vectors.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MORV_MAGIC, MORV_VERSION, dim, count))
        fh.write(vectors.tobytes(order="C"))
    with open(f"{path}.ids", "w", encoding="utf-8") as fh:
        for item_id in ids:
            fh.write(f"{item_id}\n")


def load_embeddings(path: str | Path, space_id: str | None = None) -> EmbeddingIndex:
    """Load a MORV file; the space id defaults to the file stem."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than MORV header")
    magic, version, dim, count = _HEADER.unpack_from(raw)
    if magic != MORV_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MORV_MAGIC!r}")
    if version != MORV_VERSION:
        raise FormatError(f"{path}: unsupported MORV version {version}")
    expected = _HEADER.size + count * dim * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length mismatch, expected {expected} bytes, got {len(raw)}"
        )
    vectors = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, dim)

    ids_path = Path(f"{path}.ids")
    ids = ids_path.read_text(encoding="utf-8").splitlines()
    if len(ids) != count:
        raise ValidationError(
            f"{ids_path}: {len(ids)} ids for {count} vector rows"
        )
    return EmbeddingIndex(space_id or path.stem, ids, vectors)


def cosine_scores(index: EmbeddingIndex, qvec: np.ndarray, query_id: str = "") -> ScoreVector:
    """Cosine similarity of qvec against every row; double-precision accumulation."""
    q = np.asarray(qvec, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise ContractError(f"query dim {q.shape[0]} != index dim {index.dim}")
    qnorm = np.linalg.norm(q)
    if qnorm == 0.0:
        raise DegenerateInputError("all-zero query vector")
    dots = index.vectors.astype(np.float64) @ q
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = dots / (index._norms * qnorm)
    sims[index._norms == 0.0] = 0.0
    return ScoreVector(query_id, index.space_id, dict(zip(index.ids, sims.tolist())))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Scalar cosine similarity; zero-norm inputs score 0."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


def top_k(scores: ScoreVector, k: int) -> list[tuple[str, float]]:
    """Top-k items, descending by score, ties broken by ascending id."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    ranked = sorted(scores.scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


class SpaceRegistry:
    """Named collection of embedding indexes, one per retriever space."""

    def __init__(self) -> None:
        self._spaces: dict[str, EmbeddingIndex] = {}

    def add(self, index: EmbeddingIndex) -> None:
        self._spaces[index.space_id] = index

    def __contains__(self, space_id: str) -> bool:
        return space_id in self._spaces

    def get(self, space_id: str) -> EmbeddingIndex:
        try:
            return self._spaces[space_id]
        except KeyError:
            raise EmbeddingLookupError(space_id, "<space>") from None

    def vector(self, space_id: str, item_id: str) -> np.ndarray:
        return self.get(space_id).vector(item_id)
