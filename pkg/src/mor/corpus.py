"""Corpus, query, qrels, and decomposition-map loading.

All structures are frozen after construction and safe to share across
threads. File formats: JSON-Lines for corpora, queries, and decomposition
maps; TREC TSV for qrels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

from .errors import ParseError, FormatError, ValidationError


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    chunk_of: str | None = None  # parent document id when this is a chunk


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    domain: str | None = None  # expert-domain label for simulations


class Corpus:
    """Ordered, id-unique collection of documents."""

    def __init__(self, docs: list[Document]):
        self._docs = tuple(docs)
        self._by_id = {d.doc_id: d for d in self._docs}
        if len(self._by_id) != len(self._docs):
            raise ValidationError("duplicate doc ids passed to Corpus")

    def __len__(self) -> int:
        return len(self._docs)

    def __iter__(self) -> Iterator[Document]:
        return iter(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(d.doc_id for d in self._docs)

    def get(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def original_of(self, doc_id: str) -> str:
        """Original document id: chunk parent when set, else the id itself."""
        return self._by_id[doc_id].chunk_of or doc_id


@dataclass(frozen=True)
class Qrels:
    """Graded relevance judgments keyed by (query_id, doc_id)."""

    judgments: Mapping[tuple[str, str], int]

    def for_query(self, query_id: str) -> dict[str, int]:
        return {d: g for (q, d), g in self.judgments.items() if q == query_id}

    def gold_docs(self, query_id: str) -> set[str]:
        return {d for (q, d), g in self.judgments.items() if q == query_id and g > 0}

    @property
    def query_ids(self) -> set[str]:
        return {q for (q, _) in self.judgments}


@dataclass(frozen=True)
class GranularityMap:
    """Atomic decompositions: document propositions and query sub-queries.

    Empty unit lists are allowed; consumers fall back to the parent text.
    """

    doc_to_props: Mapping[str, tuple[str, ...]]
    query_to_subqs: Mapping[str, tuple[str, ...]]
    unit_text: Mapping[str, str] = field(default_factory=dict)
    unit_parent: Mapping[str, str] = field(default_factory=dict)

    def props_for(self, doc_id: str) -> tuple[str, ...]:
        return self.doc_to_props.get(doc_id, ())

    def subqs_for(self, query_id: str) -> tuple[str, ...]:
        return self.query_to_subqs.get(query_id, ())

    def parent_of(self, unit_id: str) -> str:
        return self.unit_parent[unit_id]

    def text_of(self, unit_id: str) -> str:
        return self.unit_text[unit_id]


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed JSON line: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSON-Lines corpus with keys id, text, optional chunk_of."""
    docs: list[Document] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        try:
            doc_id, text = str(obj["id"]), str(obj["text"])
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing key {exc}") from exc
        if not doc_id or not text:
            raise ValidationError(f"{path}:{lineno}: empty id or text")
        if doc_id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate doc id {doc_id!r}")
        seen.add(doc_id)
        chunk_of = obj.get("chunk_of")
        docs.append(Document(doc_id, text, str(chunk_of) if chunk_of is not None else None))
    return Corpus(docs)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to JSON-Lines, one document per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            obj: dict = {"id": doc.doc_id, "text": doc.text}
            if doc.chunk_of is not None:
                obj["chunk_of"] = doc.chunk_of
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_queries(path: str | Path) -> list[Query]:
    """Load a JSON-Lines query set with keys id, text, optional domain."""
    queries: list[Query] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        try:
            query_id, text = str(obj["id"]), str(obj["text"])
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing key {exc}") from exc
        if not query_id or not text:
            raise ValidationError(f"{path}:{lineno}: empty id or text")
        if query_id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate query id {query_id!r}")
        seen.add(query_id)
        domain = obj.get("domain")
        queries.append(Query(query_id, text, str(domain) if domain is not None else None))
    return queries


def write_queries(queries: list[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            obj: dict = {"id": q.query_id, "text": q.text}
            if q.domain is not None:
                obj["domain"] = q.domain
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_qrels(path: str | Path) -> Qrels:
    """Load TREC qrels: query_id, iteration (ignored), doc_id, grade.

    Grade-0 lines are kept as explicit non-relevance judgments.
    """
    judgments: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns, got {len(cols)}")
            query_id, _, doc_id, grade_str = cols
            try:
                grade = int(grade_str)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-integer grade {grade_str!r}") from exc
            if grade < 0:
                raise ParseError(f"{path}:{lineno}: negative grade {grade}")
            judgments[(query_id, doc_id)] = grade
    return Qrels(judgments)


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (query_id, doc_id), grade in sorted(qrels.judgments.items()):
            fh.write(f"{query_id} 0 {doc_id} {grade}\n")


def _load_units(path: str | Path) -> tuple[dict[str, tuple[str, ...]], dict[str, str], dict[str, str]]:
    """Parse one decomposition file: {"id": parent, "units": [{"id","text"}]}."""
    parent_to_units: dict[str, tuple[str, ...]] = {}
    unit_text: dict[str, str] = {}
    unit_parent: dict[str, str] = {}
    for lineno, obj in _iter_jsonl(path):
        try:
            parent_id = str(obj["id"])
            units = obj["units"]
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing key {exc}") from exc
        if parent_id in parent_to_units:
            raise ValidationError(f"{path}:{lineno}: duplicate parent id {parent_id!r}")
        ids: list[str] = []
        for unit in units:
            unit_id, text = str(unit["id"]), str(unit["text"])
            if unit_id in unit_parent:
                raise ValidationError(
                    f"{path}:{lineno}: unit {unit_id!r} already mapped to {unit_parent[unit_id]!r}"
                )
            ids.append(unit_id)
            unit_text[unit_id] = text
            unit_parent[unit_id] = parent_id
        parent_to_units[parent_id] = tuple(ids)
    return parent_to_units, unit_text, unit_parent


def load_granularity_map(
    props_path: str | Path | None,
    subqs_path: str | Path | None,
    corpus: Corpus,
    queries: list[Query],
) -> GranularityMap:
    """Load proposition and sub-query maps, rejecting orphan units.

    Either path may be None, in which case that side of the map is empty
    and consumers fall back to parent texts.
    """
    doc_to_props: dict[str, tuple[str, ...]] = {}
    query_to_subqs: dict[str, tuple[str, ...]] = {}
    unit_text: dict[str, str] = {}
    unit_parent: dict[str, str] = {}

    if props_path is not None:
        doc_to_props, p_text, p_parent = _load_units(props_path)
        for parent_id in doc_to_props:
            if parent_id not in corpus:
                raise ValidationError(
                    f"{props_path}: proposition parent doc {parent_id!r} not in corpus"
                )
        unit_text.update(p_text)
        unit_parent.update(p_parent)

    if subqs_path is not None:
        query_ids = {q.query_id for q in queries}
        query_to_subqs, s_text, s_parent = _load_units(subqs_path)
        for parent_id in query_to_subqs:
            if parent_id not in query_ids:
                raise ValidationError(
                    f"{subqs_path}: sub-query parent query {parent_id!r} not in query set"
                )
        unit_text.update(s_text)
        unit_parent.update(s_parent)

    return GranularityMap(doc_to_props, query_to_subqs, unit_text, unit_parent)
