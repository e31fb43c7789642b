"""Lexical retrieval: inverted index plus BM25 scoring.

Tokenization: lowercase, split on non-alphanumeric characters, drop
single-character tokens. Scoring uses k1 = 1.2, b = 0.75 and the
always-positive idf variant idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)).
Query terms are summed per occurrence, so a repeated query term counts
twice. Only documents sharing at least one query term are returned, ordered
by descending score with ties broken by ascending doc_id.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from finorch.errors import EmptyCorpus, EmptyQuery

__all__ = [
    "BM25_B",
    "BM25_K1",
    "Document",
    "RetrievalIndex",
    "RetrievedPassage",
    "index_documents",
    "retrieve",
    "tokenize",
]

BM25_K1 = 1.2
BM25_B = 0.75

# unicode alphanumerics without the underscore
_TOKEN_SPLIT = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.findall(text.lower()) if len(t) > 1]


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    metadata: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class RetrievedPassage:
    doc_id: str
    text: str
    score: float
    metadata: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class RetrievalIndex:
    """Immutable inverted index over a fixed corpus."""

    documents: tuple[Document, ...]
    postings: Mapping[str, Mapping[str, int]]  # term -> doc_id -> tf
    doc_lengths: Mapping[str, int]
    average_doc_length: float

    def __len__(self) -> int:
        return len(self.documents)

    def document(self, doc_id: str) -> Document:
        for doc in self.documents:
            if doc.doc_id == doc_id:
                return doc
        raise KeyError(doc_id)


def _as_document(raw: Document | Sequence[Any]) -> Document:
    if isinstance(raw, Document):
        return raw
    if len(raw) == 2:
        return Document(doc_id=str(raw[0]), text=str(raw[1]))
    doc_id, text, metadata = raw
    return Document(doc_id=str(doc_id), text=str(text), metadata=metadata)


def index_documents(
    docs: Sequence[Document | Sequence[Any]],
) -> RetrievalIndex:
    """Build the inverted index; deterministic for a given corpus."""
    documents = tuple(_as_document(d) for d in docs)
    if not documents:
        raise EmptyCorpus("no documents to index")
    seen: set[str] = set()
    for doc in documents:
        if doc.doc_id in seen:
            raise ValueError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
    postings: dict[str, dict[str, int]] = {}
    doc_lengths: dict[str, int] = {}
    for doc in documents:
        tokens = tokenize(doc.text)
        if not tokens:
            raise EmptyCorpus(
                f"document {doc.doc_id!r} has no indexable tokens"
            )
        doc_lengths[doc.doc_id] = len(tokens)
        for term in tokens:
            postings.setdefault(term, {})
            postings[term][doc.doc_id] = postings[term].get(doc.doc_id, 0) + 1
    average = sum(doc_lengths.values()) / len(documents)
    return RetrievalIndex(
        documents=documents,
        postings=postings,
        doc_lengths=doc_lengths,
        average_doc_length=average,
    )


def bm25_scores(index: RetrievalIndex, query: str) -> dict[str, float]:
    """Raw BM25 scores for documents sharing at least one query term."""
    terms = tokenize(query)
    if not terms:
        raise EmptyQuery(f"query {query!r} has no indexable tokens")
    n_docs = len(index.documents)
    scores: dict[str, float] = {}
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        df = len(plist)
        idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
        for doc_id, tf in plist.items():
            length_norm = 1.0 - BM25_B + BM25_B * (
                index.doc_lengths[doc_id] / index.average_doc_length
            )
            gain = idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * length_norm)
            scores[doc_id] = scores.get(doc_id, 0.0) + gain
    return scores


def retrieve(index: RetrievalIndex, query: str, k: int) -> list[RetrievedPassage]:
    """Top-k passages by BM25; ties broken by ascending doc_id."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    scores = bm25_scores(index, query)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    out: list[RetrievedPassage] = []
    for doc_id, score in ranked[:k]:
        doc = index.document(doc_id)
        out.append(
            RetrievedPassage(
                doc_id=doc_id, text=doc.text, score=score, metadata=doc.metadata
            )
        )
    return out
