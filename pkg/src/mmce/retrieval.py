"""Okapi BM25 over post texts, used to pick few-shot demonstrations.

Scoring, for query tokens q (with multiplicity) and document d::

    score(d) = sum_q idf(q) * tf(q,d) * (k1 + 1) / (tf(q,d) + k1 * (1 - b + b * |d| / avgdl))
    idf(q)   = ln(1 + (N - n(q) + 0.5) / (n(q) + 0.5))

The ``1 +`` inside the log keeps idf positive, so a document sharing no
query term scores exactly 0 and every match scores above it.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .dataset import PostClaimPair

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Bm25Index:
    doc_ids: tuple[str, ...]
    term_frequencies: tuple[dict[str, int], ...]
    document_lengths: tuple[int, ...]
    average_length: float
    document_frequencies: dict[str, int]
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def __len__(self):
        return len(self.doc_ids)

    def idf(self, term: str) -> float:
        n = self.document_frequencies.get(term, 0)
        return math.log(1.0 + (len(self.doc_ids) - n + 0.5) / (n + 0.5))

    def scores(self, query_text: str) -> list[float]:
        query = tokenize(query_text)
        idf = {t: self.idf(t) for t in set(query)}
        out = []
        for tf, length in zip(self.term_frequencies, self.document_lengths):
            norm = self.k1 * (1.0 - self.b + self.b * length / self.average_length) if self.average_length else self.k1
            s = 0.0
            for term in query:
                f = tf.get(term)
                if f:
                    s += idf[term] * f * (self.k1 + 1.0) / (f + norm)
            out.append(s)
        return out

    def save(self, path) -> None:
        """Write the index as JSON; :meth:`load` restores an equal index."""
        payload = {
            "format": "mmce-bm25/1",
            "k1": self.k1,
            "b": self.b,
            "doc_ids": list(self.doc_ids),
            "term_frequencies": [dict(sorted(tf.items())) for tf in self.term_frequencies],
            "document_lengths": list(self.document_lengths),
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Bm25Index":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != "mmce-bm25/1":
            raise ValueError(f"{path}: not a BM25 index file")
        return _from_counts(payload["doc_ids"], [dict(tf) for tf in payload["term_frequencies"]],
                            payload["document_lengths"], payload["k1"], payload["b"])


def _from_counts(doc_ids, tfs, lengths, k1, b) -> Bm25Index:
    df: Counter = Counter()
    for tf in tfs:
        df.update(tf.keys())
    avg = sum(lengths) / len(lengths)
    return Bm25Index(tuple(doc_ids), tuple(tfs), tuple(lengths), avg, dict(df), k1, b)


def build_index(corpus: Iterable[tuple[str, str]], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot index an empty corpus")
    ids = [doc_id for doc_id, _ in corpus]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate document ids: {dupes}")
    tfs, lengths = [], []
    for _, text in corpus:
        tokens = tokenize(text)
        tfs.append(dict(Counter(tokens)))
        lengths.append(len(tokens))
    return _from_counts(ids, tfs, lengths, k1, b)


def retrieve(index: Bm25Index, query_text: str, k: int, exclude_id: Optional[str] = None) -> list[tuple[str, float]]:
    """Top-``k`` (id, score) pairs, best first, ties by ascending id."""
    if k < 0:
        raise ValueError("k must be >= 0")
    ranked = sorted(
        ((doc_id, s) for doc_id, s in zip(index.doc_ids, index.scores(query_text)) if doc_id != exclude_id),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:k]


@dataclass(frozen=True)
class Shot:
    pair_id: str
    post_text: str
    image_refs: tuple[str, ...]
    gold_claim: str
    score: float


@dataclass(frozen=True)
class ShotSet:
    shots: tuple[Shot, ...] = ()
    total_images: int = 0
    dropped: tuple[str, ...] = field(default=())

    @property
    def ids(self) -> list[str]:
        return [s.pair_id for s in self.shots]


def select_shots(index: Bm25Index, query: PostClaimPair, pool: Mapping[str, PostClaimPair], k: int = 5,
                 image_budget: Optional[int] = 30) -> ShotSet:
    """Leave-one-out top-``k`` demonstrations that fit the image budget.

    Shots are dropped from the tail of the ranking until demonstration
    images plus the query's own images fit; ``image_budget=None`` disables
    the cap.
    """
    ranked = retrieve(index, query.post_text, k, exclude_id=query.id)
    shots = [
        Shot(doc_id, pool[doc_id].post_text, pool[doc_id].image_refs, pool[doc_id].gold_claim, score)
        for doc_id, score in ranked
    ]
    dropped = []
    if image_budget is not None:
        own = len(query.image_refs)
        while shots and own + sum(len(s.image_refs) for s in shots) > image_budget:
            dropped.append(shots.pop().pair_id)
    total = sum(len(s.image_refs) for s in shots)
    return ShotSet(tuple(shots), total, tuple(reversed(dropped)))


def index_pairs(pairs: Sequence[PostClaimPair], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    return build_index(((p.id, p.post_text) for p in pairs), k1, b)
