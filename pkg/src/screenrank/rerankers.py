"""Second-stage scorers behind one contract: score(query, documents).

Three interchangeable backends produce a :class:`RerankScoreSet`:

* :func:`bm25_scores` — Okapi BM25 over the review's own pool as the
  collection (idf and average document length are per-pool);
* :func:`remote_scores` — a cross-encoder service reached over HTTP;
* :func:`random_scores` — seeded uniform scores for ablations.

The ranking pipeline never needs to know which backend produced a score
set; ties inside a set break by ascending paper id so orderings are total.
"""

from __future__ import annotations

import hashlib
import math
import random
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import requests

from .corpus import PaperRecord, SlrSpec

QUERY_MODES = ("title_only", "title_plus_rq")

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


class RerankError(RuntimeError):
    """A scorer could not produce one score per document."""


@dataclass(frozen=True)
class RerankQuery:
    mode: str
    text: str

    def __post_init__(self) -> None:
        if self.mode not in QUERY_MODES:
            raise RerankError(f"unknown query mode {self.mode!r}")


@dataclass(frozen=True)
class RerankDocument:
    paper_id: str
    text: str


@dataclass(frozen=True)
class RerankScoreSet:
    """One score per submitted document, totally ordered via the id tie-break."""

    scores: dict[str, float]
    scorer_id: str

    def ordering(self) -> list[str]:
        return sorted(self.scores, key=lambda pid: (-self.scores[pid], pid))


def build_query(slr: SlrSpec, mode: str) -> RerankQuery:
    """Title-only query, or title followed by the research questions."""
    if mode == "title_only":
        return RerankQuery(mode=mode, text=slr.title)
    if mode == "title_plus_rq":
        if not slr.research_questions:
            raise RerankError(
                f"SLR {slr.slr_id!r} has no research questions; title_plus_rq unavailable"
            )
        return RerankQuery(mode=mode, text=" ".join([slr.title, *slr.research_questions]))
    raise RerankError(f"unknown query mode {mode!r}")


def pool_documents(pool: Sequence[PaperRecord]) -> list[RerankDocument]:
    """Title followed by abstract, one document per pool paper."""
    return [
        RerankDocument(paper_id=p.paper_id, text=f"{p.title} {p.abstract}") for p in pool
    ]


def tokenize(text: str) -> list[str]:
    """Lowercase Unicode-alphanumeric word splitting."""
    return _WORD_RE.findall(text.lower())


def bm25_scores(
    query: RerankQuery,
    documents: Sequence[RerankDocument],
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> RerankScoreSet:
    """Okapi BM25 with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).

    The submitted documents themselves are the collection, so document
    frequencies and the average length reflect the review's pool only.
    A query with no alphanumeric tokens scores every document 0.
    """
    if not documents:
        raise RerankError("bm25 requires a non-empty document list")
    doc_tokens = {doc.paper_id: Counter(tokenize(doc.text)) for doc in documents}
    doc_lengths = {pid: sum(counts.values()) for pid, counts in doc_tokens.items()}
    collection_size = len(documents)
    avg_length = sum(doc_lengths.values()) / collection_size

    query_terms = tokenize(query.text)
    df = {
        term: sum(1 for counts in doc_tokens.values() if term in counts)
        for term in set(query_terms)
    }
    idf = {
        term: math.log(1 + (collection_size - term_df + 0.5) / (term_df + 0.5))
        for term, term_df in df.items()
    }

    scores: dict[str, float] = {}
    for doc in documents:
        counts = doc_tokens[doc.paper_id]
        length = doc_lengths[doc.paper_id]
        total = 0.0
        for term in query_terms:
            tf = counts.get(term, 0)
            if tf == 0:
                continue
            norm = k1 * (1 - b + b * length / avg_length)
            total += idf[term] * tf * (k1 + 1) / (tf + norm)
        scores[doc.paper_id] = total
    return RerankScoreSet(scores=scores, scorer_id=f"bm25(k1={k1},b={b})")


@dataclass(frozen=True)
class RemoteRerankConfig:
    base_url: str
    request_timeout: float = 120.0
    batch_size: int = 64
    scorer_id: str = "remote"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise RerankError("batch_size must be >= 1")


def _score_batch(
    query_text: str,
    batch: Sequence[RerankDocument],
    config: RemoteRerankConfig,
    session: requests.Session,
) -> dict[str, float]:
    url = config.base_url.rstrip("/") + "/rerank"
    payload = {
        "query": query_text,
        "documents": [{"id": doc.paper_id, "text": doc.text} for doc in batch],
    }
    try:
        response = session.post(url, json=payload, timeout=config.request_timeout)
    except requests.RequestException as exc:
        raise RerankError(f"rerank request failed: {exc}") from exc
    if response.status_code != 200:
        raise RerankError(f"rerank endpoint returned HTTP {response.status_code}")
    try:
        entries = response.json()["scores"]
        scores = {entry["id"]: float(entry["score"]) for entry in entries}
    except (ValueError, KeyError, TypeError) as exc:
        raise RerankError(f"malformed rerank response: {exc}") from exc
    expected = {doc.paper_id for doc in batch}
    if set(scores) != expected or len(entries) != len(batch):
        raise RerankError(
            f"rerank score count mismatch: sent {len(batch)} documents, "
            f"got {len(entries)} scores"
        )
    if any(not math.isfinite(value) for value in scores.values()):
        raise RerankError("rerank response contains non-finite scores")
    return scores


def remote_scores(
    query: RerankQuery,
    documents: Sequence[RerankDocument],
    config: RemoteRerankConfig,
    session: requests.Session | None = None,
) -> RerankScoreSet:
    """Score all documents via the rerank service, batching transparently.

    A failed batch is retried with halved batch size down to single
    documents; a single-document failure is fatal.  Any tokenizer-level
    truncation happens on the service side.
    """
    if not documents:
        raise RerankError("remote scoring requires a non-empty document list")
    session = session or requests.Session()
    scores: dict[str, float] = {}
    stack: list[Sequence[RerankDocument]] = [
        documents[i : i + config.batch_size]
        for i in range(0, len(documents), config.batch_size)
    ][::-1]
    while stack:
        batch = stack.pop()
        try:
            scores.update(_score_batch(query.text, batch, config, session))
        except RerankError:
            if len(batch) == 1:
                raise
            middle = len(batch) // 2
            stack.append(batch[middle:])
            stack.append(batch[:middle])
    return RerankScoreSet(scores=scores, scorer_id=config.scorer_id)


def random_scores(documents: Sequence[RerankDocument], seed: int) -> RerankScoreSet:
    """Seeded uniform scores; identical seeds reproduce identical score maps."""
    rng = random.Random(seed)
    scores = {
        doc.paper_id: rng.random()
        for doc in sorted(documents, key=lambda d: d.paper_id)
    }
    return RerankScoreSet(scores=scores, scorer_id=f"random(seed={seed})")


def derive_seed(base_seed: int, salt: str) -> int:
    """Stable per-review seed so pools get independent random orders."""
    digest = hashlib.sha256(f"{base_seed}|{salt}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
