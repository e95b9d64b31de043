"""Tool backends: lexical web document index, mock KG store, reference assembly.

The web index scores documents and chunks with a tf-idf-weighted cosine over
lowercased, punctuation-stripped whitespace tokens. Scoring is deliberately
deterministic so that result-equivalence checks (same top-k documents, same
KG answer) can be verified exactly. The embedding re-ranker this stands in
for can be swapped in behind the same functions.

The inner scoring loop runs on a compiled kernel when the extension built,
with a pure-Python fallback selected at import; set STREAMRAG_PURE_PYTHON=1
to force the fallback.
"""

from __future__ import annotations

import math
import os
import string
from array import array
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from ..core import KgQuery, Tool, ToolQuery
from ..errors import DuplicateDocIdError, InputError, WrongToolError

if os.environ.get("STREAMRAG_PURE_PYTHON"):
    from . import _kernel as _kernel_impl
else:
    try:
        from . import _kernel_cy as _kernel_impl  # type: ignore[no-redef]
    except ImportError:
        from . import _kernel as _kernel_impl  # type: ignore[no-redef]

KERNEL_BACKEND: str = _kernel_impl.BACKEND

_PUNCT_TO_SPACE = str.maketrans({c: " " for c in string.punctuation})


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation to spaces, split on whitespace."""
    return text.lower().translate(_PUNCT_TO_SPACE).split()


def count_tokens(text: str) -> int:
    """Reference-budget unit: whitespace-delimited words."""
    return len(text.split())


def truncate_tokens(text: str, limit: int) -> str:
    return " ".join(text.split()[:limit])


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    offset: int  # token offset of the chunk within its document
    text: str
    score: float


@dataclass(frozen=True)
class WebResult:
    """Ranked documents (and, after reranking, chunks) for one web query."""

    query_text: str
    ranked_doc_ids: tuple[str, ...]
    doc_scores: tuple[float, ...]
    ranked_chunks: tuple[Chunk, ...] = ()


class DocIndex:
    """Immutable lexical index over a document corpus.

    Stores per-term document frequencies and idf-weighted document vectors
    in CSR layout for the scoring kernel. Rebuilding from the same corpus
    yields the same index; all lookups are pure.
    """

    def __init__(self, docs: Sequence[tuple[str, str]]) -> None:
        if not docs:
            raise InputError("cannot index an empty corpus")
        seen: set[str] = set()
        for doc_id, _ in docs:
            if doc_id in seen:
                raise DuplicateDocIdError(f"duplicate doc_id {doc_id!r}")
            seen.add(doc_id)

        self.doc_ids: list[str] = [doc_id for doc_id, _ in docs]
        self._texts: dict[str, str] = {doc_id: text for doc_id, text in docs}
        n_docs = len(docs)

        vocab: dict[str, int] = {}
        doc_term_counts: list[dict[int, int]] = []
        df_acc: dict[int, int] = {}
        for _, text in docs:
            counts: dict[int, int] = {}
            for token in tokenize(text):
                tid = vocab.setdefault(token, len(vocab))
                counts[tid] = counts.get(tid, 0) + 1
            doc_term_counts.append(counts)
            for tid in counts:
                df_acc[tid] = df_acc.get(tid, 0) + 1

        self.vocab = vocab
        self.n_docs = n_docs
        self.df = array("i", (df_acc.get(t, 0) for t in range(len(vocab))))
        self.idf = array("d", (self._idf_value(self.df[t]) for t in range(len(vocab))))
        self._default_idf = self._idf_value(0)

        offsets = array("l", [0])
        tids = array("i")
        weights = array("d")
        norms = array("d")
        for counts in doc_term_counts:
            sq = 0.0
            for tid in sorted(counts):
                w = counts[tid] * self.idf[tid]
                tids.append(tid)
                weights.append(w)
                sq += w * w
            offsets.append(len(tids))
            norms.append(math.sqrt(sq))
        self._offsets = offsets
        self._tids = tids
        self._weights = weights
        self._norms = norms

    def _idf_value(self, df: int) -> float:
        return math.log((1.0 + self.n_docs) / (1.0 + df)) + 1.0

    def doc_text(self, doc_id: str) -> str:
        return self._texts[doc_id]

    def _query_vector(self, query_text: str) -> tuple[array, float]:
        counts: dict[str, int] = {}
        for token in tokenize(query_text):
            counts[token] = counts.get(token, 0) + 1
        qvec = array("d", bytes(8 * len(self.vocab)))
        sq = 0.0
        for token in sorted(counts):
            tf = counts[token]
            tid = self.vocab.get(token)
            idf = self.idf[tid] if tid is not None else self._default_idf
            w = tf * idf
            sq += w * w
            if tid is not None:
                qvec[tid] = w
        return qvec, math.sqrt(sq)

    def score_all(self, query_text: str) -> array:
        """Cosine score of every indexed document against the query."""
        qvec, qnorm = self._query_vector(query_text)
        if qnorm == 0.0:
            return array("d", bytes(8 * self.n_docs))
        return _kernel_impl.score_many(
            self._offsets, self._tids, self._weights, self._norms, qvec, qnorm
        )

    def score_texts(self, query_text: str, texts: Sequence[str]) -> array:
        """Score arbitrary texts (e.g. chunks) against the query with index idf."""
        qvec, qnorm = self._query_vector(query_text)
        offsets = array("l", [0])
        tids = array("i")
        weights = array("d")
        norms = array("d")
        for text in texts:
            counts: dict[int, int] = {}
            oov_sq = 0.0
            for token in tokenize(text):
                tid = self.vocab.get(token)
                if tid is None:
                    oov_sq += self._default_idf * self._default_idf
                else:
                    counts[tid] = counts.get(tid, 0) + 1
            sq = oov_sq
            for tid in sorted(counts):
                w = counts[tid] * self.idf[tid]
                tids.append(tid)
                weights.append(w)
                sq += w * w
            offsets.append(len(tids))
            norms.append(math.sqrt(sq))
        if qnorm == 0.0:
            return array("d", bytes(8 * len(texts)))
        return _kernel_impl.score_many(offsets, tids, weights, norms, qvec, qnorm)


def index_documents(corpus: Iterable[dict]) -> DocIndex:
    """Build a DocIndex from {doc_id, text} records."""
    docs = []
    for record in corpus:
        try:
            docs.append((str(record["doc_id"]), str(record["text"])))
        except (KeyError, TypeError) as exc:
            raise InputError(f"corpus record must have doc_id and text: {record!r}") from exc
    return DocIndex(docs)


def web_search(index: DocIndex, query: ToolQuery, k: int) -> WebResult:
    """Rank the whole corpus for a web query and keep the top k documents.

    Zero-overlap queries still return k documents (all scored 0, ordered by
    doc_id). Kg or NO_QUERY inputs are a caller bug.
    """
    if query.tool is not Tool.WEB:
        raise WrongToolError(f"web_search needs a web query, got {query.tool}")
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = index.score_all(query.web_text)
    order = sorted(range(index.n_docs), key=lambda d: (-scores[d], index.doc_ids[d]))
    top = order[: min(k, index.n_docs)]
    return WebResult(
        query_text=query.web_text,
        ranked_doc_ids=tuple(index.doc_ids[d] for d in top),
        doc_scores=tuple(scores[d] for d in top),
    )


def chunk_and_rerank(
    index: DocIndex, result: WebResult, query_text: str, chunk_tokens: int
) -> WebResult:
    """Split ranked documents into fixed-size token chunks and rank the chunks.

    Chunks are contiguous runs of at most chunk_tokens whitespace tokens,
    scored against query_text by the index scorer; ties break by doc_id then
    chunk offset, so the ranking does not depend on document rank order.
    """
    if chunk_tokens < 1:
        raise ValueError("chunk_tokens must be >= 1")
    pieces: list[tuple[str, int, str]] = []
    for doc_id in result.ranked_doc_ids:
        tokens = index.doc_text(doc_id).split()
        for offset in range(0, len(tokens), chunk_tokens):
            pieces.append((doc_id, offset, " ".join(tokens[offset : offset + chunk_tokens])))
    scores = index.score_texts(query_text, [text for _, _, text in pieces])
    ranked = sorted(
        (Chunk(doc_id, offset, text, scores[i]) for i, (doc_id, offset, text) in enumerate(pieces)),
        key=lambda c: (-c.score, c.doc_id, c.offset),
    )
    return replace(result, ranked_chunks=tuple(ranked))


class KgStore:
    """Exact-match mock KG: canonicalized structured query -> answer string."""

    def __init__(self, entries: Iterable[tuple[KgQuery, str]] = ()) -> None:
        self._entries: dict[tuple, str] = {}
        for query, answer in entries:
            self._entries[query.canonical_key()] = answer

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, query: KgQuery) -> str | None:
        return self._entries.get(query.canonical_key())

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "KgStore":
        entries = []
        for record in records:
            try:
                entries.append((KgQuery.from_flat_dict(record["query"]), str(record["answer"])))
            except (KeyError, TypeError) as exc:
                raise InputError(f"kg record must have query and answer: {record!r}") from exc
        return cls(entries)


def kg_lookup(store: KgStore, query: ToolQuery) -> str | None:
    """Exact-match lookup after canonicalization; a miss is None, not an error."""
    if query.tool is not Tool.KG:
        raise WrongToolError(f"kg_lookup needs a kg query, got {query.tool}")
    return store.lookup(query.kg_query)


@dataclass(frozen=True)
class ReferenceBundle:
    """Budgeted reference context: KG answers first, then web chunks in rank order."""

    web_chunks: tuple[str, ...]
    kg_answers: tuple[str, ...]
    total_tokens: int

    def to_canonical_text(self) -> str:
        """Stable serialization used for exact bundle comparisons."""
        lines = ["# kg"]
        lines.extend(self.kg_answers)
        lines.append("# web")
        lines.extend(self.web_chunks)
        return "\n".join(lines)


def assemble_references(
    web: WebResult | None,
    kg: str | None,
    budget_tokens: int,
    ratio: tuple[int, int],
) -> ReferenceBundle:
    """Fill the reference budget: KG share first (whole answers only), then
    web chunks in rank order, truncating at most the final chunk."""
    if budget_tokens < 0:
        raise ValueError("budget_tokens must be >= 0")
    web_share, kg_share = ratio
    denom = web_share + kg_share
    kg_budget = (budget_tokens * kg_share) // denom if denom else 0

    kg_answers: list[str] = []
    used = 0
    if kg is not None:
        n = count_tokens(kg)
        if n <= kg_budget:
            kg_answers.append(kg)
            used += n

    web_chunks: list[str] = []
    remaining = budget_tokens - used
    if web is not None:
        for chunk in web.ranked_chunks:
            if remaining <= 0:
                break
            n = count_tokens(chunk.text)
            if n <= remaining:
                web_chunks.append(chunk.text)
                remaining -= n
            else:
                web_chunks.append(truncate_tokens(chunk.text, remaining))
                remaining = 0
                break
    total = sum(count_tokens(t) for t in kg_answers) + sum(count_tokens(t) for t in web_chunks)
    return ReferenceBundle(tuple(web_chunks), tuple(kg_answers), total)


def top_doc_ids(index: DocIndex, query: ToolQuery, compare_k: int, retrieve_k: int) -> tuple[str, ...]:
    """The first compare_k doc ids of a retrieve_k-deep search."""
    return web_search(index, query, retrieve_k).ranked_doc_ids[:compare_k]


def top_docs_match(
    index: DocIndex,
    first: ToolQuery,
    second: ToolQuery,
    compare_k: int,
    retrieve_k: int,
    ordered: bool = True,
) -> bool:
    """Whether two web queries retrieve the same leading documents.

    Identical query text short-circuits to True. ``ordered`` picks list vs
    set comparison of the top compare_k ids.
    """
    if first.tool is not Tool.WEB or second.tool is not Tool.WEB:
        raise WrongToolError("top_docs_match compares web queries")
    if first.web_text == second.web_text:
        return True
    a = top_doc_ids(index, first, compare_k, retrieve_k)
    b = top_doc_ids(index, second, compare_k, retrieve_k)
    return a == b if ordered else set(a) == set(b)
