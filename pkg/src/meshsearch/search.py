"""Scoring and ranking for the three search modes.

Similarity (3DSS) is IDF-weighted cosine over whole bags; part-in-part
containment is the weighted min/sum ratio over local words, which is
exactly 1 when the weighted query bag is a sub-multiset of the target's;
text search is token matching over catalog metadata.  A brute-force
scorer over raw bags provides the oracle the index path is tested
against.  All ranking is deterministic: score descending, model id
ascending on ties.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol

from .index import IdfWeighting, InvertedIndex, weighted_norm
from .words import WordBag, is_local


class QueryTooGenericError(ValueError):
    """Every query word is excluded from matching; containment is undefined."""


class EmptyQueryError(ValueError):
    """Geometric query with an empty bag."""


@dataclass(frozen=True)
class SearchFilters:
    """Tri-state result filters; None imposes no constraint."""

    watertight: bool | None = None
    consistent_normals: bool | None = None
    filetype: str | None = None
    source: str | None = None

    def is_empty(self) -> bool:
        return all(v is None for v in (self.watertight, self.consistent_normals, self.filetype, self.source))


@dataclass(frozen=True)
class SearchQuery:
    mode: str  # similar | pip | text
    bag: WordBag | None = None
    text: str | None = None
    k: int = 10
    filters: SearchFilters = field(default_factory=SearchFilters)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mode not in ("similar", "pip", "text"):
            raise ValueError(f"unknown search mode {self.mode!r}")


@dataclass(frozen=True)
class MatchedWord:
    word: int
    query_count: int
    target_count: int
    weight: float


@dataclass(frozen=True)
class SearchResult:
    model_id: str
    score: float
    matched: tuple[MatchedWord, ...] = ()
    provenance: str = "internal"


class CatalogView(Protocol):
    """What search needs from a catalog: stats and metadata lookups."""

    def search_view(self, model_id: str) -> tuple[dict, str] | None: ...


# ---------------------------------------------------------------------------
# Scorers


def score_similarity(
    query: Mapping[int, int],
    target: Mapping[int, int],
    weights: IdfWeighting,
    query_norm: float | None = None,
    target_norm: float | None = None,
) -> float:
    """Cosine similarity over IDF-weighted word counts, clamped to [0, 1].

    Bags iterate in ascending word order (a WordBag invariant), so the
    shared-word sum below runs in the same order for (q, t) and (t, q):
    the score is exactly symmetric, and iterating the smaller bag is just
    an optimization.  Callers may pass norms they already hold (they must
    equal weighted_norm of the same bag under the same weights).
    """
    small, large = (query, target) if len(query) <= len(target) else (target, query)
    dot = 0.0
    for word, count in small.items():
        other = large.get(word)
        if other is None:
            continue
        w = weights(word)
        if w == 0.0:
            continue
        dot += (count * w) * (other * w)
    if dot == 0.0:
        return 0.0
    qn = weighted_norm(query, weights) if query_norm is None else query_norm
    tn = weighted_norm(target, weights) if target_norm is None else target_norm
    if qn == 0.0 or tn == 0.0:
        return 0.0
    return min(dot / (qn * tn), 1.0)


def score_containment(query: Mapping[int, int], target: Mapping[int, int], weights: IdfWeighting) -> float:
    """Weighted fraction of the query bag covered by the target.

    Only local words participate.  Equals exactly 1.0 when every local
    query word is matched at full count (numerator and denominator are the
    same float sum), and 0.0 for disjoint bags.
    """
    num = 0.0
    den = 0.0
    for word, q in query.items():
        if not is_local(word):
            continue
        w = weights(word)
        if w == 0.0:
            continue
        den += w * q
        t = target.get(word, 0)
        num += w * min(q, t)
    if den == 0.0:
        raise QueryTooGenericError("all query words are excluded from matching")
    return num / den


def _matched_words(
    query: Mapping[int, int], target: Mapping[int, int], weights: IdfWeighting, local_only: bool
) -> tuple[MatchedWord, ...]:
    out = []
    for word, count in query.items():
        if word not in target or (local_only and not is_local(word)):
            continue
        w = weights(word)
        if w == 0.0:
            continue
        out.append(MatchedWord(word, count, target[word], w))
    return tuple(out)


# ---------------------------------------------------------------------------
# Ranked retrieval


def _rank(scored: list[SearchResult], k: int) -> list[SearchResult]:
    scored.sort(key=lambda r: (-r.score, r.model_id))
    return scored[:k]


def run_geometric_query(
    index: InvertedIndex,
    catalog: CatalogView | None,
    query: SearchQuery,
) -> list[SearchResult]:
    """Candidate generation + scoring + filtering for similar / pip modes.

    Candidates come from the union of the query words' posting lists;
    zero-scoring models never appear.  Per-candidate scoring is pure and
    order-independent, so any evaluation schedule yields the same list.
    """
    if query.bag is None or not query.bag.counts:
        raise EmptyQueryError("geometric query requires a non-empty bag")
    weights = index.weights()
    qcounts = query.bag.counts
    if query.mode == "pip":
        qcounts = {w: c for w, c in qcounts.items() if is_local(w)}
        if not qcounts:
            raise EmptyQueryError("pip query has no local words")
        if all(weights(w) == 0.0 for w in qcounts):
            raise QueryTooGenericError("all query words are excluded from matching")

    results: list[SearchResult] = []
    query_norm = weighted_norm(qcounts, weights) if query.mode == "similar" else None
    with index.reading():  # one consistent snapshot for the whole scan
        for model_id in index.candidates(query.bag):
            bag = index.bag_of(model_id)
            if query.mode == "similar":
                score = score_similarity(
                    qcounts, bag.counts, weights,
                    query_norm=query_norm, target_norm=index.norm_of(model_id, weights),
                )
            else:
                score = score_containment(qcounts, bag.counts, weights)
            if score <= 0.0:
                continue
            provenance = "internal"
            if catalog is not None:
                view = catalog.search_view(model_id)
                if view is None:
                    continue
                stats, provenance = view
                if not _passes_filters(stats, query.filters):
                    continue
            results.append(SearchResult(model_id=model_id, score=score, provenance=provenance))
        ranked = _rank(results, query.k)
        # the per-word breakdown is only worth building for the survivors
        return [
            SearchResult(
                model_id=r.model_id,
                score=r.score,
                matched=_matched_words(qcounts, index.bag_of(r.model_id).counts, weights, query.mode == "pip"),
                provenance=r.provenance,
            )
            for r in ranked
        ]


def query_similar(index: InvertedIndex, catalog: CatalogView | None, bag: WordBag, k: int = 10, filters: SearchFilters = SearchFilters()) -> list[SearchResult]:
    return run_geometric_query(index, catalog, SearchQuery(mode="similar", bag=bag, k=k, filters=filters))


def query_pip(index: InvertedIndex, catalog: CatalogView | None, bag: WordBag, k: int = 10, filters: SearchFilters = SearchFilters()) -> list[SearchResult]:
    return run_geometric_query(index, catalog, SearchQuery(mode="pip", bag=bag, k=k, filters=filters))


def _passes_filters(stats: dict, filters: SearchFilters) -> bool:
    if filters.watertight is not None and stats.get("watertight") != filters.watertight:
        return False
    if filters.consistent_normals is not None and stats.get("consistent_normals") != filters.consistent_normals:
        return False
    if filters.filetype is not None and stats.get("filetype") != filters.filetype:
        return False
    if filters.source is not None and filters.source not in stats.get("sources", ()):
        return False
    return True


def tokenize(text: str) -> list[str]:
    out, current = [], []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            out.append("".join(current))
            current = []
    if current:
        out.append("".join(current))
    return out


def text_search(catalog, query: str, k: int = 10, filters: SearchFilters = SearchFilters()) -> list[SearchResult]:
    """Case-insensitive token match over name / description / tags.

    Score is the fraction of query tokens present in the record's text;
    taken-down models never appear.
    """
    tokens = tokenize(query)
    if not tokens:
        return []
    results: list[SearchResult] = []
    for model_id, text_blob, stats, provenance in catalog.text_views():
        doc_tokens = set(tokenize(text_blob))
        hits = sum(1 for t in tokens if t in doc_tokens)
        if hits == 0:
            continue
        if not _passes_filters(stats, filters):
            continue
        results.append(SearchResult(model_id=model_id, score=hits / len(tokens), provenance=provenance))
    return _rank(results, k)


# ---------------------------------------------------------------------------
# Oracle


def brute_force_topk(
    corpus: Mapping[str, WordBag] | Iterable[WordBag],
    query: WordBag,
    mode: str,
    k: int,
    weights: IdfWeighting,
) -> list[SearchResult]:
    """Exhaustive scoring with the same scorers; the index-path oracle.

    Shares every arithmetic step with the index path, so ids, order, and
    scores must match it exactly on any corpus.
    """
    if isinstance(corpus, Mapping):
        items = corpus.items()
    else:
        items = [(bag.model_id, bag) for bag in corpus]
    qcounts = query.counts
    if mode == "pip":
        qcounts = {w: c for w, c in qcounts.items() if is_local(w)}
        if not qcounts:
            raise EmptyQueryError("pip query has no local words")
        if all(weights(w) == 0.0 for w in qcounts):
            raise QueryTooGenericError("all query words are excluded from matching")
    results: list[SearchResult] = []
    for model_id, bag in items:
        if mode == "similar":
            score = score_similarity(qcounts, bag.counts, weights)
        elif mode == "pip":
            score = score_containment(qcounts, bag.counts, weights)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        if score <= 0.0:
            continue
        results.append(
            SearchResult(
                model_id=model_id,
                score=score,
                matched=_matched_words(qcounts, bag.counts, weights, mode == "pip"),
            )
        )
    return _rank(results, k)
