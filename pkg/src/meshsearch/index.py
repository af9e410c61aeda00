"""Dynamic inverted index over geometric word bags.

Words form a dynamically defined sparse basis: models and words can be
inserted and removed without disturbing the rest of the index.  Besides
the posting lists the index keeps the forward bags (needed for scoring,
audits and word splitting), document frequencies, the generic-word
exclusion set, and the synonym-split registry.

Concurrency contract: many concurrent readers or one writer.  All public
operations take the appropriate side of a reader-writer lock, so readers
always observe a fully applied state.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .words import WordBag, WordConfig, features_from_rows, is_local, quantize_local

MAGIC = b"GW3DIDX\0"
FORMAT_VERSION = 1


class IndexStoreError(Exception):
    """Base for index errors; .code is the machine-readable error code."""

    code = "index-error"


class DuplicateModelError(IndexStoreError):
    code = "duplicate-model"


class UnknownModelError(IndexStoreError):
    code = "unknown-model"


class WordNotFoundError(IndexStoreError):
    code = "unknown-word"


class NotSplittableError(IndexStoreError):
    code = "not-splittable"


class IndexFormatError(IndexStoreError):
    """Persistence failure; code is one of bad-magic / version / checksum."""

    def __init__(self, message: str, code: str):
        super().__init__(message)
        self.code = code


class _RWLock:
    """Reader-writer lock: many readers or a single writer."""

    def __init__(self):
        self._gate = threading.Lock()
        self._writer = threading.Lock()
        self._readers = 0

    @contextmanager
    def reading(self):
        with self._gate:
            self._readers += 1
            if self._readers == 1:
                self._writer.acquire()
        try:
            yield
        finally:
            with self._gate:
                self._readers -= 1
                if self._readers == 0:
                    self._writer.release()

    @contextmanager
    def writing(self):
        with self._writer:
            yield


@dataclass
class PostingList:
    word: int
    entries: dict[str, int] = field(default_factory=dict)  # model id -> count

    @property
    def df(self) -> int:
        return len(self.entries)


class IdfWeighting:
    """Per-word weight w = ln(1 + N/df); excluded (generic) words weigh 0.

    Words never seen by the index (df = 0) take df = 1, the weight of a
    maximally rare word, so unmatched query words still count against
    containment instead of dividing by zero.  df is looked up lazily
    against the posting lists captured at snapshot time (reads are valid
    under the reader side of the index lock contract).
    """

    def __init__(self, n_models: int, postings: dict[int, PostingList], generic: frozenset[int]):
        self.n_models = n_models
        self._postings = postings
        self._generic = generic
        self._memo: dict[int, float] = {}

    def __call__(self, word: int) -> float:
        weight = self._memo.get(word)
        if weight is None:
            if word in self._generic or self.n_models == 0:
                weight = 0.0
            else:
                posting = self._postings.get(word)
                df = len(posting.entries) if posting is not None else 0
                weight = math.log(1.0 + self.n_models / max(df, 1))
            self._memo[word] = weight
        return weight


def weighted_norm(counts, weights: IdfWeighting) -> float:
    """Euclidean norm of a weighted count vector, in bag iteration order."""
    acc = 0.0
    for word, count in counts.items():
        w = weights(word)
        if w:
            acc += (count * w) ** 2
    return math.sqrt(acc)


class InvertedIndex:
    def __init__(self, config: WordConfig | None = None):
        self.config = config or WordConfig()
        self.postings: dict[int, PostingList] = {}
        self.forward: dict[str, WordBag] = {}
        self.generic: set[int] = set()
        self.splits: set[int] = set()
        self._lock = _RWLock()
        # norm memo, valid for one mutation epoch (see norm_of)
        self._epoch = 0
        self._norms: dict[str, float] = {}

    def _bump_epoch(self) -> None:
        self._epoch += 1
        self._norms = {}

    # -- basic state ---------------------------------------------------

    def reading(self):
        """Reader-side lock for multi-call query snapshots (re-entrant
        for readers: nested read sections only bump the reader count)."""
        return self._lock.reading()

    @property
    def n_models(self) -> int:
        return len(self.forward)

    def __contains__(self, model_id: str) -> bool:
        return model_id in self.forward

    def df(self, word: int) -> int:
        posting = self.postings.get(word)
        return posting.df if posting else 0

    def bag_of(self, model_id: str) -> WordBag:
        try:
            return self.forward[model_id]
        except KeyError:
            raise UnknownModelError(f"model {model_id!r} is not indexed")

    def weights(self) -> IdfWeighting:
        """Snapshot of the IDF weighting at the current index state."""
        with self._lock.reading():
            return IdfWeighting(self.n_models, self.postings, frozenset(self.generic))

    def norm_of(self, model_id: str, weights: IdfWeighting) -> float:
        """Weighted norm of a model's bag, memoized until the next mutation.

        The weighting is a pure function of index state, so within one
        mutation epoch every snapshot yields the same norms and the memo is
        shared; mutations clear it.  Values are identical to calling
        weighted_norm directly (the memo is a cache, not a precomputation
        with its own arithmetic).
        """
        norm = self._norms.get(model_id)
        if norm is None:
            norm = weighted_norm(self.bag_of(model_id).counts, weights)
            self._norms[model_id] = norm
        return norm

    # -- mutation ------------------------------------------------------

    def insert(self, bag: WordBag) -> None:
        if bag.model_id is None:
            raise ValueError("bag has no model id")
        if not bag.counts:
            raise ValueError("refusing to index an empty bag")
        with self._lock.writing():
            if bag.model_id in self.forward:
                raise DuplicateModelError(
                    f"model {bag.model_id!r} already indexed; remove it first"
                )
            self.forward[bag.model_id] = bag
            for word, count in bag.counts.items():
                self.postings.setdefault(word, PostingList(word)).entries[bag.model_id] = count
            self._bump_epoch()

    def remove(self, model_id: str) -> None:
        """Drop every reference to the model (the takedown guarantee)."""
        with self._lock.writing():
            bag = self.forward.pop(model_id, None)
            if bag is None:
                raise UnknownModelError(f"model {model_id!r} is not indexed")
            for word in bag.counts:
                posting = self.postings.get(word)
                if posting is not None:
                    posting.entries.pop(model_id, None)
                    if not posting.entries:
                        del self.postings[word]
            self._bump_epoch()

    def mark_generic(self, df_ratio_threshold: float = 0.25) -> set[int]:
        """Exclude words whose df/N exceeds the threshold from matching."""
        if not 0 < df_ratio_threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")
        with self._lock.writing():
            if self.n_models == 0:
                raise ValueError("cannot mark generic words on an empty index")
            marked = {
                w for w, p in self.postings.items() if p.df / self.n_models > df_ratio_threshold
            }
            self.generic |= marked
            self._bump_epoch()
            return marked

    def split_generic_word(self, word: int) -> list[int]:
        """Refine a local word into finer-binned synonyms.

        Re-derives every occurrence of the word from the stored per-model
        features at refinement level + 1 (quality and dihedral bins doubled
        for that bin subtree), rewrites forward bags and postings, and
        records the split so future quantization (corpus and queries alike)
        applies the same refinement.
        """
        with self._lock.writing():
            posting = self.postings.get(word)
            if posting is None:
                raise WordNotFoundError(f"word {word:#x} is not in the index")
            if not is_local(word):
                raise NotSplittableError("only local words can be split into synonyms")
            affected = list(posting.entries)
            new_splits = set(self.splits)
            new_splits.add(word)
            synonyms: set[int] = set()
            for model_id in affected:
                bag = self.forward[model_id]
                if bag.features is None:
                    raise NotSplittableError(
                        f"model {model_id!r} carries no raw features; cannot re-derive words"
                    )
                old_local = bag.local_counts()
                new_local: dict[int, int] = {}
                for feat in features_from_rows(bag.features):
                    for w in quantize_local(feat, self.config, new_splits):
                        new_local[w.id] = new_local.get(w.id, 0) + 1
                for w in set(old_local) | set(new_local):
                    before, after = old_local.get(w, 0), new_local.get(w, 0)
                    if before == after:
                        continue
                    if before:
                        del bag.counts[w]
                        self.postings[w].entries.pop(model_id, None)
                        if not self.postings[w].entries:
                            del self.postings[w]
                    if after:
                        bag.counts[w] = after
                        self.postings.setdefault(w, PostingList(w)).entries[model_id] = after
                        if w not in old_local:
                            synonyms.add(w)
                bag.counts = dict(sorted(bag.counts.items()))
            self.splits.add(word)
            self._bump_epoch()
            return sorted(synonyms)

    # -- queries -------------------------------------------------------

    def candidates(self, bag: WordBag) -> set[str]:
        """Models sharing at least one non-generic word with the query.

        A union over posting lists: scan order (or parallel schedule) makes
        no difference to the result set.
        """
        with self._lock.reading():
            out: set[str] = set()
            for word in bag.counts:
                if word in self.generic:
                    continue
                posting = self.postings.get(word)
                if posting is not None:
                    out.update(posting.entries)
            return out

    def audit(self) -> list[str]:
        """Full-scan consistency check between forward and inverted stores."""
        problems: list[str] = []
        with self._lock.reading():
            rebuilt: dict[int, dict[str, int]] = {}
            for model_id, bag in self.forward.items():
                for word, count in bag.counts.items():
                    rebuilt.setdefault(word, {})[model_id] = count
            live = {w: dict(p.entries) for w, p in self.postings.items()}
            for word in set(rebuilt) | set(live):
                if rebuilt.get(word) != live.get(word):
                    problems.append(f"posting mismatch for word {word:#x}")
        return problems

    def stats_dump(self) -> str:
        """Line-oriented index statistics for the analysis tooling."""
        with self._lock.reading():
            lines = [f"models {self.n_models}", f"words {len(self.postings)}"]
            hist: dict[int, int] = {}
            for p in self.postings.values():
                hist[p.df] = hist.get(p.df, 0) + 1
            for df in sorted(hist):
                lines.append(f"df {df} {hist[df]}")
            lines.append(f"generic {len(self.generic)}")
            for w in sorted(self.generic):
                lines.append(f"generic-word {w:016x}")
            return "\n".join(lines) + "\n"

    def __eq__(self, other) -> bool:
        if not isinstance(other, InvertedIndex):
            return NotImplemented
        return (
            self.config == other.config
            and self.forward == other.forward
            and {w: p.entries for w, p in self.postings.items()}
            == {w: p.entries for w, p in other.postings.items()}
            and self.generic == other.generic
            and self.splits == other.splits
        )

    # -- persistence ---------------------------------------------------

    def save(self, path) -> None:
        with self._lock.reading():
            blob = self._serialize()
        with open(path, "wb") as fh:
            fh.write(blob)

    def _serialize(self) -> bytes:
        out = bytearray()
        out += MAGIC
        out += struct.pack("<I", FORMAT_VERSION)

        config_json = self.config.to_json().encode("utf-8")
        out += struct.pack("<I", len(config_json))
        out += config_json

        model_ids = sorted(self.forward)
        model_pos = {m: i for i, m in enumerate(model_ids)}
        out += struct.pack("<I", len(model_ids))
        for model_id in model_ids:
            bag = self.forward[model_id]
            mid = model_id.encode("utf-8")
            out += struct.pack("<H", len(mid))
            out += mid
            flags = (1 if bag.had_degenerates else 0) | (2 if bag.had_boundary else 0)
            out += struct.pack("<BI", flags, bag.total_local)
            out += struct.pack("<I", len(bag.counts))
            for word in sorted(bag.counts):
                out += struct.pack("<QI", word, bag.counts[word])
            if bag.features is None:
                out += struct.pack("<BI", 0, 0)
            else:
                rows = np.ascontiguousarray(bag.features, dtype="<f8")
                out += struct.pack("<BI", 1, rows.shape[0])
                out += rows.tobytes()

        out += struct.pack("<I", len(self.postings))
        for word in sorted(self.postings):
            entries = self.postings[word].entries
            out += struct.pack("<QI", word, len(entries))
            for model_id in sorted(entries):
                out += struct.pack("<II", model_pos[model_id], entries[model_id])

        for group in (self.generic, self.splits):
            out += struct.pack("<I", len(group))
            for word in sorted(group):
                out += struct.pack("<Q", word)

        out += hashlib.sha256(bytes(out)).digest()
        return bytes(out)

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < len(MAGIC) + 4 + 32 or blob[: len(MAGIC)] != MAGIC:
            raise IndexFormatError("not an index file (bad magic)", code="bad-magic")
        (version,) = struct.unpack_from("<I", blob, len(MAGIC))
        if version != FORMAT_VERSION:
            raise IndexFormatError(
                f"unsupported index format version {version}", code="version"
            )
        body, checksum = blob[:-32], blob[-32:]
        if hashlib.sha256(body).digest() != checksum:
            raise IndexFormatError("index file failed checksum", code="checksum")

        pos = len(MAGIC) + 4
        (clen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        config = WordConfig.from_json(blob[pos : pos + clen].decode("utf-8"))
        pos += clen
        idx = cls(config)

        (n_models,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        model_ids: list[str] = []
        for _ in range(n_models):
            (mlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            model_id = blob[pos : pos + mlen].decode("utf-8")
            pos += mlen
            flags, total_local = struct.unpack_from("<BI", blob, pos)
            pos += 5
            (n_words,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            counts: dict[int, int] = {}
            for _ in range(n_words):
                word, count = struct.unpack_from("<QI", blob, pos)
                pos += 12
                counts[word] = count
            has_feats, n_rows = struct.unpack_from("<BI", blob, pos)
            pos += 5
            features = None
            if has_feats:
                nbytes = n_rows * 5 * 8
                features = np.frombuffer(blob, dtype="<f8", count=n_rows * 5, offset=pos)
                features = features.reshape(n_rows, 5).copy()
                pos += nbytes
            idx.forward[model_id] = WordBag(
                counts=counts,
                total_local=total_local,
                had_degenerates=bool(flags & 1),
                had_boundary=bool(flags & 2),
                model_id=model_id,
                features=features,
            )
            model_ids.append(model_id)

        (n_postings,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        for _ in range(n_postings):
            word, n_entries = struct.unpack_from("<QI", blob, pos)
            pos += 12
            posting = PostingList(word)
            for _ in range(n_entries):
                mpos, count = struct.unpack_from("<II", blob, pos)
                pos += 8
                posting.entries[model_ids[mpos]] = count
            idx.postings[word] = posting

        for group in (idx.generic, idx.splits):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            for _ in range(n):
                (word,) = struct.unpack_from("<Q", blob, pos)
                pos += 8
                group.add(word)
        return idx

    def to_json_state(self) -> str:
        """Debug/export projection of the index state (not the save format)."""
        state = {
            "n_models": self.n_models,
            "n_words": len(self.postings),
            "generic": sorted(self.generic),
            "splits": sorted(self.splits),
        }
        return json.dumps(state, sort_keys=True)
