"""Model lifecycle: ingestion, provenance, dedup/merge, versions, takedown.

The catalog owns the inverted index and keeps the two mutually consistent:
every active record has exactly one bag in the index, taken-down records
have none.  Ingest is atomic -- all pipeline stages run against local
state first and the commit is rolled back on any failure, so observers
never see a partial record.  Storage is a local single-writer store; a
directory layout with the binary index, a line-oriented JSON record log,
and raw bytes per version.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__ as CONVERTER_VERSION
from .index import InvertedIndex
from .mesh import (
    MeshParseError,
    MeshStats,
    TriangleMesh,
    canonical_hash,
    compute_stats,
    detect_degenerate,
    parse_obj,
    parse_stl,
    weld_vertices,
)
from .search import score_similarity
from .words import WordBag, WordConfig, build_bag_welded

CATALOG_FORMAT = "meshsearch-catalog"
CATALOG_FORMAT_VERSION = 1

DEFAULT_RECRAWL_INTERVAL = 7 * 86400.0  # seconds
GEOMETRIC_DUP_THRESHOLD = 0.995

INTERNAL_UPLOAD = "internal-upload"


class CatalogError(Exception):
    code = "catalog-error"


class UnknownRecordError(CatalogError):
    code = "unknown-model"


class TakenDownError(CatalogError):
    code = "taken-down"


class NoChangeError(CatalogError):
    code = "no-change"


class StorageError(CatalogError):
    code = "storage-failure"


@dataclass(frozen=True)
class SourceRef:
    domain: str
    url: str = INTERNAL_UPLOAD


@dataclass
class ModelRecord:
    model_id: str
    name: str = ""
    description: str = ""
    tags: list[str] = field(default_factory=list)
    sources: list[SourceRef] = field(default_factory=list)
    original_format: str = "other"  # stl-binary | stl-ascii | obj | other(<label>)
    converter_version: str = CONVERTER_VERSION
    ingest_history: list[dict] = field(default_factory=list)
    content_hash: str = ""
    bag_id: str = ""  # id of the bag in the index; equals model_id
    stats: MeshStats | None = None
    state: str = "active"  # active | taken_down
    provenance: str = "internal"  # internal | external

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "name": self.name,
            "description": self.description,
            "tags": list(self.tags),
            "sources": [{"domain": s.domain, "url": s.url} for s in self.sources],
            "original_format": self.original_format,
            "converter_version": self.converter_version,
            "ingest_history": list(self.ingest_history),
            "content_hash": self.content_hash,
            "bag_id": self.bag_id,
            "stats": self.stats.to_dict() if self.stats else None,
            "state": self.state,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelRecord":
        return cls(
            model_id=d["model_id"],
            name=d["name"],
            description=d["description"],
            tags=list(d["tags"]),
            sources=[SourceRef(s["domain"], s["url"]) for s in d["sources"]],
            original_format=d["original_format"],
            converter_version=d["converter_version"],
            ingest_history=list(d["ingest_history"]),
            content_hash=d["content_hash"],
            bag_id=d["bag_id"],
            stats=MeshStats.from_dict(d["stats"]) if d["stats"] else None,
            state=d["state"],
            provenance=d["provenance"],
        )


@dataclass
class VersionEntry:
    number: int
    content_hash: str
    timestamp: float
    note: str = ""


@dataclass
class VersionChain:
    model_id: str
    versions: list[VersionEntry] = field(default_factory=list)

    def head(self) -> VersionEntry:
        return self.versions[-1]


@dataclass
class FreshnessRecord:
    domain: str
    last_ingest: float
    interval: float = DEFAULT_RECRAWL_INTERVAL

    def staleness(self, now: float) -> float:
        return now - self.last_ingest


@dataclass(frozen=True)
class IngestMeta:
    """Caller-supplied metadata accompanying uploaded bytes."""

    domain: str = "local"
    url: str = INTERNAL_UPLOAD
    name: str = ""
    description: str = ""
    tags: tuple[str, ...] = ()
    actor: str = "ingest"


class Catalog:
    def __init__(
        self,
        config: WordConfig | None = None,
        clock=time.time,
        dup_threshold: float = GEOMETRIC_DUP_THRESHOLD,
        default_recrawl_interval: float = DEFAULT_RECRAWL_INTERVAL,
    ):
        self.config = config or WordConfig()
        self.index = InvertedIndex(self.config)
        self.records: dict[str, ModelRecord] = {}
        self.chains: dict[str, VersionChain] = {}
        self.freshness: dict[str, FreshnessRecord] = {}
        self.blobs: dict[tuple[str, int], bytes] = {}
        self.clock = clock
        self.dup_threshold = dup_threshold
        self.default_recrawl_interval = default_recrawl_interval
        self._by_hash: dict[str, str] = {}  # content hash -> active model id
        self._next_id = 1
        self._write_lock = threading.Lock()

    # -- identity -------------------------------------------------------

    def _new_id(self) -> str:
        model_id = f"m-{self._next_id:06d}"
        self._next_id += 1
        return model_id

    def get_record(self, model_id: str, include_taken_down: bool = False) -> ModelRecord:
        record = self.records.get(model_id)
        if record is None:
            raise UnknownRecordError(f"no model {model_id!r}")
        if record.state == "taken_down" and not include_taken_down:
            raise TakenDownError(f"model {model_id!r} has been taken down")
        return record

    # -- pipeline stages (separate methods so tests can inject failures) --

    def _parse(self, data: bytes, format_hint: str | None) -> tuple[TriangleMesh, str]:
        if format_hint == "obj":
            return parse_obj(data), "obj"
        if format_hint in (None, "stl", "stl-binary", "stl-ascii"):
            try:
                mesh = parse_stl(data)
                fmt = "stl-ascii" if data[:5].lower() == b"solid" and _is_ascii_stl(data) else "stl-binary"
                return mesh, fmt
            except MeshParseError:
                if format_hint is None:
                    return parse_obj(data), "obj"
                raise
        # B-rep and other unmeshed formats arrive pre-converted; the label
        # survives in provenance only.
        raise MeshParseError(f"unsupported format hint {format_hint!r}")

    def _prepare(self, data: bytes, format_hint: str | None):
        mesh, fmt = self._parse(data, format_hint)
        welded, adjacency, report = weld_vertices(mesh, self.config.weld_epsilon)
        digest = canonical_hash(welded).hex
        flagged = detect_degenerate(welded, self.config.area_tol, self.config.quality_tol)
        degenerate = sorted(t for t, _ in flagged)
        stats = compute_stats(welded, adjacency, degenerate=degenerate)
        bag = build_bag_welded(
            welded, adjacency, stats, set(degenerate), self.config,
            frozenset(self.index.splits), dropped_in_weld=bool(report.dropped_triangles),
        )
        return fmt, digest, stats, bag

    def _commit_record(self, record: ModelRecord, chain: VersionChain, data: bytes) -> None:
        self.records[record.model_id] = record
        self.chains[record.model_id] = chain
        self.blobs[(record.model_id, chain.head().number)] = data
        self._by_hash[record.content_hash] = record.model_id

    # -- operations -------------------------------------------------------

    def ingest(self, data: bytes, format_hint: str | None = None, meta: IngestMeta = IngestMeta()) -> ModelRecord:
        """Full pipeline: parse, weld, stats, words, dedup, commit.

        Matching content (exact hash or geometric similarity above the dup
        threshold) merges into the existing record instead of creating a
        new one; re-ingesting identical bytes from an already-listed source
        is a strict no-op.
        """
        with self._write_lock:
            now = self.clock()
            fmt, digest, stats, bag = self._prepare(data, format_hint)
            dups = self.find_duplicates(digest, bag)
            if dups:
                target_id, kind = dups[0]
                record = self.records[target_id]
                source = SourceRef(meta.domain, meta.url)
                if source in record.sources:
                    return record  # already known from this source: strict no-op
                record.sources.append(source)
                record.ingest_history.append(
                    {"timestamp": now, "action": f"merged-duplicate-{kind}", "actor": meta.actor}
                )
                self._touch_freshness(meta.domain, now)
                return record

            model_id = self._new_id()
            bag.model_id = model_id
            record = ModelRecord(
                model_id=model_id,
                name=meta.name,
                description=meta.description,
                tags=list(meta.tags),
                sources=[SourceRef(meta.domain, meta.url)],
                original_format=fmt,
                ingest_history=[{"timestamp": now, "action": "ingest", "actor": meta.actor}],
                content_hash=digest,
                bag_id=model_id,
                stats=stats,
                provenance="internal" if meta.url == INTERNAL_UPLOAD else "external",
            )
            chain = VersionChain(model_id, [VersionEntry(1, digest, now, "initial ingest")])
            self.index.insert(bag)
            try:
                self._commit_record(record, chain, data)
                self._touch_freshness(meta.domain, now)
            except BaseException:
                # roll the index back so no partial state survives
                self.index.remove(model_id)
                self.records.pop(model_id, None)
                self.chains.pop(model_id, None)
                self.blobs.pop((model_id, 1), None)
                self._next_id -= 1
                raise
            return record

    def find_duplicates(self, content_hash: str, bag: WordBag) -> list[tuple[str, str]]:
        """Existing models matching by hash ("exact") or bag similarity ("geometric")."""
        out: list[tuple[str, str]] = []
        exact = self._by_hash.get(content_hash)
        if exact is not None and self.records[exact].state == "active":
            out.append((exact, "exact"))
        weights = self.index.weights()
        qnorm_sq = sum((c * weights(w)) ** 2 for w, c in bag.counts.items())
        if qnorm_sq == 0.0:
            return out
        # shared-mass prefilter: cos(q, t) can reach the threshold only if
        # the query mass shared with t is at least threshold^2 of the total
        shared: dict[str, float] = {}
        for word, count in bag.counts.items():
            w = weights(word)
            if w == 0.0:
                continue
            posting = self.index.postings.get(word)
            if posting is None:
                continue
            mass = (count * w) ** 2
            for model_id in posting.entries:
                shared[model_id] = shared.get(model_id, 0.0) + mass
        cutoff = (self.dup_threshold**2) * qnorm_sq
        scored = []
        for model_id, mass in shared.items():
            if model_id == exact or mass < cutoff:
                continue
            score = score_similarity(bag.counts, self.index.bag_of(model_id).counts, weights)
            if score >= self.dup_threshold:
                scored.append((score, model_id))
        scored.sort(key=lambda t: (-t[0], t[1]))
        out.extend((model_id, "geometric") for _, model_id in scored)
        return out

    def record_version(self, model_id: str, data: bytes, note: str = "", format_hint: str | None = None) -> VersionChain:
        """Append a new content version and swap the indexed bag."""
        with self._write_lock:
            record = self.get_record(model_id)
            fmt, digest, stats, bag = self._prepare(data, format_hint)
            chain = self.chains[model_id]
            if digest == chain.head().content_hash:
                raise NoChangeError("uploaded bytes hash identically to the current version")
            now = self.clock()
            old_bag = self.index.bag_of(model_id)
            bag.model_id = model_id
            self.index.remove(model_id)
            try:
                self.index.insert(bag)
            except BaseException:
                self.index.insert(old_bag)
                raise
            number = chain.head().number + 1
            chain.versions.append(VersionEntry(number, digest, now, note))
            self.blobs[(model_id, number)] = data
            self._by_hash.pop(record.content_hash, None)
            self._by_hash[digest] = model_id
            record.content_hash = digest
            record.original_format = fmt
            record.stats = stats
            record.ingest_history.append({"timestamp": now, "action": "version", "actor": "upload"})
            return chain

    def take_down(self, model_id: str) -> None:
        """Remove the model from every search surface; keep the audit record."""
        with self._write_lock:
            record = self.get_record(model_id)
            self.index.remove(model_id)
            record.state = "taken_down"
            record.ingest_history.append(
                {"timestamp": self.clock(), "action": "takedown", "actor": "operator"}
            )
            self._by_hash.pop(record.content_hash, None)
            if record.provenance == "external":
                for key in [k for k in self.blobs if k[0] == model_id]:
                    del self.blobs[key]

    def _touch_freshness(self, domain: str, now: float) -> None:
        rec = self.freshness.get(domain)
        if rec is None:
            self.freshness[domain] = FreshnessRecord(domain, now, self.default_recrawl_interval)
        else:
            rec.last_ingest = max(rec.last_ingest, now)

    def set_recrawl_interval(self, domain: str, interval: float) -> None:
        if interval <= 0:
            raise ValueError("interval must be > 0")
        rec = self.freshness.get(domain)
        if rec is None:
            self.freshness[domain] = FreshnessRecord(domain, self.clock(), interval)
        else:
            rec.interval = interval

    def due_for_recrawl(self, now: float | None = None) -> list[str]:
        """Domains whose staleness exceeds their interval, most stale first."""
        now = self.clock() if now is None else now
        due = [r for r in self.freshness.values() if r.staleness(now) > r.interval]
        due.sort(key=lambda r: (-r.staleness(now), r.domain))
        return [r.domain for r in due]

    def build_query_bag(self, data: bytes, format_hint: str | None = None) -> WordBag:
        """Bag for query bytes, quantized consistently with the corpus."""
        _, _, _, bag = self._prepare(data, format_hint)
        return bag

    # -- projections used by search / service -----------------------------

    def search_view(self, model_id: str) -> tuple[dict, str] | None:
        record = self.records.get(model_id)
        if record is None or record.state != "active":
            return None
        stats = {
            "watertight": record.stats.watertight if record.stats else None,
            "consistent_normals": record.stats.consistent_normals if record.stats else None,
            "filetype": record.original_format,
            "sources": tuple(s.domain for s in record.sources),
        }
        return stats, record.provenance

    def text_views(self):
        for model_id, record in sorted(self.records.items()):
            if record.state != "active":
                continue
            blob = " ".join([record.name, record.description, " ".join(record.tags)])
            view = self.search_view(model_id)
            assert view is not None
            yield model_id, blob, view[0], record.provenance

    def active_ids(self) -> list[str]:
        return sorted(m for m, r in self.records.items() if r.state == "active")

    def audit(self) -> list[str]:
        """Referential integrity scan between catalog and index."""
        problems = list(self.index.audit())
        active = set(self.active_ids())
        indexed = set(self.index.forward)
        for model_id in active - indexed:
            problems.append(f"active record {model_id} missing from index")
        for model_id in indexed - active:
            problems.append(f"indexed model {model_id} has no active record")
        for model_id, record in self.records.items():
            if record.state == "taken_down" and model_id in indexed:
                problems.append(f"taken-down model {model_id} still indexed")
        return problems

    # -- persistence -------------------------------------------------------

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.index.save(directory / "index.bin")
        with open(directory / "catalog.jsonl", "w", encoding="utf-8") as fh:
            fh.write(self.export_records())
        blob_dir = directory / "blobs"
        blob_dir.mkdir(exist_ok=True)
        wanted = set()
        for (model_id, number), data in self.blobs.items():
            name = f"{model_id}-v{number}.bin"
            wanted.add(name)
            with open(blob_dir / name, "wb") as fh:
                fh.write(data)
        for stale in blob_dir.iterdir():
            if stale.name not in wanted:
                stale.unlink()

    def export_records(self) -> str:
        """Line-oriented catalog export: a header object, then one object per line."""
        lines = [
            json.dumps(
                {"format": CATALOG_FORMAT, "version": CATALOG_FORMAT_VERSION, "next_id": self._next_id},
                sort_keys=True,
            )
        ]
        for model_id in sorted(self.records):
            lines.append(json.dumps({"type": "record", **self.records[model_id].to_dict()}, sort_keys=True))
        for model_id in sorted(self.chains):
            chain = self.chains[model_id]
            lines.append(
                json.dumps(
                    {
                        "type": "chain",
                        "model_id": chain.model_id,
                        "versions": [
                            {"number": v.number, "content_hash": v.content_hash, "timestamp": v.timestamp, "note": v.note}
                            for v in chain.versions
                        ],
                    },
                    sort_keys=True,
                )
            )
        for domain in sorted(self.freshness):
            rec = self.freshness[domain]
            lines.append(
                json.dumps(
                    {"type": "freshness", "domain": rec.domain, "last_ingest": rec.last_ingest, "interval": rec.interval},
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, directory, clock=time.time) -> "Catalog":
        directory = Path(directory)
        with open(directory / "catalog.jsonl", encoding="utf-8") as fh:
            lines = [line for line in fh.read().splitlines() if line.strip()]
        header = json.loads(lines[0])
        if header.get("format") != CATALOG_FORMAT:
            raise StorageError("not a catalog export")
        if header.get("version") != CATALOG_FORMAT_VERSION:
            raise StorageError(f"unsupported catalog version {header.get('version')}")
        index = InvertedIndex.load(directory / "index.bin")
        catalog = cls(index.config, clock=clock)
        catalog.index = index
        catalog._next_id = header["next_id"]
        for line in lines[1:]:
            obj = json.loads(line)
            if obj["type"] == "record":
                record = ModelRecord.from_dict(obj)
                catalog.records[record.model_id] = record
                if record.state == "active":
                    catalog._by_hash[record.content_hash] = record.model_id
            elif obj["type"] == "chain":
                catalog.chains[obj["model_id"]] = VersionChain(
                    obj["model_id"],
                    [VersionEntry(v["number"], v["content_hash"], v["timestamp"], v["note"]) for v in obj["versions"]],
                )
            elif obj["type"] == "freshness":
                catalog.freshness[obj["domain"]] = FreshnessRecord(obj["domain"], obj["last_ingest"], obj["interval"])
        blob_dir = directory / "blobs"
        if blob_dir.is_dir():
            for path in blob_dir.iterdir():
                stem, _, vname = path.stem.rpartition("-v")
                catalog.blobs[(stem, int(vname))] = path.read_bytes()
        return catalog

    def snapshot_state(self) -> tuple:
        """Deep-comparable projection for atomicity tests."""
        return (
            self.export_records(),
            {k: v for k, v in self.blobs.items()},
            self.index._serialize(),
        )


def _is_ascii_stl(data: bytes) -> bool:
    try:
        data.decode("utf-8")
        return True
    except UnicodeDecodeError:
        return False
