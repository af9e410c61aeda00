"""HTTP facade over catalog, index, and search.

All endpoints live under /v1 and return JSON.  Responses are pure
projections of catalog/index state; mutating endpoints funnel through the
catalog's single-writer lock.  Error bodies carry machine-readable codes
matching the module-level exceptions:

    POST   /v1/models                      multipart upload + metadata
    GET    /v1/models/{id}                 record + stats
    GET    /v1/models/{id}/related         precomputed top-k similar
    DELETE /v1/models/{id}                 takedown
    POST   /v1/search/similar, /v1/search/pip   multipart query + params
    GET    /v1/search/text                 ?q=&k=&watertight=&normals=&filetype=&source=
    GET    /v1/stats                       corpus and vocabulary counts
    GET    /v1/healthz
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Form, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .catalog import Catalog, CatalogError, IngestMeta, TakenDownError, UnknownRecordError
from .index import UnknownModelError
from .mesh import MeshParseError
from .search import (
    EmptyQueryError,
    QueryTooGenericError,
    SearchFilters,
    query_pip,
    query_similar,
    text_search,
)
from .words import EmptyBagError


@dataclass(frozen=True)
class ApiConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    max_upload_bytes: int = 64 * 1024 * 1024
    related_k: int = 10
    ui_dir: str | None = None  # static frontend mounted at /ui when set

    def __post_init__(self):
        if not (0 < self.port < 65536):
            raise ValueError("invalid port")
        if self.max_upload_bytes <= 0 or self.related_k <= 0:
            raise ValueError("limits must be positive")


class RelatedCache:
    """Per-model precomputed similar lists; never serves taken-down ids.

    Any index mutation that changes membership (ingest of a new model,
    takedown) invalidates the whole cache; entries are recomputed lazily on
    the next read, and a model's own entry is precomputed when it is
    ingested.
    """

    def __init__(self, k: int):
        self.k = k
        self._entries: dict[str, list[tuple[str, float]]] = {}

    def get(self, model_id: str):
        return self._entries.get(model_id)

    def put(self, model_id: str, related: list[tuple[str, float]]) -> None:
        self._entries[model_id] = related[: self.k]

    def clear(self) -> None:
        self._entries.clear()


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


def _tri_state(value: str | None) -> bool | None:
    if value is None or value == "":
        return None
    lowered = value.lower()
    if lowered in ("1", "true", "yes"):
        return True
    if lowered in ("0", "false", "no"):
        return False
    raise ValueError(f"expected true/false, got {value!r}")


def _filters(watertight, normals, filetype, source) -> SearchFilters:
    return SearchFilters(
        watertight=_tri_state(watertight),
        consistent_normals=_tri_state(normals),
        filetype=filetype or None,
        source=source or None,
    )


def _record_body(catalog: Catalog, model_id: str) -> dict:
    record = catalog.get_record(model_id, include_taken_down=True)
    body = record.to_dict()
    chain = catalog.chains.get(model_id)
    if chain is not None:
        body["versions"] = [
            {"number": v.number, "content_hash": v.content_hash, "timestamp": v.timestamp, "note": v.note}
            for v in chain.versions
        ]
    return body


def _result_body(results) -> dict:
    return {
        "results": [
            {
                "model_id": r.model_id,
                "score": r.score,
                "provenance": r.provenance,
                "matched": [
                    {
                        "word": f"{m.word:016x}",
                        "query_count": m.query_count,
                        "target_count": m.target_count,
                        "weight": m.weight,
                    }
                    for m in r.matched
                ],
            }
            for r in results
        ]
    }


def create_app(catalog: Catalog | None, config: ApiConfig = ApiConfig()) -> FastAPI:
    app = FastAPI(title="meshsearch", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.catalog = catalog
    app.state.config = config
    app.state.related = RelatedCache(config.related_k)
    app.state.write_lock = threading.Lock()
    if config.ui_dir and Path(config.ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    def store() -> Catalog:
        if app.state.catalog is None:
            raise StoreUnavailable()
        return app.state.catalog

    @app.exception_handler(StoreUnavailable)
    async def _store_unavailable(request: Request, exc):
        return _error(503, "store-unavailable", "no catalog is loaded")

    @app.exception_handler(UnknownRecordError)
    @app.exception_handler(UnknownModelError)
    async def _unknown(request: Request, exc):
        return _error(404, "unknown-model", str(exc))

    @app.exception_handler(TakenDownError)
    async def _gone(request: Request, exc):
        return _error(410, "taken-down", str(exc))

    @app.exception_handler(MeshParseError)
    @app.exception_handler(EmptyBagError)
    @app.exception_handler(EmptyQueryError)
    @app.exception_handler(QueryTooGenericError)
    @app.exception_handler(ValueError)
    async def _bad_request(request: Request, exc):
        code = getattr(exc, "code", None) or {
            MeshParseError: "parse-error",
            EmptyBagError: "empty-bag",
            EmptyQueryError: "empty-query",
            QueryTooGenericError: "query-too-generic",
        }.get(type(exc), "invalid-request")
        return _error(400, code, str(exc))

    @app.exception_handler(CatalogError)
    async def _catalog_error(request: Request, exc):
        return _error(400, exc.code, str(exc))

    async def _read_upload(upload: UploadFile) -> bytes:
        data = await upload.read()
        if len(data) > config.max_upload_bytes:
            raise UploadTooLarge(len(data))
        return data

    @app.exception_handler(UploadTooLarge)
    async def _too_large(request: Request, exc):
        return _error(413, "too-large", f"upload of {exc.size} bytes exceeds cap {config.max_upload_bytes}")

    @app.get("/v1/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.get("/v1/stats")
    async def stats():
        cat = store()
        idx = cat.index
        df_hist: dict[int, int] = {}
        for posting in idx.postings.values():
            df_hist[posting.df] = df_hist.get(posting.df, 0) + 1
        return {
            "models": idx.n_models,
            "records": len(cat.records),
            "taken_down": sum(1 for r in cat.records.values() if r.state == "taken_down"),
            "words": len(idx.postings),
            "generic_words": len(idx.generic),
            "df_histogram": {str(df): df_hist[df] for df in sorted(df_hist)},
        }

    @app.post("/v1/models", status_code=201)
    async def upload_model(
        file: UploadFile,
        name: str = Form(""),
        description: str = Form(""),
        tags: str = Form(""),
        source_domain: str = Form("local"),
        source_url: str = Form("internal-upload"),
        format: str | None = Form(None),
    ):
        cat = store()
        data = await _read_upload(file)
        meta = IngestMeta(
            domain=source_domain,
            url=source_url,
            name=name or (file.filename or ""),
            description=description,
            tags=tuple(t.strip() for t in tags.split(",") if t.strip()),
            actor="api-upload",
        )
        with app.state.write_lock:
            n_before = cat.index.n_models
            record = cat.ingest(data, format_hint=format, meta=meta)
            if cat.index.n_models != n_before:  # new model: membership changed
                app.state.related.clear()
            related = query_similar(cat.index, cat, cat.index.bag_of(record.model_id), k=config.related_k + 1)
            app.state.related.put(
                record.model_id,
                [(r.model_id, r.score) for r in related if r.model_id != record.model_id],
            )
        return _record_body(cat, record.model_id)

    @app.get("/v1/models/{model_id}")
    async def get_model(model_id: str):
        cat = store()
        cat.get_record(model_id)  # raises 404 / 410
        return _record_body(cat, model_id)

    @app.get("/v1/models/{model_id}/related")
    async def related_models(model_id: str):
        cat = store()
        cat.get_record(model_id)
        cached = app.state.related.get(model_id)
        if cached is None:
            results = query_similar(cat.index, cat, cat.index.bag_of(model_id), k=config.related_k + 1)
            cached = [(r.model_id, r.score) for r in results if r.model_id != model_id]
            app.state.related.put(model_id, cached)
        return {"model_id": model_id, "related": [{"model_id": m, "score": s} for m, s in cached]}

    @app.delete("/v1/models/{model_id}")
    async def delete_model(model_id: str):
        cat = store()
        with app.state.write_lock:
            cat.take_down(model_id)
            app.state.related.clear()
        return {"model_id": model_id, "state": "taken_down"}

    async def _geometric_search(mode: str, file, k, watertight, normals, filetype, source, format):
        cat = store()
        data = await _read_upload(file)
        bag = cat.build_query_bag(data, format_hint=format)
        filters = _filters(watertight, normals, filetype, source)
        fn = query_similar if mode == "similar" else query_pip
        results = fn(cat.index, cat, bag, k=k, filters=filters)
        return _result_body(results)

    @app.post("/v1/search/similar")
    async def search_similar(
        file: UploadFile,
        k: int = Form(10),
        watertight: str | None = Form(None),
        normals: str | None = Form(None),
        filetype: str | None = Form(None),
        source: str | None = Form(None),
        format: str | None = Form(None),
    ):
        return await _geometric_search("similar", file, k, watertight, normals, filetype, source, format)

    @app.post("/v1/search/pip")
    async def search_pip(
        file: UploadFile,
        k: int = Form(10),
        watertight: str | None = Form(None),
        normals: str | None = Form(None),
        filetype: str | None = Form(None),
        source: str | None = Form(None),
        format: str | None = Form(None),
    ):
        return await _geometric_search("pip", file, k, watertight, normals, filetype, source, format)

    @app.get("/v1/search/text")
    async def search_text(
        q: str = "",
        k: int = 10,
        watertight: str | None = None,
        normals: str | None = None,
        filetype: str | None = None,
        source: str | None = None,
    ):
        cat = store()
        results = text_search(cat, q, k=k, filters=_filters(watertight, normals, filetype, source))
        return _result_body(results)

    return app


class StoreUnavailable(Exception):
    pass


class UploadTooLarge(Exception):
    def __init__(self, size: int):
        super().__init__(f"upload too large: {size}")
        self.size = size


def serve(catalog: Catalog, config: ApiConfig = ApiConfig()) -> None:
    """Run the service with uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(catalog, config), host=config.host, port=config.port, log_level="warning")
