"""Operator command line: ingestion, search, diagnostics, generation, serving.

The CLI drives the modules directly against a store directory (flag
--store, or the MESHSEARCH_STORE environment variable); --remote switches
the data-path commands to a running HTTP service for parity testing.
Exit codes: 0 success, 1 user error, 2 internal error.  With
--format=json all output is a single JSON document on stdout.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .analysis import (
    BinPolicy,
    TTDSpec,
    fit_gamma,
    fit_report,
    gen_support_lattice,
    gen_ttd,
    histogram_csv,
    histogram_svg,
    perimeter_histogram,
)
from .catalog import Catalog, CatalogError, IngestMeta
from .index import IndexStoreError, InvertedIndex
from .mcubes import tangent_torus_mesh
from .mesh import MeshParseError, write_stl
from .search import (
    EmptyQueryError,
    QueryTooGenericError,
    SearchFilters,
    query_pip,
    query_similar,
    text_search,
)
from .service import ApiConfig, serve
from .words import EmptyBagError

USER_ERRORS = (
    CatalogError,
    IndexStoreError,
    MeshParseError,
    EmptyBagError,
    EmptyQueryError,
    QueryTooGenericError,
    FileNotFoundError,
    ValueError,
)

STORE_ENV = "MESHSEARCH_STORE"


class Ctx:
    def __init__(self, store_dir: Path, fmt: str, remote: str | None):
        self.store_dir = store_dir
        self.fmt = fmt
        self.remote = remote
        self._catalog: Catalog | None = None

    def catalog(self) -> Catalog:
        if self._catalog is None:
            if (self.store_dir / "catalog.jsonl").exists():
                self._catalog = Catalog.load(self.store_dir)
            else:
                self._catalog = Catalog()
        return self._catalog

    def save(self) -> None:
        if self._catalog is not None:
            self._catalog.save(self.store_dir)

    def emit(self, payload: dict, table: list[str]) -> None:
        if self.fmt == "json":
            click.echo(json.dumps(payload, sort_keys=True))
        else:
            for line in table:
                click.echo(line)


@click.group()
@click.option("--store", envvar=STORE_ENV, default="./meshsearch-store", show_default=True, help="store directory")
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table", show_default=True)
@click.option("--remote", default=None, help="base URL of a running service; routes data commands over HTTP")
@click.pass_context
def cli(ctx, store, fmt, remote):
    ctx.obj = Ctx(Path(store), fmt, remote)


@cli.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--source", default="local", show_default=True, help="source domain for provenance")
@click.option("--url", default="internal-upload", show_default=True)
@click.option("--name", default="")
@click.option("--description", default="")
@click.option("--tags", default="", help="comma-separated tags")
@click.option("--format-hint", default=None, type=click.Choice(["stl", "obj"]))
@click.pass_obj
def ingest(ctx: Ctx, paths, source, url, name, description, tags, format_hint):
    """Ingest model files into the store (or the remote service)."""
    results = []
    for path in paths:
        data = path.read_bytes()
        meta_name = name or path.name
        if ctx.remote:
            body = _remote_upload(ctx.remote, "/v1/models", data, path.name, {
                "name": meta_name, "description": description, "tags": tags,
                "source_domain": source, "source_url": url,
                **({"format": format_hint} if format_hint else {}),
            })
            results.append({"path": str(path), "model_id": body["model_id"]})
        else:
            meta = IngestMeta(
                domain=source, url=url, name=meta_name, description=description,
                tags=tuple(t.strip() for t in tags.split(",") if t.strip()), actor="cli",
            )
            record = ctx.catalog().ingest(data, format_hint=format_hint, meta=meta)
            results.append({"path": str(path), "model_id": record.model_id})
    if not ctx.remote:
        ctx.save()
    ctx.emit({"ingested": results}, [f"{r['path']} -> {r['model_id']}" for r in results])


def _filters_from_flags(watertight, normals, filetype, source_domain) -> SearchFilters:
    parse = lambda v: None if v is None else v.lower() in ("1", "true", "yes")
    return SearchFilters(
        watertight=parse(watertight),
        consistent_normals=parse(normals),
        filetype=filetype,
        source=source_domain,
    )


def _results_payload(results) -> dict:
    return {
        "results": [
            {"model_id": r.model_id, "score": r.score, "provenance": r.provenance}
            for r in results
        ]
    }


def _results_table(results) -> list[str]:
    if not results:
        return ["(no results)"]
    return [f"{i + 1:3d}  {r.score:8.6f}  {r.provenance:8s}  {r.model_id}" for i, r in enumerate(results)]


@cli.command()
@click.option("--query", "query_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--mode", type=click.Choice(["similar", "pip"]), default="similar", show_default=True)
@click.option("-k", default=10, show_default=True)
@click.option("--watertight", default=None)
@click.option("--normals", default=None)
@click.option("--filetype", default=None)
@click.option("--source-domain", default=None)
@click.option("--format-hint", default=None, type=click.Choice(["stl", "obj"]))
@click.pass_obj
def search(ctx: Ctx, query_path, mode, k, watertight, normals, filetype, source_domain, format_hint):
    """Geometric search with a query model file."""
    data = query_path.read_bytes()
    if ctx.remote:
        form = {"k": str(k)}
        for key, val in (("watertight", watertight), ("normals", normals), ("filetype", filetype), ("source", source_domain), ("format", format_hint)):
            if val is not None:
                form[key] = val
        body = _remote_upload(ctx.remote, f"/v1/search/{mode}", data, query_path.name, form)
        results = body["results"]
        ctx.emit(body, [f"{i + 1:3d}  {r['score']:8.6f}  {r['provenance']:8s}  {r['model_id']}" for i, r in enumerate(results)] or ["(no results)"])
        return
    catalog = ctx.catalog()
    bag = catalog.build_query_bag(data, format_hint=format_hint)
    filters = _filters_from_flags(watertight, normals, filetype, source_domain)
    fn = query_similar if mode == "similar" else query_pip
    results = fn(catalog.index, catalog, bag, k=k, filters=filters)
    ctx.emit(_results_payload(results), _results_table(results))


@cli.command()
@click.option("-q", "query", required=True)
@click.option("-k", default=10, show_default=True)
@click.option("--watertight", default=None)
@click.option("--normals", default=None)
@click.option("--filetype", default=None)
@click.option("--source-domain", default=None)
@click.pass_obj
def text(ctx: Ctx, query, k, watertight, normals, filetype, source_domain):
    """Text search over model metadata."""
    if ctx.remote:
        import httpx

        params = {"q": query, "k": k}
        for key, val in (("watertight", watertight), ("normals", normals), ("filetype", filetype), ("source", source_domain)):
            if val is not None:
                params[key] = val
        body = _remote_json(ctx.remote, "GET", "/v1/search/text", params=params)
        ctx.emit(body, [f"{i + 1:3d}  {r['score']:8.6f}  {r['provenance']:8s}  {r['model_id']}" for i, r in enumerate(body["results"])] or ["(no results)"])
        return
    catalog = ctx.catalog()
    results = text_search(catalog, query, k=k, filters=_filters_from_flags(watertight, normals, filetype, source_domain))
    ctx.emit(_results_payload(results), _results_table(results))


@cli.command()
@click.argument("model_id")
@click.pass_obj
def delete(ctx: Ctx, model_id):
    """Take a model down: removed from every search surface."""
    if ctx.remote:
        body = _remote_json(ctx.remote, "DELETE", f"/v1/models/{model_id}")
        ctx.emit(body, [f"{model_id} taken down"])
        return
    catalog = ctx.catalog()
    catalog.take_down(model_id)
    ctx.save()
    ctx.emit({"model_id": model_id, "state": "taken_down"}, [f"{model_id} taken down"])


@cli.command()
@click.option("--perimeter-histogram", "do_hist", is_flag=True)
@click.option("--fit-gamma", "do_fit", is_flag=True)
@click.option("--bins", default=64, show_default=True)
@click.option("--log-bins", is_flag=True)
@click.option("--svg", type=click.Path(path_type=Path), default=None, help="write the histogram as SVG")
@click.option("--csv", type=click.Path(path_type=Path), default=None, help="write the histogram as CSV")
@click.pass_obj
def stats(ctx: Ctx, do_hist, do_fit, bins, log_bins, svg, csv):
    """Corpus statistics; optionally the perimeter histogram and gamma fit."""
    catalog = ctx.catalog()
    idx = catalog.index
    payload: dict = {"models": idx.n_models, "words": len(idx.postings), "generic": len(idx.generic)}
    table = [f"models   {idx.n_models}", f"words    {len(idx.postings)}", f"generic  {len(idx.generic)}"]
    if do_hist or do_fit:
        rows = [bag.features for bag in idx.forward.values() if bag.features is not None]
        if not rows:
            raise click.ClickException("store holds no feature data")
        import numpy as np

        perims = np.concatenate([r[:, 0] for r in rows])
        if do_hist:
            lo = float(perims.min())
            hi = float(perims.max())
            policy = BinPolicy("log" if log_bins else "fixed", max(lo, 1e-12) if log_bins else lo, hi, bins)
            hist = perimeter_histogram([perims], policy)
            payload["histogram"] = {
                "edges": [float(e) for e in hist.edges],
                "counts": [int(c) for c in hist.counts],
                "n": hist.n, "underflow": hist.underflow, "overflow": hist.overflow,
            }
            table.append(f"perimeters n={hist.n} range [{lo:.6g}, {hi:.6g}]")
            if svg:
                svg.write_text(histogram_svg(hist, title="facet perimeters"))
                table.append(f"svg -> {svg}")
            if csv:
                csv.write_text(histogram_csv(hist))
                table.append(f"csv -> {csv}")
        if do_fit:
            fit = fit_gamma(perims)
            payload["gamma_fit"] = {
                "shape": fit.shape, "scale": fit.scale,
                "log_likelihood": fit.log_likelihood,
                "iterations": fit.iterations, "converged": fit.converged,
            }
            table.extend(fit_report(fit).splitlines())
    ctx.emit(payload, table)


@cli.group()
def gen():
    """Synthetic mesh generators."""


@gen.command()
@click.option("--big-radius", "-R", "big_radius", default=1.0, show_default=True)
@click.option("--small-radius", "-r", "small_radius", default=0.25, show_default=True)
@click.option("--res", default=8, show_default=True, help="grid cells per unit length")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.pass_obj
def torus(ctx: Ctx, big_radius, small_radius, res, out):
    """Marching-cubes torus with tangent grid planes (sliver source)."""
    mesh = tangent_torus_mesh(big_radius, small_radius, res)
    out.write_bytes(write_stl(mesh))
    ctx.emit({"out": str(out), "triangles": len(mesh.triangles)}, [f"{out}: {len(mesh.triangles)} triangles"])


@gen.command()
@click.option("--pillars", default=9, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.pass_obj
def support(ctx: Ctx, pillars, seed, out):
    """Support lattice: slab plus jittered pillar grid."""
    mesh = gen_support_lattice(pillars=pillars, seed=seed)
    out.write_bytes(write_stl(mesh))
    ctx.emit({"out": str(out), "triangles": len(mesh.triangles)}, [f"{out}: {len(mesh.triangles)} triangles"])


@gen.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.pass_obj
def ttd(ctx: Ctx, spec_path, out):
    """Generate a labeled part/composite/distractor corpus from a JSON spec."""
    spec = TTDSpec.from_dict(json.loads(spec_path.read_text()))
    dataset = gen_ttd(spec)
    out.mkdir(parents=True, exist_ok=True)
    for model_id, mesh in dataset.corpus.items():
        (out / f"{model_id}.stl").write_bytes(write_stl(mesh))
    labels = {
        "labels": [
            {"composite": lab.composite_id, "contents": [{"part": p, "offset": list(o)} for p, o in lab.contents]}
            for lab in dataset.labels
        ],
        "parts": dataset.part_ids,
        "distractors": dataset.distractor_ids,
        "spec": spec.to_dict(),
    }
    (out / "labels.json").write_text(json.dumps(labels, indent=2, sort_keys=True))
    ctx.emit(
        {"out": str(out), "models": len(dataset.corpus)},
        [f"{out}: {len(dataset.corpus)} models, labels.json written"],
    )


@cli.group()
def index():
    """Index persistence and consistency tooling."""


@index.command("save")
@click.option("--to", "to_path", type=click.Path(path_type=Path), default=None)
@click.pass_obj
def index_save(ctx: Ctx, to_path):
    catalog = ctx.catalog()
    target = to_path or (ctx.store_dir / "index.bin")
    target.parent.mkdir(parents=True, exist_ok=True)
    catalog.index.save(target)
    ctx.emit({"saved": str(target)}, [f"index saved to {target}"])


@index.command("load")
@click.option("--from", "from_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.pass_obj
def index_load(ctx: Ctx, from_path):
    idx = InvertedIndex.load(from_path)
    ctx.emit(
        {"models": idx.n_models, "words": len(idx.postings)},
        [f"loaded index: {idx.n_models} models, {len(idx.postings)} words"],
    )


@index.command("audit")
@click.pass_obj
def index_audit(ctx: Ctx):
    catalog = ctx.catalog()
    problems = catalog.audit()
    ctx.emit({"problems": problems}, problems or ["ok"])
    if problems:
        raise click.ClickException(f"{len(problems)} consistency problems")


@cli.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(path_type=Path), default=None, help="static frontend directory to mount at /ui")
@click.pass_obj
def serve_cmd(ctx: Ctx, host, port, ui_dir):
    """Run the HTTP service over the store."""
    serve(ctx.catalog(), ApiConfig(host=host, port=port, ui_dir=str(ui_dir) if ui_dir else None))


def _remote_upload(base: str, path: str, data: bytes, filename: str, form: dict) -> dict:
    import httpx

    response = httpx.post(base.rstrip("/") + path, files={"file": (filename, data)}, data=form, timeout=60.0)
    return _remote_body(response)


def _remote_json(base: str, method: str, path: str, params: dict | None = None) -> dict:
    import httpx

    response = httpx.request(method, base.rstrip("/") + path, params=params, timeout=60.0)
    return _remote_body(response)


def _remote_body(response) -> dict:
    body = response.json()
    if response.status_code >= 400:
        error = body.get("error", {})
        raise CatalogError(f"{error.get('code', response.status_code)}: {error.get('message', '')}")
    return body


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except (click.UsageError, click.ClickException) as exc:
        exc.show(file=sys.stderr)
        return 1
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - internal failure boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
