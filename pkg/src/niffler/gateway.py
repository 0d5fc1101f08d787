"""HTTP/JSON surface: cohort queries, facets, jobs, pins, export, metrics.

The gateway is a thin, schema-faithful layer over the store, vault, and job
runner.  Read routes are open; every mutating route requires the configured
bearer token.  Export bundles are de-identified on the way out and always
live under the configured export directory.
"""

from __future__ import annotations

import hmac
import json
import logging
import os
import secrets
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

import uvicorn
from fastapi import Depends, FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from niffler.dicom.dataset import DicomDataset, Tag
from niffler.dicom.deident import DEFAULT_STRIP_LIST, deidentify, surrogate_uid
from niffler.dicom.parse import read_part10_file
from niffler.dicom.pixels import DecoderHook
from niffler.dicom.vr import VR
from niffler.errors import (
    BadQuery,
    ConfigError,
    DicomError,
    EmptyCohort,
    IllegalJobTransition,
    NifflerError,
    PluginNotFound,
    UnknownCollection,
    UnknownKeyword,
)
from niffler.inference import JobRunner, resolve_cohort, to_png
from niffler.store import CohortQuery, MetadataStore
from niffler.vault import Vault
from niffler.vaultkeys import SeriesKey, sanitize_component

log = logging.getLogger(__name__)

EXPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ApiConfig:
    """Gateway binding, authentication, and export placement."""

    token: str
    export_dir: Path
    host: str = "127.0.0.1"
    port: int = 8642
    cors_origins: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.token:
            raise ConfigError("api token must not be empty")
        if not 0 <= self.port <= 65535:
            raise ConfigError(f"api port {self.port} out of range")


@dataclass(frozen=True)
class MetricsSnapshot:
    """Point-in-time service health counters."""

    associations_active: int = 0
    instances_received_total: int = 0
    bytes_received_total: int = 0
    series_processed: int = 0
    series_deleted: int = 0
    last_extraction_at: str | None = None
    last_purge_at: str | None = None
    jobs_by_state: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "associations_active": self.associations_active,
            "instances_received_total": self.instances_received_total,
            "bytes_received_total": self.bytes_received_total,
            "series_processed": self.series_processed,
            "series_deleted": self.series_deleted,
            "last_extraction_at": self.last_extraction_at,
            "last_purge_at": self.last_purge_at,
            "jobs_by_state": dict(self.jobs_by_state),
        }


@dataclass(frozen=True)
class AdminHooks:
    """Service-provided triggers for one-shot maintenance ticks."""

    extract_once: Callable[[], dict]
    purge_now: Callable[[], dict]


# --- de-identified export -----------------------------------------------------------


@dataclass(frozen=True)
class ExportReport:
    bundle: Path
    instances: int
    failures: int

    def to_json(self) -> dict:
        return {
            "bundle": self.bundle.name,
            "instances": self.instances,
            "failures": self.failures,
        }


_PIXEL_DATA = Tag(0x7FE0, 0x0010)


def render_metadata(ds: DicomDataset) -> dict:
    """Flatten a dataset to a JSON-ready attribute map.

    Sequence and bulk-data elements are skipped, and so are empty values:
    attributes blanked by the strip list disappear from the rendering
    entirely rather than lingering as empty strings.
    """
    out: dict[str, object] = {}
    for el in ds:
        if el.vr is VR.SQ or el.tag == _PIXEL_DATA:
            continue
        value = el.value
        if isinstance(value, bytes):
            continue
        values = [str(v) for v in value] if isinstance(value, list) else [str(value)]
        values = [v for v in values if v]
        if not values:
            continue
        name = el.tag.keyword or str(el.tag)
        out[name] = values[0] if len(values) == 1 else values
    return out


def export_bundle(
    store: MetadataStore,
    vault: Vault,
    cohort: CohortQuery,
    export_dir: Path,
    strip_list: Iterable[str] = DEFAULT_STRIP_LIST,
    salt: bytes | None = None,
    decoder_hook: DecoderHook | None = None,
) -> ExportReport:
    """Write one de-identified PNG+metadata bundle under ``export_dir``.

    The salt is generated per bundle unless injected (tests rely on a fixed
    salt for surrogate determinism) and is never written into the bundle.
    Instances that fail to read or convert are recorded in the manifest by
    surrogate identifier; the bundle is still produced.
    """
    strip_list = tuple(strip_list)
    for identifier in strip_list:
        Tag.parse(identifier)  # unresolvable names fail before any file is written
    instances = resolve_cohort(store, vault, cohort)
    if not instances:
        raise EmptyCohort(f"cohort over {cohort.collection!r} matched no instances")
    if salt is None:
        salt = os.urandom(16)

    bundle = Path(export_dir) / f"bundle-{_timestamp_slug()}-{secrets.token_hex(4)}"
    bundle.mkdir(parents=True)
    metadata_rows = []
    failed_surrogates = []
    for sop, resolved in sorted(instances.items()):
        surrogate_sop = surrogate_uid(salt, sop)
        png_name = sanitize_component(surrogate_sop) + ".png"
        try:
            _meta, ds = read_part10_file(resolved.source)
            to_png(resolved.source, bundle / png_name, decoder_hook)
        except (DicomError, OSError) as exc:
            log.warning("export: instance %s failed: %s", surrogate_sop, exc)
            failed_surrogates.append(surrogate_sop)
            continue
        row: dict[str, object] = {"png": png_name}
        row.update(render_metadata(deidentify(ds, strip_list, salt)))
        metadata_rows.append(row)

    metadata_rows.sort(key=lambda row: row["png"])
    (bundle / "metadata.json").write_text(
        json.dumps(metadata_rows, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    manifest = {
        "schema_version": EXPORT_SCHEMA_VERSION,
        "created_at": _now_iso(),
        "strip_list": sorted(strip_list),
        "instances": len(metadata_rows),
        "failures": len(failed_surrogates),
        "failed": sorted(failed_surrogates),
    }
    (bundle / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return ExportReport(
        bundle=bundle, instances=len(metadata_rows), failures=len(failed_surrogates)
    )


# --- application ---------------------------------------------------------------------


def create_app(
    config: ApiConfig,
    store: MetadataStore,
    vault: Vault,
    runner: JobRunner,
    metrics: Callable[[], MetricsSnapshot] | None = None,
    admin: AdminHooks | None = None,
    decoder_hook: DecoderHook | None = None,
) -> FastAPI:
    app = FastAPI(title="niffler gateway", docs_url=None, redoc_url=None)
    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    def authorized(request: Request) -> None:
        supplied = request.headers.get("authorization", "")
        expected = f"Bearer {config.token}"
        if not hmac.compare_digest(supplied.encode(), expected.encode()):
            raise HTTPException(status_code=401, detail="missing or invalid token")

    mutating = [Depends(authorized)]

    async def json_body(request: Request) -> dict:
        try:
            payload = await request.json()
        except json.JSONDecodeError as exc:
            raise BadQuery(f"request body is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise BadQuery("request body must be a JSON object")
        return payload

    for error, status in (
        (BadQuery, 400),
        (UnknownKeyword, 400),
        (EmptyCohort, 400),
        (ConfigError, 400),
        (UnknownCollection, 404),
        (PluginNotFound, 404),
        (IllegalJobTransition, 409),
    ):
        def handler(request: Request, exc: NifflerError, status=status) -> JSONResponse:
            return JSONResponse(status_code=status, content={"error": str(exc)})

        app.add_exception_handler(error, handler)

    # --- read routes -------------------------------------------------------

    @app.get("/collections")
    def collections() -> dict:
        return {"collections": store.collections()}

    @app.post("/query")
    async def query(request: Request) -> dict:
        cohort = CohortQuery.from_json(await json_body(request))
        return {"count": store.count(cohort), "documents": store.query(cohort)}

    @app.get("/facets")
    def facets(collection: str = "", attributes: str = "", q: str = "") -> dict:
        if q:
            try:
                base = CohortQuery.from_json(json.loads(q))
            except json.JSONDecodeError as exc:
                raise BadQuery(f"'q' is not valid JSON: {exc}") from exc
            if collection and base.collection != collection:
                raise BadQuery("'collection' and 'q' name different collections")
        elif collection:
            base = CohortQuery(collection=collection)
        else:
            raise BadQuery("facets need a collection (or a base query)")
        names = [a for a in attributes.split(",") if a]
        if not names:
            raise BadQuery("facets need at least one attribute")
        panel = [
            {
                "attribute": facet.attribute,
                "buckets": [[label, count] for label, count in facet.buckets],
            }
            for facet in (store.facets(base.collection, name, base) for name in names)
        ]
        return {"count": store.count(base), "facets": panel}

    @app.get("/metrics")
    def metrics_route() -> dict:
        if metrics is not None:
            snapshot = metrics()
        else:
            snapshot = MetricsSnapshot(jobs_by_state=runner.jobs_by_state())
        return snapshot.to_json()

    # --- jobs --------------------------------------------------------------

    @app.post("/jobs", dependencies=mutating)
    async def submit_job(request: Request) -> dict:
        payload = await json_body(request)
        plugin = payload.get("plugin")
        if not isinstance(plugin, str) or not plugin:
            raise BadQuery("'plugin' must name a registered plugin")
        cohort = CohortQuery.from_json(payload.get("query"))
        return runner.submit(cohort, plugin).to_json()

    @app.get("/jobs")
    def list_jobs() -> dict:
        return {"jobs": [job.to_json() for job in runner.jobs()]}

    def require_job(job_id: str):
        job = runner.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")
        return job

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str) -> dict:
        return require_job(job_id).to_json()

    @app.post("/jobs/{job_id}/cancel", dependencies=mutating)
    def cancel_job(job_id: str) -> dict:
        return runner.cancel(require_job(job_id)).to_json()

    # --- results -----------------------------------------------------------

    def result_documents(job) -> list[dict]:
        if job.results_collection is None:
            return []
        return store.query(CohortQuery(collection=job.results_collection))

    @app.get("/results/{job_id}")
    def results(job_id: str) -> dict:
        job = require_job(job_id)
        return {"job": job.to_json(), "documents": result_documents(job)}

    @app.get("/results/{job_id}/png/{sop_instance_uid}")
    def result_png(job_id: str, sop_instance_uid: str, annotated: bool = True) -> Response:
        job = require_job(job_id)
        for doc in result_documents(job):
            if doc.get("SOPInstanceUID") != sop_instance_uid:
                continue
            relative = doc.get("annotated_png") if annotated else None
            relative = relative or doc.get("png")
            if relative is None:
                break
            job_dir = (runner.workdir / job.id).resolve()
            target = (job_dir / relative).resolve()
            if not target.is_relative_to(job_dir) or not target.is_file():
                break
            return Response(content=target.read_bytes(), media_type="image/png")
        raise HTTPException(status_code=404, detail="no rendered image for that instance")

    # --- pins ----------------------------------------------------------------

    def pin_key(payload: dict) -> SeriesKey:
        try:
            return SeriesKey.from_identifiers(
                payload["patient_id"],
                payload["study_instance_uid"],
                payload["series_instance_uid"],
            )
        except KeyError as exc:
            raise BadQuery(f"pin request is missing {exc.args[0]!r}") from exc

    def pin_json(pin) -> dict:
        patient, study, series = pin.key.components()
        return {
            "patient_id": patient,
            "study_instance_uid": study,
            "series_instance_uid": series,
            "reason": pin.reason,
            "expires_at": pin.expires_at,
        }

    @app.get("/pins")
    def list_pins() -> dict:
        return {"pins": [pin_json(p) for p in vault.pins.pins()]}

    @app.post("/pins", dependencies=mutating)
    async def create_pin(request: Request) -> dict:
        payload = await json_body(request)
        key = pin_key(payload)
        expires_at = None
        if payload.get("expires_at") is not None:
            try:
                expires_at = datetime.fromisoformat(payload["expires_at"])
            except (TypeError, ValueError) as exc:
                raise BadQuery(f"'expires_at' is not an ISO-8601 timestamp: {exc}") from exc
            if expires_at.tzinfo is None:
                expires_at = expires_at.replace(tzinfo=timezone.utc)
        kwargs = {"expires_at": expires_at}
        if payload.get("reason") is not None:
            kwargs["reason"] = str(payload["reason"])
        return pin_json(vault.pin(key, **kwargs))

    @app.delete("/pins", dependencies=mutating)
    async def delete_pin(request: Request) -> dict:
        payload = await json_body(request)
        key = pin_key(payload)
        kwargs = {}
        if payload.get("reason") is not None:
            kwargs["reason"] = str(payload["reason"])
        return {"removed": vault.unpin(key, **kwargs)}

    # --- export ---------------------------------------------------------------

    @app.post("/export", dependencies=mutating)
    async def export(request: Request) -> dict:
        payload = await json_body(request)
        cohort = CohortQuery.from_json(payload.get("query"))
        strip_list: Iterable[str] = DEFAULT_STRIP_LIST
        if payload.get("strip_list") is not None:
            raw = payload["strip_list"]
            if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
                raise BadQuery("'strip_list' must be a list of attribute names")
            if not raw:
                raise BadQuery("'strip_list' must not be empty")
            strip_list = raw
        salt = None
        if payload.get("salt_hex") is not None:
            try:
                salt = bytes.fromhex(payload["salt_hex"])
            except (TypeError, ValueError) as exc:
                raise BadQuery(f"'salt_hex' is not hex: {exc}") from exc
        report = export_bundle(
            store,
            vault,
            cohort,
            export_dir=config.export_dir,
            strip_list=strip_list,
            salt=salt,
            decoder_hook=decoder_hook,
        )
        return report.to_json()

    # --- maintenance ------------------------------------------------------------

    @app.post("/admin/extract", dependencies=mutating)
    def admin_extract() -> dict:
        if admin is None:
            raise HTTPException(status_code=503, detail="maintenance hooks not wired")
        return admin.extract_once()

    @app.post("/admin/purge", dependencies=mutating)
    def admin_purge() -> dict:
        if admin is None:
            raise HTTPException(status_code=503, detail="maintenance hooks not wired")
        return admin.purge_now()

    return app


class ApiServer:
    """In-process host for the gateway app; binds on start, stops cleanly."""

    def __init__(self, app: FastAPI, host: str, port: int) -> None:
        self._server = uvicorn.Server(
            uvicorn.Config(app, host=host, port=port, log_level="warning", access_log=False)
        )
        self._thread = threading.Thread(target=self._server.run, name="gateway-api", daemon=True)

    def start(self, timeout: float = 10.0) -> "ApiServer":
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self._server.started:
            if not self._thread.is_alive():
                raise RuntimeError("gateway server exited during startup")
            if time.monotonic() > deadline:
                raise RuntimeError("gateway server did not start in time")
            time.sleep(0.02)
        return self

    @property
    def port(self) -> int:
        sockets = self._server.servers[0].sockets
        return sockets[0].getsockname()[1]

    def stop(self, timeout: float = 5.0) -> None:
        self._server.should_exit = True
        self._thread.join(timeout)


def _timestamp_slug() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
