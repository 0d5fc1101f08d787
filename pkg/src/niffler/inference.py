"""Cohort-driven detection jobs: resolve, convert to PNG, run a plugin.

A job pins every series its cohort touches for the job's lifetime, converts
the matched instances to 8-bit PNGs, hands a manifest to a detector child
process, validates the returned boxes, stores one result document per image
in a per-job collection, and releases the pins no matter how the job ends.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import os
import queue
import shutil
import subprocess
import sys
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from niffler.dicom.dataset import DicomDataset
from niffler.dicom.parse import read_part10_file
from niffler.dicom.pixels import DecoderHook, PixelBuffer, decode_pixels
from niffler.errors import (
    ConfigError,
    DicomError,
    IllegalJobTransition,
    MalformedResults,
    PluginCrashed,
    PluginNotFound,
    PluginTimeout,
    UnknownCollection,
)
from niffler.store import CohortQuery, MetadataStore
from niffler.vault import Vault
from niffler.vaultkeys import SeriesKey, sanitize_component

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1

ANNOTATION_COLOR = (255, 64, 64)
ANNOTATION_THICKNESS = 2


# --- PNG rendering -------------------------------------------------------------


def _first_float(ds: DicomDataset, keyword: str) -> float | None:
    raw = ds.get_scalar(keyword)
    if raw is None:
        return None
    try:
        return float(raw)
    except ValueError:
        return None


def render_window(
    buf: PixelBuffer, center: float | None = None, width: float | None = None
) -> np.ndarray:
    """Render decoded samples to 8 bits.

    8-bit input passes through unchanged.  Deeper monochrome input maps by
    the linear window when center/width are usable, otherwise by min-max
    scaling (a constant image maps to 0).  MONOCHROME1 inverts at the end
    so denser tissue always renders bright.
    """
    matrix = buf.as_matrix()
    if buf.bits_allocated == 8:
        out = matrix.astype(np.uint8)
    elif center is not None and width is not None and width >= 1:
        x = matrix.astype(np.float64)
        if width == 1:
            out = np.where(x <= center - 0.5, 0, 255).astype(np.uint8)
        else:
            y = ((x - (center - 0.5)) / (width - 1) + 0.5) * 255.0
            out = np.clip(np.rint(y), 0, 255).astype(np.uint8)
    else:
        lo = int(matrix.min())
        hi = int(matrix.max())
        if hi == lo:
            out = np.zeros_like(matrix, dtype=np.uint8)
        else:
            scaled = (matrix.astype(np.float64) - lo) / (hi - lo) * 255.0
            out = np.rint(scaled).astype(np.uint8)
    if buf.photometric_interpretation == "MONOCHROME1":
        out = (255 - out).astype(np.uint8)
    return out


def to_png(source: Path, destination: Path, decoder_hook: DecoderHook | None = None) -> Path:
    """Convert one stored instance to an 8-bit PNG at ``destination``."""
    _meta, ds = read_part10_file(source)
    buf = decode_pixels(ds, decoder_hook)
    rendered = render_window(buf, _first_float(ds, "WindowCenter"), _first_float(ds, "WindowWidth"))
    mode = "RGB" if buf.samples_per_pixel == 3 else "L"
    destination = Path(destination)
    destination.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rendered, mode=mode).save(destination, format="PNG")
    return destination


# --- detection results ----------------------------------------------------------


@dataclass(frozen=True)
class Box:
    x0: int
    y0: int
    x1: int
    y1: int
    label: str
    score: float

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DetectionResult:
    sop_instance_uid: str
    boxes: tuple[Box, ...]
    annotated_png: Path | None = None


def annotate(png: Path, boxes: Sequence[Box], destination: Path | None = None) -> Path:
    """Copy of the PNG with 2-px box outlines; the original is untouched.

    With no boxes the copy is byte-identical.  With boxes the output is RGB
    and only the border-ring pixels differ from the RGB rendering of the
    original.
    """
    png = Path(png)
    destination = Path(destination) if destination else png.with_suffix(".annotated.png")
    if not boxes:
        shutil.copyfile(png, destination)
        return destination
    pixels = np.array(Image.open(png).convert("RGB"))
    for box in boxes:
        t = ANNOTATION_THICKNESS
        inner_x0, inner_x1 = min(box.x0 + t, box.x1), max(box.x1 - t, box.x0)
        inner_y0, inner_y1 = min(box.y0 + t, box.y1), max(box.y1 - t, box.y0)
        pixels[box.y0:box.y1, box.x0:inner_x0] = ANNOTATION_COLOR
        pixels[box.y0:box.y1, inner_x1:box.x1] = ANNOTATION_COLOR
        pixels[box.y0:inner_y0, box.x0:box.x1] = ANNOTATION_COLOR
        pixels[inner_y1:box.y1, box.x0:box.x1] = ANNOTATION_COLOR
    Image.fromarray(pixels, mode="RGB").save(destination, format="PNG")
    return destination


# --- plugin contract -------------------------------------------------------------


@dataclass(frozen=True)
class PluginSpec:
    """How to invoke a detector child process."""

    command: str
    timeout: float = 120.0
    env: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.command:
            raise ConfigError("plugin command must not be empty")
        if self.timeout <= 0:
            raise ConfigError("plugin timeout must be positive")

    def argv(self, manifest_path: Path) -> list[str]:
        if self.command.endswith(".py"):
            return [sys.executable, self.command, str(manifest_path)]
        return [self.command, str(manifest_path)]

    def exists(self) -> bool:
        return Path(self.command).is_file() or shutil.which(self.command) is not None


def default_registry() -> dict[str, PluginSpec]:
    from niffler.plugins import stub_detector

    return {"stub-detector": PluginSpec(command=str(Path(stub_detector.__file__)))}


def write_manifest(job_id: str, images: dict[str, Path], directory: Path) -> tuple[Path, Path]:
    """Write the plugin input manifest; returns (manifest_path, output_path)."""
    directory.mkdir(parents=True, exist_ok=True)
    output_path = directory / "results.json"
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "job_id": job_id,
        "images": [
            {"sop_instance_uid": sop, "png_path": str(path)}
            for sop, path in sorted(images.items())
        ],
        "output_path": str(output_path),
    }
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path, output_path


def parse_results(
    payload: object, expected_sops: set[str], dims: dict[str, tuple[int, int]]
) -> list[DetectionResult]:
    """Validate the plugin's output document; loud failure on any violation."""
    if not isinstance(payload, dict) or not isinstance(payload.get("results"), list):
        raise MalformedResults("results document must be {'results': [...]}")
    out: list[DetectionResult] = []
    seen: set[str] = set()
    for row in payload["results"]:
        if not isinstance(row, dict):
            raise MalformedResults(f"result entry is not an object: {row!r}")
        sop = row.get("sop_instance_uid")
        if sop not in expected_sops:
            raise MalformedResults(f"result for unexpected instance: {sop!r}")
        if sop in seen:
            raise MalformedResults(f"duplicate result for instance {sop}")
        seen.add(sop)
        columns, rows_count = dims[sop]
        raw_boxes = row.get("boxes")
        if not isinstance(raw_boxes, list):
            raise MalformedResults(f"boxes for {sop} is not a list")
        boxes = []
        for raw in raw_boxes:
            boxes.append(_parse_box(raw, sop, columns, rows_count))
        out.append(DetectionResult(sop_instance_uid=sop, boxes=tuple(boxes)))
    missing = expected_sops - seen
    if missing:
        raise MalformedResults(f"plugin omitted results for {sorted(missing)[:3]}")
    return out


def _parse_box(raw: object, sop: str, columns: int, rows: int) -> Box:
    if not isinstance(raw, dict):
        raise MalformedResults(f"box for {sop} is not an object: {raw!r}")
    try:
        box = Box(
            x0=int(raw["x0"]),
            y0=int(raw["y0"]),
            x1=int(raw["x1"]),
            y1=int(raw["y1"]),
            label=str(raw.get("label", "")),
            score=float(raw["score"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResults(f"box for {sop} is malformed: {raw!r}") from exc
    if not (0 <= box.x0 < box.x1 <= columns and 0 <= box.y0 < box.y1 <= rows):
        raise MalformedResults(
            f"box for {sop} violates bounds ({columns}x{rows}): {raw!r}"
        )
    if not 0.0 <= box.score <= 1.0:
        raise MalformedResults(f"box score for {sop} outside [0,1]: {box.score}")
    return box


def run_detector(
    plugin: PluginSpec,
    manifest_path: Path,
    output_path: Path,
    expected_sops: set[str],
    dims: dict[str, tuple[int, int]],
    cancel_check: Callable[[], bool] | None = None,
) -> list[DetectionResult]:
    """Invoke the plugin process and validate what it wrote."""
    env = dict(os.environ)
    env.update(dict(plugin.env))
    try:
        proc = subprocess.Popen(
            plugin.argv(manifest_path),
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            env=env,
        )
    except OSError as exc:
        raise PluginNotFound(f"cannot launch {plugin.command}: {exc}") from exc
    deadline = time.monotonic() + plugin.timeout
    while proc.poll() is None:
        if time.monotonic() > deadline:
            proc.kill()
            proc.wait()
            raise PluginTimeout(f"{plugin.command} exceeded {plugin.timeout}s")
        if cancel_check is not None and cancel_check():
            proc.kill()
            proc.wait()
            raise _JobCanceled()
        time.sleep(0.05)
    if proc.returncode != 0:
        stderr = (proc.stderr.read() if proc.stderr else b"").decode("utf-8", "replace")
        raise PluginCrashed(
            f"{plugin.command} exited {proc.returncode}: {stderr.strip()[-500:]}"
        )
    try:
        payload = json.loads(output_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedResults(f"plugin wrote no readable results: {exc}") from exc
    return parse_results(payload, expected_sops, dims)


# --- jobs ------------------------------------------------------------------------


class JobState(enum.Enum):
    QUEUED = "queued"
    RESOLVING = "resolving"
    CONVERTING = "converting"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"
    CANCELED = "canceled"

    @property
    def terminal(self) -> bool:
        return self in (JobState.DONE, JobState.FAILED, JobState.CANCELED)


_LEGAL_TRANSITIONS: dict[JobState, set[JobState]] = {
    JobState.QUEUED: {JobState.RESOLVING, JobState.CANCELED},
    JobState.RESOLVING: {JobState.CONVERTING, JobState.DONE, JobState.FAILED, JobState.CANCELED},
    JobState.CONVERTING: {JobState.RUNNING, JobState.DONE, JobState.FAILED, JobState.CANCELED},
    JobState.RUNNING: {JobState.DONE, JobState.FAILED, JobState.CANCELED},
    JobState.DONE: set(),
    JobState.FAILED: set(),
    JobState.CANCELED: set(),
}


class _JobCanceled(Exception):
    """Internal control flow: the job was canceled mid-execution."""


@dataclass(frozen=True)
class ResolvedInstance:
    """One cohort member located in the vault."""

    key: SeriesKey
    source: Path
    identity: dict[str, str]


def resolve_cohort(
    store: MetadataStore,
    vault: Vault,
    cohort: CohortQuery,
    checkpoint: Callable[[], None] | None = None,
) -> dict[str, ResolvedInstance]:
    """Distinct matched instances mapped to their vault locations.

    Projection is ignored (identity attributes are always needed); documents
    missing any identity attribute cannot be located and are skipped.
    """
    resolve_query = dataclasses.replace(cohort, project=None)
    instances: dict[str, ResolvedInstance] = {}
    for doc in store.query(resolve_query):
        if checkpoint is not None:
            checkpoint()
        sop = doc["SOPInstanceUID"]
        if sop in instances:
            continue
        identity = {
            k: doc[k]
            for k in ("PatientID", "StudyInstanceUID", "SeriesInstanceUID")
            if doc.get(k)
        }
        if len(identity) < 3:
            continue
        key = SeriesKey.from_identifiers(
            identity["PatientID"],
            identity["StudyInstanceUID"],
            identity["SeriesInstanceUID"],
        )
        instances[sop] = ResolvedInstance(
            key=key, source=vault.instance_path(key, sop), identity=identity
        )
    return instances


@dataclass
class InferenceJob:
    id: str
    cohort: CohortQuery
    plugin: PluginSpec
    plugin_name: str
    state: JobState = JobState.QUEUED
    created_at: str = ""
    finished_at: str | None = None
    matched: int = 0
    converted: int = 0
    inferred: int = 0
    failed: int = 0
    error: str | None = None
    results_collection: str | None = None
    _done: threading.Event = field(default_factory=threading.Event, repr=False, compare=False)

    @property
    def pin_reason(self) -> str:
        return f"job:{self.id}"

    def wait(self, timeout: float | None = None) -> bool:
        return self._done.wait(timeout)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "state": self.state.value,
            "plugin": self.plugin_name,
            "cohort": self.cohort.to_json(),
            "created_at": self.created_at,
            "finished_at": self.finished_at,
            "counts": {
                "matched": self.matched,
                "converted": self.converted,
                "inferred": self.inferred,
                "failed": self.failed,
            },
            "error": self.error,
            "results_collection": self.results_collection,
        }


class JobRunner:
    """Owns job records, a single worker, and the pin lifecycle."""

    def __init__(
        self,
        vault: Vault,
        store: MetadataStore,
        workdir: Path,
        registry: dict[str, PluginSpec] | None = None,
        decoder_hook: DecoderHook | None = None,
    ) -> None:
        self.vault = vault
        self.store = store
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.registry = dict(registry) if registry is not None else default_registry()
        self.decoder_hook = decoder_hook
        self._jobs: dict[str, InferenceJob] = {}
        self._lock = threading.RLock()
        self._queue: "queue.Queue[str]" = queue.Queue()
        self._stopping = threading.Event()
        self._worker = threading.Thread(target=self._drain, name="job-runner", daemon=True)
        self._worker.start()

    # --- public surface -----------------------------------------------------

    def submit(self, cohort: CohortQuery, plugin: str | PluginSpec) -> InferenceJob:
        cohort.validate()
        if cohort.collection not in self.store.collections():
            raise UnknownCollection(f"no collection named {cohort.collection!r}")
        if isinstance(plugin, str):
            plugin_name, spec = plugin, self.registry.get(plugin)
            if spec is None:
                raise PluginNotFound(f"no registered plugin named {plugin!r}")
        else:
            plugin_name, spec = Path(plugin.command).stem, plugin
        if not spec.exists():
            raise PluginNotFound(f"plugin command not found: {spec.command!r}")
        job = InferenceJob(
            id=uuid.uuid4().hex[:12],
            cohort=cohort,
            plugin=spec,
            plugin_name=plugin_name,
            created_at=_now_iso(),
        )
        with self._lock:
            self._jobs[job.id] = job
        self._queue.put(job.id)
        return job

    def get(self, job_id: str) -> InferenceJob | None:
        with self._lock:
            return self._jobs.get(job_id)

    def jobs(self) -> list[InferenceJob]:
        with self._lock:
            return sorted(self._jobs.values(), key=lambda j: j.created_at)

    def jobs_by_state(self) -> dict[str, int]:
        with self._lock:
            counts: dict[str, int] = {}
            for job in self._jobs.values():
                counts[job.state.value] = counts.get(job.state.value, 0) + 1
            return counts

    def cancel(self, job: InferenceJob) -> InferenceJob:
        """Cancel a non-terminal job; canceling twice is a no-op."""
        with self._lock:
            if job.state is JobState.CANCELED:
                return job
            if job.state.terminal:
                raise IllegalJobTransition(f"job {job.id} is already {job.state.value}")
            was_queued = job.state is JobState.QUEUED
            job.state = JobState.CANCELED
            job.finished_at = _now_iso()
        if was_queued:
            job._done.set()
        return job

    def stop(self, timeout: float = 10.0) -> None:
        self._stopping.set()
        self._worker.join(timeout)

    # --- execution ------------------------------------------------------------

    def _drain(self) -> None:
        while not self._stopping.is_set():
            try:
                job_id = self._queue.get(timeout=0.1)
            except queue.Empty:
                continue
            job = self.get(job_id)
            if job is None or job.state is not JobState.QUEUED:
                continue
            try:
                self._execute(job)
            except Exception:
                log.exception("job %s crashed the worker loop", job_id)

    def _move(self, job: InferenceJob, new_state: JobState) -> None:
        with self._lock:
            if job.state is JobState.CANCELED:
                raise _JobCanceled()
            if new_state not in _LEGAL_TRANSITIONS[job.state]:
                raise IllegalJobTransition(
                    f"job {job.id}: {job.state.value} -> {new_state.value}"
                )
            job.state = new_state

    def _execute(self, job: InferenceJob) -> None:
        pinned: list[SeriesKey] = []
        try:
            self._move(job, JobState.RESOLVING)
            instances = self._resolve(job)
            job.matched = len(instances)
            if not instances:
                self._move(job, JobState.DONE)
                return
            for key in sorted({r.key for r in instances.values()}):
                self.vault.pin(key, job.pin_reason)
                pinned.append(key)
            self._move(job, JobState.CONVERTING)
            png_map, dims = self._convert(job, instances)
            if not png_map:
                self._move(job, JobState.DONE)
                return
            self._move(job, JobState.RUNNING)
            job_dir = self.workdir / job.id
            manifest_path, output_path = write_manifest(job.id, png_map, job_dir)
            results = run_detector(
                job.plugin,
                manifest_path,
                output_path,
                set(png_map),
                dims,
                cancel_check=lambda: job.state is JobState.CANCELED,
            )
            self._store_results(job, results, png_map, instances)
            job.inferred = len(results)
            self._move(job, JobState.DONE)
        except _JobCanceled:
            log.info("job %s canceled", job.id)
        except Exception as exc:
            log.warning("job %s failed: %s", job.id, exc)
            job.error = f"{type(exc).__name__}: {exc}"
            try:
                self._move(job, JobState.FAILED)
            except _JobCanceled:
                pass
        finally:
            job.failed = max(job.converted - job.inferred, 0)
            for key in pinned:
                try:
                    self.vault.unpin(key, job.pin_reason)
                except Exception:
                    log.exception("job %s could not release pin on %s", job.id, key)
            if job.finished_at is None:
                job.finished_at = _now_iso()
            job._done.set()

    def _resolve(self, job: InferenceJob) -> dict[str, ResolvedInstance]:
        return resolve_cohort(
            self.store, self.vault, job.cohort, checkpoint=lambda: self._checkpoint(job)
        )

    def _convert(
        self, job: InferenceJob, instances: dict[str, ResolvedInstance]
    ) -> tuple[dict[str, Path], dict[str, tuple[int, int]]]:
        png_map: dict[str, Path] = {}
        dims: dict[str, tuple[int, int]] = {}
        png_dir = self.workdir / job.id / "png"
        for sop, resolved in sorted(instances.items()):
            self._checkpoint(job)
            job.converted += 1
            destination = png_dir / (sanitize_component(sop) + ".png")
            try:
                to_png(resolved.source, destination, self.decoder_hook)
                with Image.open(destination) as img:
                    dims[sop] = (img.width, img.height)
            except (DicomError, OSError) as exc:
                log.warning("job %s: conversion failed for %s: %s", job.id, sop, exc)
                continue
            png_map[sop] = destination
        return png_map, dims

    def _store_results(
        self,
        job: InferenceJob,
        results: list[DetectionResult],
        png_map: dict[str, Path],
        instances: dict[str, ResolvedInstance],
    ) -> None:
        """One document per image in the job's own collection.

        PNG paths are stored relative to the job directory so that identical
        input yields identical documents regardless of job id or workdir.
        """
        collection = f"results_{job.id}"
        job_dir = self.workdir / job.id
        stamp = _now_iso()
        for result in results:
            self._checkpoint(job)
            png = png_map[result.sop_instance_uid]
            doc = dict(instances[result.sop_instance_uid].identity)
            doc["SOPInstanceUID"] = result.sop_instance_uid
            doc["boxes"] = json.dumps([b.to_json() for b in result.boxes])
            doc["box_count"] = str(len(result.boxes))
            doc["png"] = str(png.relative_to(job_dir))
            doc["inferred_at"] = stamp
            if result.boxes:
                annotated = annotate(png, result.boxes)
                doc["annotated_png"] = str(annotated.relative_to(job_dir))
            self.store.upsert(collection, doc)
        job.results_collection = collection

    def _checkpoint(self, job: InferenceJob) -> None:
        if job.state is JobState.CANCELED:
            raise _JobCanceled()


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
