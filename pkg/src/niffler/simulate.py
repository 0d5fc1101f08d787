"""Synthetic modality and archive harness.

Three roles for exercising the service without real imaging equipment:

* :func:`generate_corpus` writes a deterministic tree of Part-10 studies
  with controllable metadata mixes and pixel patterns, plus a ground-truth
  JSON recording every implanted rectangle;
* :func:`stream` plays a corpus against a Store SCP at a configured rate,
  with a choice of association lifetimes;
* :func:`serve_archive` answers C-MOVE requests at STUDY/SERIES level by
  pushing the matching instances to a configured destination AE, emitting
  pending responses with live sub-operation counts.

The synthetic "implant" is a saturated rectangle on a bounded-intensity
background — not clinically meaningful, but exactly recoverable, so every
downstream detection assertion has an authoritative answer key.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from niffler.dicom.dataset import DicomDataset, FileMetaInfo, Tag
from niffler.dicom.parse import parse_dataset, read_part10_file
from niffler.dicom.uids import (
    CR_IMAGE_STORAGE,
    DX_IMAGE_STORAGE_PRESENTATION,
    EXPLICIT_VR_LE,
    SECONDARY_CAPTURE_STORAGE,
    STUDY_ROOT_QR_MOVE,
    VERIFICATION_SOP_CLASS,
)
from niffler.dicom.vr import VR
from niffler.dicom.write import write_dataset, write_part10_file
from niffler.errors import (
    AssociationRejected,
    ConfigError,
    ConnectionRefusedByPeer,
    DicomError,
    DimseError,
    NoAcceptedContext,
)
from niffler.net import dimse
from niffler.net.association import AssociationConfig, validate_ae_title
from niffler.net.scp import CompletedMessage, ScpServer, ServerAssociation
from niffler.net.scu import ClientAssociation, RemotePeer, StoreReport, send_c_store

log = logging.getLogger(__name__)

#: Synthetic pixel contract: backgrounds never exceed this value, implants
#: are saturated, so any threshold strictly between the two separates them.
BACKGROUND_MAX = 200
IMPLANT_VALUE = 255

GROUND_TRUTH_FILENAME = "ground_truth.json"

#: Root for every generated UID; the seed is appended so distinct corpora
#: can never collide.
UID_ROOT = "1.2.840.99999.1"

SOP_CLASS_FOR_MODALITY = {
    "DX": DX_IMAGE_STORAGE_PRESENTATION,
    "DR": DX_IMAGE_STORAGE_PRESENTATION,
    "CR": CR_IMAGE_STORAGE,
}

MANUFACTURERS = (
    ("CARESTREAM HEALTH", "DRX-EVOLUTION"),
    ("GE HEALTHCARE", "DEFINIUM 8000"),
    ("SIEMENS", "YSIO MAX"),
    ("PHILIPS", "DIGITALDIAGNOST"),
)

#: Final C-MOVE status: refused, out of resources — unable to perform
#: sub-operations (destination configured but unreachable).
_STATUS_SUB_OPS_REFUSED = 0xA702
#: Final C-MOVE status: warning — one or more sub-operations failed.
_STATUS_SUB_OPS_WARNING = 0xB000

_MOVE_DESTINATION = Tag(0x0000, 0x0600)


# --- pixel patterns -----------------------------------------------------------------


@dataclass(frozen=True)
class Noise:
    """Uniform random background, no structure."""


@dataclass(frozen=True)
class Gradient:
    """Horizontal intensity ramp, identical in every instance."""


@dataclass(frozen=True)
class ImplantRect:
    """Noise background with a saturated rectangle injected at random.

    ``probability`` is evaluated once per instance; sizes are drawn
    uniformly from ``[min_size, max_size]`` per axis.
    """

    probability: float = 1.0
    min_size: int = 8
    max_size: int = 24

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError(f"implant probability must be in [0, 1]: {self.probability}")
        if not 2 <= self.min_size <= self.max_size:
            raise ConfigError(
                f"implant size range invalid: min={self.min_size} max={self.max_size}"
            )


PixelPattern = Noise | Gradient | ImplantRect


def _noise_pixels(rng: random.Random, rows: int, cols: int) -> np.ndarray:
    raw = np.frombuffer(rng.randbytes(rows * cols), dtype=np.uint8)
    return (raw % (BACKGROUND_MAX + 1)).reshape(rows, cols)


def _gradient_pixels(rows: int, cols: int) -> np.ndarray:
    ramp = (np.arange(cols, dtype=np.uint32) * BACKGROUND_MAX) // max(cols - 1, 1)
    return np.broadcast_to(ramp.astype(np.uint8), (rows, cols)).copy()


def _render_pattern(
    rng: random.Random, pattern: PixelPattern, rows: int, cols: int
) -> tuple[np.ndarray, tuple[int, int, int, int] | None]:
    """Produce one frame and, if an implant was injected, its exact box."""
    if isinstance(pattern, Gradient):
        return _gradient_pixels(rows, cols), None
    arr = _noise_pixels(rng, rows, cols)
    if isinstance(pattern, Noise):
        return arr, None
    if rng.random() >= pattern.probability:
        return arr, None
    width = rng.randint(pattern.min_size, min(pattern.max_size, cols))
    height = rng.randint(pattern.min_size, min(pattern.max_size, rows))
    x0 = rng.randint(0, cols - width)
    y0 = rng.randint(0, rows - height)
    arr[y0 : y0 + height, x0 : x0 + width] = IMPLANT_VALUE
    return arr, (x0, y0, x0 + width, y0 + height)


# --- corpus specification ------------------------------------------------------------


@dataclass(frozen=True)
class StudySpec:
    """Shape and content of one generated corpus.

    The same spec (including ``rng_seed``) always produces byte-identical
    files and ground truth, so a seed pins every downstream assertion.
    """

    patient_count: int = 1
    studies_per_patient: int = 1
    series_per_study: int = 1
    instances_per_series: int = 1
    modality_mix: tuple[tuple[str, float], ...] = (("DX", 3.0), ("CR", 2.0), ("DR", 1.0))
    body_part_mix: tuple[tuple[str, float], ...] = (
        ("CHEST", 4.0),
        ("ABDOMEN", 2.0),
        ("PELVIS", 1.0),
        ("EXTREMITY", 1.0),
    )
    date_range: tuple[date, date] = (date(2020, 1, 1), date(2020, 12, 31))
    rng_seed: int = 0
    pattern: PixelPattern = Noise()
    rows: int = 64
    columns: int = 64

    def __post_init__(self) -> None:
        for name in (
            "patient_count",
            "studies_per_patient",
            "series_per_study",
            "instances_per_series",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for label, mix in (("modality", self.modality_mix), ("body part", self.body_part_mix)):
            if not mix:
                raise ConfigError(f"{label} mix must not be empty")
            if any(weight <= 0 for _value, weight in mix):
                raise ConfigError(f"{label} mix weights must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError(f"rng_seed must be an unsigned 64-bit value: {self.rng_seed}")
        if self.date_range[0] > self.date_range[1]:
            raise ConfigError(f"date range is reversed: {self.date_range}")
        if not 16 <= self.rows <= 4096 or not 16 <= self.columns <= 4096:
            raise ConfigError(f"frame size out of range: {self.rows}x{self.columns}")
        if not isinstance(self.pattern, (Noise, Gradient, ImplantRect)):
            raise ConfigError(f"unknown pixel pattern: {self.pattern!r}")

    @property
    def instance_count(self) -> int:
        return (
            self.patient_count
            * self.studies_per_patient
            * self.series_per_study
            * self.instances_per_series
        )


@dataclass(frozen=True)
class GroundTruth:
    """Answer key: per SOP instance, the implanted box if one exists."""

    boxes: dict[str, tuple[int, int, int, int] | None]

    def box_for(self, sop_instance_uid: str) -> tuple[int, int, int, int] | None:
        return self.boxes.get(sop_instance_uid)

    def positives(self) -> list[str]:
        return sorted(sop for sop, box in self.boxes.items() if box is not None)

    def negatives(self) -> list[str]:
        return sorted(sop for sop, box in self.boxes.items() if box is None)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "instances": {
                sop: list(box) if box is not None else None for sop, box in self.boxes.items()
            },
        }

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: Path) -> "GroundTruth":
        payload = json.loads(Path(path).read_text())
        return cls(
            boxes={
                sop: tuple(box) if box is not None else None
                for sop, box in payload["instances"].items()
            }
        )


@dataclass(frozen=True)
class CorpusInstance:
    """One generated Part-10 file and its routing identity."""

    path: Path
    patient_id: str
    study_instance_uid: str
    series_instance_uid: str
    sop_instance_uid: str
    sop_class_uid: str
    modality: str


@dataclass(frozen=True)
class Corpus:
    """A generated (or reloaded) file tree plus its answer key."""

    root: Path
    instances: tuple[CorpusInstance, ...]
    truth: GroundTruth

    def by_study(self) -> dict[str, list[CorpusInstance]]:
        grouped: dict[str, list[CorpusInstance]] = {}
        for instance in self.instances:
            grouped.setdefault(instance.study_instance_uid, []).append(instance)
        return grouped

    def by_series(self) -> dict[str, list[CorpusInstance]]:
        grouped: dict[str, list[CorpusInstance]] = {}
        for instance in self.instances:
            grouped.setdefault(instance.series_instance_uid, []).append(instance)
        return grouped

    @classmethod
    def load(cls, root: Path) -> "Corpus":
        """Rebuild the in-memory index by re-reading a corpus directory."""
        root = Path(root)
        truth_path = root / GROUND_TRUTH_FILENAME
        truth = GroundTruth.load(truth_path) if truth_path.is_file() else GroundTruth({})
        instances = []
        for path in sorted(root.rglob("*.dcm")):
            meta, ds = read_part10_file(path)
            instances.append(
                CorpusInstance(
                    path=path,
                    patient_id=ds.get_scalar("PatientID") or "",
                    study_instance_uid=ds.get_scalar("StudyInstanceUID") or "",
                    series_instance_uid=ds.get_scalar("SeriesInstanceUID") or "",
                    sop_instance_uid=ds.get_scalar("SOPInstanceUID") or "",
                    sop_class_uid=meta.media_storage_sop_class_uid,
                    modality=ds.get_scalar("Modality") or "",
                )
            )
        return cls(root=root, instances=tuple(instances), truth=truth)


# --- generation ------------------------------------------------------------------------


def _weighted(rng: random.Random, mix: tuple[tuple[str, float], ...]) -> str:
    values = [value for value, _weight in mix]
    weights = [weight for _value, weight in mix]
    return rng.choices(values, weights=weights)[0]


def _random_date(rng: random.Random, start: date, end: date) -> str:
    chosen = start + timedelta(days=rng.randrange((end - start).days + 1))
    return chosen.strftime("%Y%m%d")


def _build_dataset(
    *,
    sop_class_uid: str,
    sop_instance_uid: str,
    study_instance_uid: str,
    series_instance_uid: str,
    patient: dict[str, str],
    study: dict[str, str],
    series: dict[str, str],
    instance_number: int,
    rows: int,
    columns: int,
    pixels: np.ndarray,
) -> DicomDataset:
    ds = DicomDataset(transfer_syntax=EXPLICIT_VR_LE)
    ds.put("SOPClassUID", VR.UI, sop_class_uid)
    ds.put("SOPInstanceUID", VR.UI, sop_instance_uid)
    ds.put("StudyInstanceUID", VR.UI, study_instance_uid)
    ds.put("SeriesInstanceUID", VR.UI, series_instance_uid)

    ds.put("PatientID", VR.LO, patient["id"])
    ds.put("PatientName", VR.PN, patient["name"])
    ds.put("PatientBirthDate", VR.DA, patient["birth_date"])
    ds.put("PatientSex", VR.CS, patient["sex"])

    ds.put("StudyDate", VR.DA, study["date"])
    ds.put("StudyTime", VR.TM, study["time"])
    ds.put("AccessionNumber", VR.SH, study["accession"])
    ds.put("StudyDescription", VR.LO, "SYNTHETIC SCREENING")
    ds.put("ReferringPhysicianName", VR.PN, "SIM^REFERRER")
    ds.put("InstitutionName", VR.LO, "SIM GENERAL HOSPITAL")
    ds.put("StationName", VR.SH, "SIM-STATION-1")

    ds.put("Modality", VR.CS, series["modality"])
    ds.put("BodyPartExamined", VR.CS, series["body_part"])
    ds.put("SeriesDate", VR.DA, study["date"])
    ds.put("SeriesNumber", VR.IS, series["number"])
    ds.put("SeriesDescription", VR.LO, f"SYNTHETIC {series['body_part']}")
    ds.put("Manufacturer", VR.LO, series["manufacturer"])
    ds.put("ManufacturerModelName", VR.LO, series["model"])
    ds.put("InstanceNumber", VR.IS, str(instance_number))

    ds.put("Rows", VR.US, rows)
    ds.put("Columns", VR.US, columns)
    ds.put("BitsAllocated", VR.US, 8)
    ds.put("BitsStored", VR.US, 8)
    ds.put("HighBit", VR.US, 7)
    ds.put("PixelRepresentation", VR.US, 0)
    ds.put("SamplesPerPixel", VR.US, 1)
    ds.put("PhotometricInterpretation", VR.CS, "MONOCHROME2")
    ds.put("WindowCenter", VR.DS, "128")
    ds.put("WindowWidth", VR.DS, "256")
    ds.put("PixelData", VR.OB, pixels.astype(np.uint8).tobytes())
    return ds


def generate_corpus(spec: StudySpec, out: Path) -> Corpus:
    """Write the corpus described by ``spec`` under ``out``.

    Identity is fully deterministic: patient IDs are sequential, every UID
    descends from ``UID_ROOT.<seed>``, and all random draws come from one
    seeded generator consumed in a fixed traversal order.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(spec.rng_seed)
    corpus_root_uid = f"{UID_ROOT}.{spec.rng_seed}"

    instances: list[CorpusInstance] = []
    boxes: dict[str, tuple[int, int, int, int] | None] = {}

    for p in range(1, spec.patient_count + 1):
        patient = {
            "id": f"SIM-P{p:04d}",
            "name": f"SIM^PATIENT^{p:04d}",
            "birth_date": _random_date(rng, date(1940, 1, 1), date(2005, 12, 31)),
            "sex": rng.choice(("F", "M", "O")),
        }
        for s in range(1, spec.studies_per_patient + 1):
            study_uid = f"{corpus_root_uid}.{p}.{s}"
            study = {
                "date": _random_date(rng, *spec.date_range),
                "time": f"{rng.randrange(24):02d}{rng.randrange(60):02d}{rng.randrange(60):02d}",
                "accession": f"SIM{p:04d}{s:03d}",
            }
            for r in range(1, spec.series_per_study + 1):
                series_uid = f"{study_uid}.{r}"
                modality = _weighted(rng, spec.modality_mix)
                manufacturer, model = rng.choice(MANUFACTURERS)
                series = {
                    "modality": modality,
                    "body_part": _weighted(rng, spec.body_part_mix),
                    "number": str(r),
                    "manufacturer": manufacturer,
                    "model": model,
                }
                sop_class = SOP_CLASS_FOR_MODALITY.get(modality, SECONDARY_CAPTURE_STORAGE)
                for i in range(1, spec.instances_per_series + 1):
                    sop_uid = f"{series_uid}.{i}"
                    pixels, box = _render_pattern(rng, spec.pattern, spec.rows, spec.columns)
                    ds = _build_dataset(
                        sop_class_uid=sop_class,
                        sop_instance_uid=sop_uid,
                        study_instance_uid=study_uid,
                        series_instance_uid=series_uid,
                        patient=patient,
                        study=study,
                        series=series,
                        instance_number=i,
                        rows=spec.rows,
                        columns=spec.columns,
                        pixels=pixels,
                    )
                    path = out / patient["id"] / study_uid / series_uid / f"{sop_uid}.dcm"
                    path.parent.mkdir(parents=True, exist_ok=True)
                    write_part10_file(FileMetaInfo.for_dataset(ds), ds, path)
                    boxes[sop_uid] = box
                    instances.append(
                        CorpusInstance(
                            path=path,
                            patient_id=patient["id"],
                            study_instance_uid=study_uid,
                            series_instance_uid=series_uid,
                            sop_instance_uid=sop_uid,
                            sop_class_uid=sop_class,
                            modality=modality,
                        )
                    )

    truth = GroundTruth(boxes)
    truth.save(out / GROUND_TRUTH_FILENAME)
    return Corpus(root=out, instances=tuple(instances), truth=truth)


# --- streaming -------------------------------------------------------------------------


class _Pacer:
    """Fixed-cadence gate: the n-th call returns no earlier than n/rate."""

    def __init__(self, rate: float) -> None:
        self._interval = 1.0 / rate
        self._due: float | None = None

    def wait(self) -> None:
        now = time.monotonic()
        if self._due is None:
            self._due = now
        delay = self._due - now
        if delay > 0:
            time.sleep(delay)
        self._due += self._interval


ASSOCIATION_POLICIES = ("long-lived", "per-study")


def stream(
    peer: RemotePeer,
    corpus: Corpus,
    rate: float,
    association_policy: str = "long-lived",
    timeout: float = 30.0,
) -> StoreReport:
    """Send every corpus instance to ``peer`` at ``rate`` instances/second.

    ``long-lived`` reuses one association for the whole corpus;
    ``per-study`` opens a fresh one per study, mimicking modalities that
    associate per examination.  Connection-level failures propagate;
    per-instance refusals are recorded in the report and do not stop the
    run.
    """
    if rate <= 0:
        raise ConfigError(f"stream rate must be positive (instances/second): {rate}")
    if association_policy not in ASSOCIATION_POLICIES:
        raise ConfigError(
            f"association policy must be one of {ASSOCIATION_POLICIES}: {association_policy!r}"
        )
    if association_policy == "per-study":
        batches = [group for _study, group in sorted(corpus.by_study().items())]
    else:
        batches = [list(corpus.instances)]

    pacer = _Pacer(rate)
    combined = StoreReport()
    for batch in batches:
        report = send_c_store(
            peer, [instance.path for instance in batch], timeout=timeout, pace=pacer.wait
        )
        combined.sent += report.sent
        combined.outcomes.extend(report.outcomes)
    return combined


# --- C-MOVE archive ----------------------------------------------------------------------


@dataclass
class ArchiveConfig:
    """Network identity of the archive and its known move destinations."""

    destinations: dict[str, tuple[str, int]] = field(default_factory=dict)
    ae_title: str = "SIM-ARCHIVE"
    host: str = "127.0.0.1"
    port: int = 0
    dimse_timeout: float = 30.0

    def __post_init__(self) -> None:
        validate_ae_title(self.ae_title)
        for destination_ae in self.destinations:
            validate_ae_title(destination_ae)


class ArchiveServer:
    """A C-MOVE SCP over a fixed corpus.

    Matching instances are pushed to the requested destination AE over a
    dedicated Store SCU association; one move runs at a time so pending
    counts are deterministic.
    """

    def __init__(self, corpus: Corpus, config: ArchiveConfig) -> None:
        self.corpus = corpus
        self.config = config
        self._move_lock = threading.Lock()
        association_config = AssociationConfig(
            ae_title=config.ae_title,
            accepted_abstract_syntaxes=(STUDY_ROOT_QR_MOVE, VERIFICATION_SOP_CLASS),
            dimse_timeout=config.dimse_timeout,
        )
        self._server = ScpServer(
            association_config,
            host=config.host,
            port=config.port,
            handlers={dimse.C_MOVE_RQ: self._handle_move},
        )

    @property
    def port(self) -> int:
        return self._server.port

    @property
    def endpoint(self) -> tuple[str, int]:
        return self._server.endpoint

    def start(self) -> "ArchiveServer":
        self._server.start()
        return self

    def stop(self) -> None:
        self._server.stop()

    # --- move handling -------------------------------------------------

    def _matching_instances(self, identifier: DicomDataset) -> list[CorpusInstance] | None:
        """Resolve the move identifier; None means the request is unsupported."""
        level = (identifier.get_scalar("QueryRetrieveLevel") or "").upper()
        if level == "STUDY":
            grouped, keyword = self.corpus.by_study(), "StudyInstanceUID"
        elif level == "SERIES":
            grouped, keyword = self.corpus.by_series(), "SeriesInstanceUID"
        else:
            return None
        raw = identifier.get(keyword)
        if raw is None or raw == "":
            return None
        wanted = set(raw) if isinstance(raw, list) else {raw}
        matched = [
            instance for uid in sorted(wanted) for instance in grouped.get(uid, ())
        ]
        return sorted(matched, key=lambda instance: instance.sop_instance_uid)

    def _handle_move(self, association: ServerAssociation, message: CompletedMessage) -> None:
        summary = message.summary

        def respond(status: int, *, remaining: int | None = None,
                    completed: int = 0, failed: int = 0) -> None:
            association.respond(
                message.context_id,
                dimse.c_move_rsp(
                    summary.message_id,
                    summary.sop_class_uid,
                    status,
                    remaining=remaining,
                    completed=completed,
                    failed=failed,
                ),
            )

        with self._move_lock:
            element = message.command.element(_MOVE_DESTINATION)
            destination_ae = str(element.first()).strip() if element is not None else ""
            destination = self.config.destinations.get(destination_ae)
            if destination is None:
                log.warning("C-MOVE to unknown destination AE %r", destination_ae)
                respond(dimse.STATUS_MOVE_DESTINATION_UNKNOWN)
                return
            if message.data is None:
                respond(dimse.STATUS_PROCESSING_FAILURE)
                return
            try:
                identifier = parse_dataset(
                    message.data, association.context(message.context_id).transfer_syntax
                )
            except DicomError:
                respond(dimse.STATUS_PROCESSING_FAILURE)
                return
            matched = self._matching_instances(identifier)
            if matched is None:
                respond(dimse.STATUS_PROCESSING_FAILURE)
                return
            if not matched:
                respond(dimse.STATUS_SUCCESS)
                return
            self._push(respond, matched, destination_ae, destination, summary.message_id)

    def _push(
        self,
        respond,
        matched: list[CorpusInstance],
        destination_ae: str,
        destination: tuple[str, int],
        move_message_id: int,
    ) -> None:
        host, port = destination
        peer = RemotePeer(
            host=host, port=port, called_ae=destination_ae, calling_ae=self.config.ae_title
        )
        sop_classes = sorted({instance.sop_class_uid for instance in matched})
        try:
            client = ClientAssociation.connect(
                peer,
                [(sop_class, (EXPLICIT_VR_LE,)) for sop_class in sop_classes],
                timeout=self.config.dimse_timeout,
            )
        except (ConnectionRefusedByPeer, AssociationRejected) as exc:
            log.warning("cannot reach move destination %s: %s", destination_ae, exc)
            respond(_STATUS_SUB_OPS_REFUSED, failed=len(matched))
            return

        completed = failed = 0
        try:
            for index, instance in enumerate(matched, start=1):
                try:
                    context_id, transfer_syntax = client.context_for(instance.sop_class_uid)
                    _meta, dataset = read_part10_file(instance.path)
                    client.send_message(
                        context_id,
                        dimse.c_store_rq(
                            index,
                            instance.sop_class_uid,
                            instance.sop_instance_uid,
                            move_originator_ae=self.config.ae_title,
                            move_originator_message_id=move_message_id,
                        ),
                        write_dataset(dataset, transfer_syntax),
                    )
                    reply = client.recv_message(self.config.dimse_timeout)
                    stored = reply.summary.status == dimse.STATUS_SUCCESS
                except (DicomError, DimseError, NoAcceptedContext, OSError) as exc:
                    log.warning("sub-operation for %s failed: %s", instance.sop_instance_uid, exc)
                    stored = False
                completed += 1 if stored else 0
                failed += 0 if stored else 1
                remaining = len(matched) - index
                if remaining > 0:
                    respond(
                        dimse.STATUS_PENDING,
                        remaining=remaining,
                        completed=completed,
                        failed=failed,
                    )
        finally:
            client.release()
        final = dimse.STATUS_SUCCESS if failed == 0 else _STATUS_SUB_OPS_WARNING
        respond(final, completed=completed, failed=failed)


def serve_archive(corpus: Corpus, config: ArchiveConfig) -> ArchiveServer:
    """Start the archive and return its running handle."""
    return ArchiveServer(corpus, config).start()
