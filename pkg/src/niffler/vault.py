"""On-disk instance storage in a patient/study/series hierarchy.

Received instances land at ``<root>/<patient>/<study>/<series>/<sop>.dcm``
with every path component sanitized, so hostile identifiers cannot escape
the vault root.  Instances missing any of the four identity attributes go
to a quarantine directory instead.  The vault also owns durable series
pins and the purge transaction that moves processed series into the
deleted set while freeing their disk space.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable

from niffler.dicom.dataset import FileMetaInfo
from niffler.errors import PartialPurge, QuarantinedMissingIdentity
from niffler.dicom.write import write_part10_bytes
from niffler.net.scp import StoreEvent
from niffler.state import DEFAULT_DELETED_HORIZON, ExtractionState
from niffler.vaultkeys import SeriesKey, sanitize_component

log = logging.getLogger(__name__)

PIN_OF_INTEREST = "of-interest"

DEFAULT_SETTLE_WINDOW = 5.0


@dataclass(frozen=True)
class InstanceRecord:
    """Where one stored instance lives and how big it is."""

    key: SeriesKey
    sop_instance_uid: str
    path: Path  # relative to the vault root
    stored_at: float
    size: int


@dataclass(frozen=True)
class Pin:
    key: SeriesKey
    reason: str
    expires_at: str | None = None  # ISO-8601 UTC; None = no expiry

    def is_active(self, now: datetime) -> bool:
        if self.expires_at is None:
            return True
        return datetime.fromisoformat(self.expires_at) > now.astimezone(timezone.utc)


class PinSet:
    """Durable set of (series, reason) pins with optional expiry."""

    def __init__(self, pins: list[Pin] | None = None):
        self._pins: dict[tuple[SeriesKey, str], Pin] = {}
        for pin in pins or []:
            self._pins[(pin.key, pin.reason)] = pin

    def add(self, pin: Pin) -> None:
        self._pins[(pin.key, pin.reason)] = pin

    def remove(self, key: SeriesKey, reason: str) -> int:
        return 0 if self._pins.pop((key, reason), None) is None else 1

    def pins(self) -> list[Pin]:
        return sorted(self._pins.values(), key=lambda p: (p.key, p.reason))

    def pins_for(self, key: SeriesKey) -> list[Pin]:
        return [p for p in self.pins() if p.key == key]

    def is_pinned(self, key: SeriesKey, now: datetime) -> bool:
        return any(p.is_active(now) for p in self.pins_for(key))

    def active_keys(self, now: datetime) -> set[SeriesKey]:
        return {p.key for p in self._pins.values() if p.is_active(now)}

    def to_payload(self) -> list[dict]:
        return [
            {
                "key": list(pin.key.components()),
                "reason": pin.reason,
                "expires_at": pin.expires_at,
            }
            for pin in self.pins()
        ]

    @classmethod
    def from_payload(cls, payload: object) -> "PinSet":
        pins = []
        if isinstance(payload, list):
            for item in payload:
                key = SeriesKey(*[str(x) for x in item["key"]])
                pins.append(Pin(key, str(item["reason"]), item.get("expires_at")))
        return cls(pins)


@dataclass
class PurgeReport:
    """Outcome of one purge transaction over the candidate series."""

    deleted_series: int = 0
    deleted_bytes: int = 0
    skipped_pinned: int = 0
    skipped_unprocessed: int = 0
    failed_series: list[SeriesKey] = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""


class Vault:
    """Hierarchical instance storage plus pins, quarantine, and purge."""

    def __init__(
        self,
        root: Path,
        metadata_root: Path | None = None,
        settle_window: float = DEFAULT_SETTLE_WINDOW,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.root = Path(root)
        self.metadata_root = Path(metadata_root) if metadata_root else self.root / ".meta"
        self.settle_window = settle_window
        self.clock = clock
        self.root.mkdir(parents=True, exist_ok=True)
        self.quarantine_dir = self.metadata_root / "quarantine"
        self._pins_path = self.metadata_root / "pins.json"
        self.pins = self._load_pins()

    # --- storing ------------------------------------------------------------

    def store_instance(self, event: StoreEvent) -> InstanceRecord:
        ds = event.dataset
        identity = {
            "PatientID": ds.get_scalar("PatientID"),
            "StudyInstanceUID": ds.get_scalar("StudyInstanceUID"),
            "SeriesInstanceUID": ds.get_scalar("SeriesInstanceUID"),
            "SOPInstanceUID": ds.get_scalar("SOPInstanceUID"),
        }
        missing = sorted(name for name, value in identity.items() if not value)
        if missing:
            quarantine_path = self._quarantine(event, missing)
            raise QuarantinedMissingIdentity(
                f"instance lacks {', '.join(missing)}; stored at {quarantine_path}",
                quarantine_path=quarantine_path,
            )
        key = SeriesKey.from_identifiers(
            identity["PatientID"], identity["StudyInstanceUID"], identity["SeriesInstanceUID"]
        )
        leaf = sanitize_component(identity["SOPInstanceUID"]) + ".dcm"
        relative = Path(key.patient_id, key.study_instance_uid, key.series_instance_uid, leaf)
        destination = self.root / relative
        destination.parent.mkdir(parents=True, exist_ok=True)
        meta = FileMetaInfo.for_dataset(ds, event.transfer_syntax)
        write_part10_bytes(meta, event.raw, destination)
        return InstanceRecord(
            key=key,
            sop_instance_uid=identity["SOPInstanceUID"],
            path=relative,
            stored_at=self.clock(),
            size=destination.stat().st_size,
        )

    def _quarantine(self, event: StoreEvent, missing: list[str]) -> Path:
        self.quarantine_dir.mkdir(parents=True, exist_ok=True)
        digest = hashlib.sha256(event.raw).hexdigest()[:16]
        base = self.quarantine_dir / digest
        blob = base.with_suffix(".dcm")
        fd, tmp_name = tempfile.mkstemp(dir=self.quarantine_dir, suffix=".part")
        with os.fdopen(fd, "wb") as handle:
            handle.write(event.raw)
        os.replace(tmp_name, blob)
        sidecar = {
            "missing": missing,
            "transfer_syntax": event.transfer_syntax,
            "sop_class_uid": event.sop_class_uid,
            "sop_instance_uid": event.sop_instance_uid,
            "calling_ae": event.calling_ae,
            "received_at": datetime.fromtimestamp(self.clock(), timezone.utc).isoformat(
                timespec="seconds"
            ),
        }
        base.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
        return blob

    def quarantine_series(self, key: SeriesKey, reason: str) -> Path:
        """Move a whole series out of the tree so scans stop offering it.

        Used when repeated header reads keep failing: the files are kept for
        inspection under the quarantine area instead of blocking every future
        extraction tick.
        """
        source = self.series_path(key)
        target_root = self.quarantine_dir / "series"
        target_root.mkdir(parents=True, exist_ok=True)
        target = target_root / "__".join(key.components())
        n = 1
        while target.exists():
            target = target_root / ("__".join(key.components()) + f".{n}")
            n += 1
        shutil.move(str(source), str(target))
        sidecar = {
            "reason": reason,
            "series": list(key.components()),
            "quarantined_at": datetime.fromtimestamp(self.clock(), timezone.utc).isoformat(
                timespec="seconds"
            ),
        }
        target.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
        self._prune_empty_parents(source.parent)
        return target

    def _prune_empty_parents(self, directory: Path) -> None:
        while directory != self.root:
            try:
                directory.rmdir()
            except OSError:
                return
            directory = directory.parent

    # --- enumeration ----------------------------------------------------------

    def list_series(self, now: float | None = None) -> set[SeriesKey]:
        """Every series with at least one settled instance file.

        A file younger than the settle window does not surface its series,
        so a series whose first instance is still mid-transfer is picked up
        on the next scan rather than half-read on this one.
        """
        moment = self.clock() if now is None else now
        threshold = moment - self.settle_window
        found: set[SeriesKey] = set()
        for patient_dir in self._subdirs(self.root):
            for study_dir in self._subdirs(patient_dir):
                for series_dir in self._subdirs(study_dir):
                    if self._has_settled_instance(series_dir, threshold):
                        found.add(
                            SeriesKey(patient_dir.name, study_dir.name, series_dir.name)
                        )
        return found

    @staticmethod
    def _subdirs(parent: Path) -> list[Path]:
        try:
            entries = sorted(parent.iterdir())
        except OSError:
            return []
        return [p for p in entries if p.is_dir() and not p.name.startswith(".")]

    @staticmethod
    def _has_settled_instance(series_dir: Path, threshold: float) -> bool:
        try:
            for entry in series_dir.iterdir():
                if entry.suffix == ".dcm" and entry.is_file():
                    if entry.stat().st_mtime <= threshold:
                        return True
        except OSError:
            return False
        return False

    def series_path(self, key: SeriesKey) -> Path:
        return self.root / key.patient_id / key.study_instance_uid / key.series_instance_uid

    def instance_path(self, key: SeriesKey, sop_instance_uid: str) -> Path:
        return self.series_path(key) / (sanitize_component(sop_instance_uid) + ".dcm")

    def instance_paths(self, key: SeriesKey) -> list[Path]:
        """Instance files of a series ordered by SOP instance UID."""
        series_dir = self.series_path(key)
        try:
            files = [p for p in series_dir.iterdir() if p.suffix == ".dcm" and p.is_file()]
        except OSError:
            return []
        return sorted(files, key=lambda p: p.stem)

    # --- pinning ----------------------------------------------------------------

    def pin(self, key: SeriesKey, reason: str = PIN_OF_INTEREST,
            expires_at: datetime | None = None) -> Pin:
        stamp = (
            expires_at.astimezone(timezone.utc).isoformat(timespec="seconds")
            if expires_at
            else None
        )
        pin = Pin(key, reason, stamp)
        self.pins.add(pin)
        self._save_pins()
        return pin

    def unpin(self, key: SeriesKey, reason: str = PIN_OF_INTEREST) -> int:
        removed = self.pins.remove(key, reason)
        if removed:
            self._save_pins()
        return removed

    def _load_pins(self) -> PinSet:
        if not self._pins_path.exists():
            return PinSet()
        payload = json.loads(self._pins_path.read_text(encoding="utf-8"))
        return PinSet.from_payload(payload)

    def _save_pins(self) -> None:
        self._pins_path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(self.pins.to_payload(), indent=2, sort_keys=True) + "\n"
        fd, tmp_name = tempfile.mkstemp(dir=self._pins_path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, self._pins_path)

    # --- purging ----------------------------------------------------------------

    def purge(
        self,
        state: ExtractionState,
        now: datetime | None = None,
        journal: Callable[[ExtractionState], None] | None = None,
        horizon: timedelta = DEFAULT_DELETED_HORIZON,
    ) -> PurgeReport:
        """Delete every unpinned processed series, moving it to the deleted set.

        The report partitions the candidates: every processed series is
        either deleted, skipped as pinned, or listed as failed; on-disk
        series outside the processed set are counted but never touched.
        """
        moment = now or datetime.now(timezone.utc)
        report = PurgeReport(started_at=moment.isoformat(timespec="seconds"))
        on_disk = self.list_series()
        candidates = sorted(state.processed)
        report.skipped_unprocessed = len(on_disk - state.processed)
        for key in candidates:
            if self.pins.is_pinned(key, moment):
                report.skipped_pinned += 1
                continue
            try:
                freed = self._delete_series(key)
            except OSError as exc:
                log.error("purge failed to remove %s: %s", key, exc)
                report.failed_series.append(key)
                continue
            state.mark_deleted(key, moment)
            report.deleted_series += 1
            report.deleted_bytes += freed
        state.compact_deleted(moment, horizon)
        state.last_purge_at = moment.astimezone(timezone.utc).isoformat(timespec="seconds")
        state.check_invariants()
        if journal is not None:
            journal(state)
        report.finished_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        if report.failed_series:
            raise PartialPurge(
                f"{len(report.failed_series)} series could not be deleted", report=report
            )
        return report

    def _delete_series(self, key: SeriesKey) -> int:
        series_dir = self.series_path(key)
        if not series_dir.exists():
            return 0
        freed = sum(p.stat().st_size for p in series_dir.rglob("*") if p.is_file())
        shutil.rmtree(series_dir)
        for parent in (series_dir.parent, series_dir.parent.parent):
            try:
                parent.rmdir()  # only succeeds when empty
            except OSError:
                break
        return freed
