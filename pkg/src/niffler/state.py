"""Processing-state bookkeeping and its crash-safe journal.

The state tracks two disjoint sets of series keys: ``processed`` (metadata
extracted, files still on disk) and ``deleted`` (extracted and purged).
An extraction tick moves unknown series into ``processed``; a purge moves
unpinned processed series into ``deleted``.  Disjointness is enforced at
every transition, and the whole state round-trips through a versioned JSON
journal written atomically so a crash never leaves a half-written file.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from niffler.errors import CorruptJournal
from niffler.vaultkeys import SeriesKey

JOURNAL_SCHEMA_VERSION = 1

#: Deleted-set entries older than this are dropped at purge time; a series
#: received again after compaction is treated as new.
DEFAULT_DELETED_HORIZON = timedelta(days=90)


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


def _iso(moment: datetime) -> str:
    return moment.astimezone(timezone.utc).isoformat(timespec="seconds")


@dataclass
class ExtractionState:
    """The two processing sets plus per-series read-retry counters."""

    processed: set[SeriesKey] = field(default_factory=set)
    deleted: dict[SeriesKey, str] = field(default_factory=dict)
    retries: dict[SeriesKey, int] = field(default_factory=dict)
    last_purge_at: str | None = None
    last_journal_at: str | None = None
    schema_version: int = JOURNAL_SCHEMA_VERSION

    def is_known(self, key: SeriesKey) -> bool:
        return key in self.processed or key in self.deleted

    def mark_processed(self, key: SeriesKey) -> None:
        if key in self.deleted:
            raise ValueError(f"series {key} is already in the deleted set")
        self.processed.add(key)
        self.retries.pop(key, None)

    def mark_deleted(self, key: SeriesKey, when: datetime) -> None:
        if key not in self.processed:
            raise ValueError(f"series {key} is not in the processed set")
        self.processed.discard(key)
        self.deleted[key] = _iso(when)

    def record_retry(self, key: SeriesKey) -> int:
        count = self.retries.get(key, 0) + 1
        self.retries[key] = count
        return count

    def clear_retries(self, key: SeriesKey) -> None:
        self.retries.pop(key, None)

    def compact_deleted(self, now: datetime, horizon: timedelta = DEFAULT_DELETED_HORIZON) -> int:
        """Drop deleted-set entries older than the horizon; returns the count."""
        cutoff = now.astimezone(timezone.utc) - horizon
        stale = [
            key
            for key, stamp in self.deleted.items()
            if datetime.fromisoformat(stamp) < cutoff
        ]
        for key in stale:
            del self.deleted[key]
        return len(stale)

    def check_invariants(self) -> None:
        overlap = self.processed & set(self.deleted)
        if overlap:
            raise ValueError(f"processed and deleted sets overlap: {sorted(overlap)[:3]}")

    def snapshot(self) -> "ExtractionState":
        return ExtractionState(
            processed=set(self.processed),
            deleted=dict(self.deleted),
            retries=dict(self.retries),
            last_purge_at=self.last_purge_at,
            last_journal_at=self.last_journal_at,
            schema_version=self.schema_version,
        )


def _key_to_list(key: SeriesKey) -> list[str]:
    return [key.patient_id, key.study_instance_uid, key.series_instance_uid]


def _key_from_list(raw: object) -> SeriesKey:
    if not isinstance(raw, list) or len(raw) != 3 or not all(isinstance(x, str) for x in raw):
        raise CorruptJournal(f"series key is not a three-string list: {raw!r}")
    return SeriesKey(raw[0], raw[1], raw[2])


def journal_save(state: ExtractionState, path: Path, now: datetime | None = None) -> Path:
    """Write the state as canonical JSON via temp-file-then-rename."""
    moment = now or _utc_now()
    state.check_invariants()
    state.last_journal_at = _iso(moment)
    payload = {
        "schema_version": state.schema_version,
        "saved_at": state.last_journal_at,
        "last_purge_at": state.last_purge_at,
        "processed": sorted(_key_to_list(k) for k in state.processed),
        "deleted": [
            {"key": _key_to_list(k), "deleted_at": stamp}
            for k, stamp in sorted(state.deleted.items())
        ],
        "retries": [
            {"key": _key_to_list(k), "count": count}
            for k, count in sorted(state.retries.items())
            if count > 0
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return path


def journal_load(path: Path) -> ExtractionState:
    """Load a journal; an absent file yields a fresh empty state.

    A file that exists but cannot be decoded raises :class:`CorruptJournal`
    so the operator decides — the service never silently reinitializes over
    state it cannot read.
    """
    path = Path(path)
    if not path.exists():
        return ExtractionState()
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CorruptJournal(f"cannot decode journal {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise CorruptJournal(f"journal {path} is not a JSON object")
    version = payload.get("schema_version")
    if version != JOURNAL_SCHEMA_VERSION:
        raise CorruptJournal(f"journal {path} has unsupported schema version {version!r}")
    try:
        processed = {_key_from_list(item) for item in payload.get("processed", [])}
        deleted = {
            _key_from_list(item["key"]): str(item["deleted_at"])
            for item in payload.get("deleted", [])
        }
        retries = {
            _key_from_list(item["key"]): int(item["count"])
            for item in payload.get("retries", [])
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptJournal(f"journal {path} has malformed entries: {exc}") from exc
    state = ExtractionState(
        processed=processed,
        deleted=deleted,
        retries=retries,
        last_purge_at=payload.get("last_purge_at"),
        last_journal_at=payload.get("saved_at"),
    )
    try:
        state.check_invariants()
    except ValueError as exc:
        raise CorruptJournal(f"journal {path} violates invariants: {exc}") from exc
    return state
