"""Profile-driven metadata extraction over stored series.

Each tick discovers series in the vault, skips those already processed or
deleted, reads the headers of policy-selected instances, and upserts one
flat document per (profile, instance) into the document store.  A series
joins the processed set only after every one of its documents has been
upserted, so a crash mid-tick re-extracts the series and the store's
keyed upserts absorb the duplicates.
"""

from __future__ import annotations

import enum
import logging
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from math import floor
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol, Sequence, TypeVar

from niffler.dicom.dataset import DicomDataset, Tag
from niffler.dicom.parse import read_part10_file
from niffler.dicom.tags import keyword_for_tag, resolve_identifier
from niffler.dicom.vr import VR
from niffler.errors import (
    ConfigError,
    DicomError,
    InvalidProfile,
    StoreError,
    UnknownKeyword,
)
from niffler.state import ExtractionState
from niffler.vault import Vault
from niffler.vaultkeys import SeriesKey

log = logging.getLogger(__name__)

T = TypeVar("T")

#: Header read failures per series before the series is quarantined.
RETRY_CAP = 5

#: Fields copied into every document regardless of profile content.
IDENTITY_FIELDS = (
    "PatientID",
    "StudyInstanceUID",
    "SeriesInstanceUID",
    "SOPInstanceUID",
)

DEFAULT_EXTRACTION_INTERVAL = 600.0


class DocumentSink(Protocol):
    def upsert(self, collection: str, doc: dict) -> bool: ...


@dataclass(frozen=True)
class ExtractionProfile:
    """A named attribute list; the name doubles as the collection name."""

    name: str
    attributes: tuple[str, ...]


class SelectionPolicy(enum.Enum):
    """Which instances of a series contribute documents."""

    FIRST = "first"
    FIRST_MIDDLE_LAST = "first-middle-last"
    ALL = "all"

    def select(self, ordered: Sequence[T]) -> list[T]:
        items = list(ordered)
        if not items or self is SelectionPolicy.ALL:
            return items
        if self is SelectionPolicy.FIRST:
            return items[:1]
        picks = sorted({0, len(items) // 2, len(items) - 1})
        return [items[i] for i in picks]


@dataclass(frozen=True)
class SeriesFailure:
    """One series whose header reads failed this tick."""

    key: SeriesKey
    error: str
    attempts: int
    quarantined: bool


@dataclass(frozen=True)
class ExtractionBatch:
    """Outcome of one extraction tick."""

    discovered: int
    processed: tuple[SeriesKey, ...]
    documents: int
    failures: tuple[SeriesFailure, ...]
    started_at: str
    finished_at: str


def parse_profile_text(name: str, text: str) -> ExtractionProfile:
    """Parse one profile body: one attribute per line, ``#`` comments.

    Identifiers are canonicalized to dictionary keywords (or the
    ``(GGGG,EEEE)`` form when no keyword exists), so document field names
    do not depend on how the profile spelled the attribute.
    """
    attributes: list[str] = []
    seen: set[str] = set()
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            group, element = resolve_identifier(line)
        except UnknownKeyword as exc:
            raise InvalidProfile(f"profile {name!r} line {line_no}: {exc}") from exc
        canonical = keyword_for_tag(group, element) or str(Tag(group, element))
        if canonical not in seen:
            seen.add(canonical)
            attributes.append(canonical)
    if not attributes:
        raise InvalidProfile(f"profile {name!r} lists no attributes")
    return ExtractionProfile(name=name, attributes=tuple(attributes))


def load_profiles(directory: Path) -> list[ExtractionProfile]:
    """One profile per ``*.txt`` file; invalid files are skipped with a log.

    Called fresh on every tick so profiles dropped into the directory take
    effect without a restart.
    """
    profiles: list[ExtractionProfile] = []
    for path in sorted(Path(directory).glob("*.txt")):
        try:
            profiles.append(parse_profile_text(path.stem, path.read_text(encoding="utf-8")))
        except (InvalidProfile, OSError, UnicodeDecodeError) as exc:
            log.warning("skipping profile file %s: %s", path.name, exc)
    return profiles


def build_document(profile: ExtractionProfile, ds: DicomDataset, extracted_at: str) -> dict:
    """Flatten the profile's attributes out of one header.

    Absent attributes are omitted; single values become strings and
    multi-values become string arrays.  Sequence and bulk-data elements
    carry no flat representation and are skipped.
    """
    doc: dict[str, object] = {}
    for attribute in profile.attributes:
        element = ds.element(attribute)
        if element is None or element.vr is VR.SQ:
            continue
        value = element.value
        if isinstance(value, bytes):
            continue
        values = [str(v) for v in value] if isinstance(value, list) else [str(value)]
        if not values:
            continue
        doc[attribute] = values[0] if len(values) == 1 else values
    for field_name in IDENTITY_FIELDS:
        scalar = ds.get_scalar(field_name)
        if scalar is not None:
            doc[field_name] = scalar
    doc["extracted_at"] = extracted_at
    return doc


def extract_once(
    vault: Vault,
    profiles: Sequence[ExtractionProfile],
    state: ExtractionState,
    store: DocumentSink,
    policy: SelectionPolicy = SelectionPolicy.FIRST,
    now: datetime | None = None,
) -> ExtractionBatch:
    """Run one extraction pass; mutates ``state`` for each finished series.

    With no profiles loaded the pass is a no-op: nothing is read and no
    series is marked processed, so profiles added later still see today's
    series.
    """
    started = now or datetime.now(timezone.utc)
    stamp = started.astimezone(timezone.utc).isoformat(timespec="seconds")
    discovered = vault.list_series()
    if not profiles:
        return ExtractionBatch(len(discovered), (), 0, (), stamp, stamp)

    candidates = sorted(k for k in discovered if not state.is_known(k))
    processed: list[SeriesKey] = []
    failures: list[SeriesFailure] = []
    documents = 0
    for key in candidates:
        selected = policy.select(vault.instance_paths(key))
        try:
            if not selected:
                raise DicomError("series directory holds no instance files")
            headers = [read_part10_file(path)[1] for path in selected]
            for profile in profiles:
                for header in headers:
                    store.upsert(profile.name, build_document(profile, header, stamp))
                    documents += 1
        except (DicomError, StoreError, OSError) as exc:
            attempts = state.record_retry(key)
            quarantined = attempts >= RETRY_CAP
            if quarantined:
                vault.quarantine_series(key, f"unreadable after {attempts} attempts: {exc}")
                state.clear_retries(key)
                log.error("quarantined series %s after %d attempts: %s", key, attempts, exc)
            else:
                log.warning("extraction failed for %s (attempt %d): %s", key, attempts, exc)
            failures.append(SeriesFailure(key, str(exc), attempts, quarantined))
            continue
        state.mark_processed(key)
        processed.append(key)

    finished = datetime.now(timezone.utc) if now is None else now
    return ExtractionBatch(
        discovered=len(discovered),
        processed=tuple(processed),
        documents=documents,
        failures=tuple(failures),
        started_at=stamp,
        finished_at=finished.astimezone(timezone.utc).isoformat(timespec="seconds"),
    )


def _next_due(start: float, end: float, interval: float) -> float:
    """First schedule slot after a tick that ran [start, end].

    Slots are the multiples of ``interval``.  Slots that came due while the
    tick was still running are skipped; a tick ending exactly on a slot
    runs that slot.
    """
    next_slot_after_start = (floor(start / interval) + 1) * interval
    first_slot_at_or_after_end = -(-end // interval) * interval  # ceil
    return max(next_slot_after_start, first_slot_at_or_after_end)


def plan_ticks(
    interval: float, durations: Iterable[float], horizon: float
) -> list[tuple[float, float]]:
    """Simulate the single-flight schedule; returns (start, end) per tick.

    Pure function over a duration sequence so schedules can be checked
    without clocks or threads: the first tick starts at t=0, and each
    subsequent tick starts at the first slot not covered by a running one.
    """
    if interval <= 0:
        raise ConfigError("extraction interval must be positive")
    executed: list[tuple[float, float]] = []
    t = 0.0
    it: Iterator[float] = iter(durations)
    while t < horizon:
        duration = next(it, None)
        if duration is None:
            break
        executed.append((t, t + duration))
        t = _next_due(t, t + duration, interval)
    return executed


class ExtractionLoop:
    """Fires a tick callable on the slot schedule in a daemon thread.

    Single-flight falls out of the structure: one thread runs ticks, and
    slots that pass while a tick is running are dropped by ``_next_due``.
    Tick exceptions are logged and the loop keeps going.
    """

    def __init__(
        self,
        tick: Callable[[], object],
        interval: float = DEFAULT_EXTRACTION_INTERVAL,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        if interval <= 0:
            raise ConfigError("extraction interval must be positive")
        self._tick = tick
        self._interval = interval
        self._clock = clock
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.ticks_run = 0

    def start(self) -> "ExtractionLoop":
        self._thread = threading.Thread(target=self._run, name="extraction-loop", daemon=True)
        self._thread.start()
        return self

    def _run(self) -> None:
        origin = self._clock()
        while not self._stop.is_set():
            start = self._clock() - origin
            try:
                self._tick()
            except Exception:
                log.exception("extraction tick failed; loop continues")
            self.ticks_run += 1
            end = self._clock() - origin
            due = _next_due(start, max(start, end), self._interval)
            delay = max(0.0, due - (self._clock() - origin))
            if self._stop.wait(delay):
                break

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)
