"""The integrated long-running service.

One process hosts the DICOM listener, the periodic metadata-extraction
loop, the periodic journal flush, the nightly purge, the job runner, and
the HTTP API.  Extraction, purge, and journal writes all mutate the shared
processing state, so a single coordinator lock serializes them; everything
else runs concurrently.
"""

from __future__ import annotations

import logging
import signal
import threading
from datetime import datetime, timedelta, timezone
from pathlib import Path

from niffler.config import ServiceConfig
from niffler.extractor import ExtractionLoop, extract_once, load_profiles
from niffler.gateway import AdminHooks, ApiConfig, ApiServer, MetricsSnapshot, create_app
from niffler.inference import JobRunner, PluginSpec, default_registry
from niffler.net.association import AssociationConfig
from niffler.net.scp import ScpServer, StoreEvent
from niffler.state import ExtractionState, journal_load, journal_save
from niffler.store import MetadataStore
from niffler.vault import Vault

log = logging.getLogger(__name__)

#: A missed nightly purge fires once at startup if the last one is older
#: than this.
CATCH_UP_AFTER = timedelta(hours=20)


class ServiceMetrics:
    """Listener observer plus the counters the /metrics route reports."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.associations_active = 0
        self.instances_received_total = 0
        self.bytes_received_total = 0
        self.last_extraction_at: str | None = None

    def association_opened(self, calling_ae: str, host: str) -> None:
        with self._lock:
            self.associations_active += 1

    def association_closed(self, calling_ae: str, host: str) -> None:
        with self._lock:
            self.associations_active -= 1

    def instance_received(self, sop_instance_uid: str, nbytes: int) -> None:
        with self._lock:
            self.instances_received_total += 1
            self.bytes_received_total += nbytes

    def instance_failed(self, sop_instance_uid: str, status: int) -> None:
        pass

    def mark_extraction(self, stamp: str) -> None:
        with self._lock:
            self.last_extraction_at = stamp


def next_purge_fire(now: datetime, hour: int, minute: int) -> datetime:
    """The next wall-clock moment the daily purge is due, strictly after now."""
    candidate = now.replace(hour=hour, minute=minute, second=0, microsecond=0)
    if candidate <= now:
        candidate += timedelta(days=1)
    return candidate


def purge_overdue(last_purge_at: str | None, now: datetime) -> bool:
    """Whether a catch-up purge should fire at startup."""
    if last_purge_at is None:
        return False
    return now - datetime.fromisoformat(last_purge_at) > CATCH_UP_AFTER


class PurgeScheduler:
    """Fires a callable daily at a fixed wall-clock time.

    The clock is injectable so schedules can be tested without waiting; a
    catch-up decision for missed runs is made once at start.
    """

    def __init__(self, fire, hour: int, minute: int, *, catch_up: bool = False,
                 now_fn=None, poll: float = 0.5) -> None:
        self._fire = fire
        self._hour = hour
        self._minute = minute
        self._catch_up = catch_up
        self._now = now_fn or (lambda: datetime.now(timezone.utc))
        self._poll = poll
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.fired = 0

    def start(self) -> "PurgeScheduler":
        self._thread = threading.Thread(target=self._run, name="purge-scheduler", daemon=True)
        self._thread.start()
        return self

    def _run(self) -> None:
        if self._catch_up:
            self._fire_once()
        due = next_purge_fire(self._now(), self._hour, self._minute)
        while not self._stop.wait(self._poll):
            now = self._now()
            if now >= due:
                self._fire_once()
                due = next_purge_fire(now, self._hour, self._minute)

    def _fire_once(self) -> None:
        try:
            self._fire()
        except Exception:
            log.exception("scheduled purge failed; scheduler continues")
        self.fired += 1

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)


class GatewayService:
    """Builds the component graph from a config; binds nothing until start().

    Construction validates everything that can fail early (journal load,
    directory creation, plugin registry); ``start`` then brings up the
    listener, the loops, and the API server.
    """

    def __init__(self, config: ServiceConfig, *, now_fn=None) -> None:
        self.config = config
        self._now = now_fn or (lambda: datetime.now(timezone.utc))
        self._lock = threading.Lock()  # serializes extract / purge / journal
        self._stop_requested = threading.Event()

        self.state: ExtractionState = journal_load(config.journal_path)
        self.vault = Vault(config.vault_root)
        self.store = MetadataStore(config.store_dir)
        Path(config.profile_dir).mkdir(parents=True, exist_ok=True)
        Path(config.export_dir).mkdir(parents=True, exist_ok=True)

        registry = dict(default_registry())
        for name, command in config.plugins:
            registry[name] = PluginSpec(command=command)
        self.runner = JobRunner(self.vault, self.store, config.jobs_dir, registry=registry)

        self.metrics = ServiceMetrics()
        self.listener = ScpServer(
            AssociationConfig(
                ae_title=config.listener_ae,
                accepted_callers=frozenset(config.listener_allow) or None,
            ),
            sink=self._receive,
            host="0.0.0.0",
            port=config.listener_port,
            observer=self.metrics,
        )

        self._extraction_loop = ExtractionLoop(self.extract_now, config.extraction_interval)
        self._journal_loop = ExtractionLoop(self.journal_now, config.journal_interval)
        hour, minute = config.purge_hhmm()
        self._purge_scheduler = PurgeScheduler(
            self.purge_now,
            hour,
            minute,
            catch_up=purge_overdue(self.state.last_purge_at, self._now()),
            now_fn=self._now,
        )

        api_config = ApiConfig(
            token=config.api_token,
            export_dir=config.export_dir,
            host=config.api_host,
            port=config.api_port,
        )
        app = create_app(
            api_config,
            self.store,
            self.vault,
            self.runner,
            metrics=self.metrics_snapshot,
            admin=AdminHooks(extract_once=self.extract_now, purge_now=self.purge_now),
        )
        self.api = ApiServer(app, host=config.api_host, port=config.api_port)

    # --- lifecycle -------------------------------------------------------

    def start(self) -> "GatewayService":
        self.listener.start()
        self.api.start()
        self._extraction_loop.start()
        self._journal_loop.start()
        self._purge_scheduler.start()
        log.info(
            "service up: DICOM %s@%d, API %s:%d",
            self.config.listener_ae,
            self.listener.port,
            self.config.api_host,
            self.api.port,
        )
        return self

    def stop(self) -> None:
        """Graceful shutdown: stop intake, finish the in-flight tick, flush."""
        self.listener.stop()
        self._extraction_loop.stop()
        self._journal_loop.stop()
        self._purge_scheduler.stop()
        self.runner.stop()
        with self._lock:
            journal_save(self.state, self.config.journal_path, now=self._now())
        self.api.stop()
        self.store.close()

    def request_stop(self) -> None:
        self._stop_requested.set()

    def run_forever(self, on_started=None) -> None:
        """start(), block until a termination signal, then stop()."""
        if threading.current_thread() is threading.main_thread():
            for signum in (signal.SIGTERM, signal.SIGINT):
                signal.signal(signum, lambda _sig, _frame: self.request_stop())
        self.start()
        try:
            if on_started is not None:
                on_started(self)
            self._stop_requested.wait()
        finally:
            self.stop()

    @property
    def listener_port(self) -> int:
        return self.listener.port

    @property
    def api_port(self) -> int:
        return self.api.port

    # --- ingest ----------------------------------------------------------

    def _receive(self, event: StoreEvent) -> None:
        self.vault.store_instance(event)

    # --- coordinated operations -------------------------------------------

    def extract_now(self) -> dict:
        """One extraction tick followed by a journal write."""
        with self._lock:
            profiles = load_profiles(self.config.profile_dir)
            batch = extract_once(self.vault, profiles, self.state, self.store,
                                 now=self._now())
            journal_save(self.state, self.config.journal_path, now=self._now())
        self.metrics.mark_extraction(batch.finished_at)
        return {
            "discovered": batch.discovered,
            "processed": len(batch.processed),
            "documents": batch.documents,
            "failures": len(batch.failures),
            "profiles": len(profiles),
        }

    def purge_now(self) -> dict:
        """One purge transaction; the journal is written before it returns."""
        with self._lock:
            report = self.vault.purge(
                self.state,
                now=self._now(),
                journal=lambda state: journal_save(
                    state, self.config.journal_path, now=self._now()
                ),
            )
        return {
            "deleted_series": report.deleted_series,
            "deleted_bytes": report.deleted_bytes,
            "skipped_pinned": report.skipped_pinned,
            "skipped_unprocessed": report.skipped_unprocessed,
        }

    def journal_now(self) -> dict:
        with self._lock:
            journal_save(self.state, self.config.journal_path, now=self._now())
            return {
                "processed": len(self.state.processed),
                "deleted": len(self.state.deleted),
            }

    def metrics_snapshot(self) -> MetricsSnapshot:
        with self._lock:
            series_processed = len(self.state.processed)
            series_deleted = len(self.state.deleted)
            last_purge_at = self.state.last_purge_at
        return MetricsSnapshot(
            associations_active=self.metrics.associations_active,
            instances_received_total=self.metrics.instances_received_total,
            bytes_received_total=self.metrics.bytes_received_total,
            series_processed=series_processed,
            series_deleted=series_deleted,
            last_extraction_at=self.metrics.last_extraction_at,
            last_purge_at=last_purge_at,
            jobs_by_state=self.runner.jobs_by_state(),
        )
