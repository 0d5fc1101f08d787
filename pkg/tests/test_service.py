"""The integrated service: purge scheduling, lifecycle, coordinated operations."""

import threading
import time
from datetime import datetime, timedelta, timezone

import httpx
import pytest

from niffler.config import ServiceConfig
from niffler.errors import CorruptJournal
from niffler.net.scu import RemotePeer, send_c_echo
from niffler.service import (
    CATCH_UP_AFTER,
    GatewayService,
    PurgeScheduler,
    next_purge_fire,
    purge_overdue,
)
from niffler.simulate import Noise, StudySpec, generate_corpus, stream
from niffler.state import ExtractionState, journal_load, journal_save

UTC = timezone.utc


def wait_until(predicate, timeout: float = 5.0, interval: float = 0.01) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return predicate()


class TestPurgeMath:
    def test_next_fire_later_today(self):
        now = datetime(2026, 3, 1, 10, 0, tzinfo=UTC)
        assert next_purge_fire(now, 23, 59) == datetime(2026, 3, 1, 23, 59, tzinfo=UTC)

    def test_next_fire_rolls_to_tomorrow(self):
        now = datetime(2026, 3, 1, 23, 59, 30, tzinfo=UTC)
        assert next_purge_fire(now, 23, 59) == datetime(2026, 3, 2, 23, 59, tzinfo=UTC)

    def test_next_fire_is_strictly_after_now(self):
        now = datetime(2026, 3, 1, 12, 0, tzinfo=UTC)
        assert next_purge_fire(now, 12, 0) == datetime(2026, 3, 2, 12, 0, tzinfo=UTC)

    def test_no_catch_up_without_a_previous_purge(self):
        assert not purge_overdue(None, datetime.now(UTC))

    def test_catch_up_when_last_purge_is_stale(self):
        now = datetime(2026, 3, 1, 10, 0, tzinfo=UTC)
        stale = (now - CATCH_UP_AFTER - timedelta(hours=1)).isoformat()
        fresh = (now - CATCH_UP_AFTER + timedelta(hours=1)).isoformat()
        assert purge_overdue(stale, now)
        assert not purge_overdue(fresh, now)


class ManualClock:
    def __init__(self, start: datetime) -> None:
        self.now = start

    def __call__(self) -> datetime:
        return self.now


class TestPurgeScheduler:
    def test_fires_once_per_day_at_the_scheduled_time(self):
        clock = ManualClock(datetime(2026, 3, 1, 12, 0, tzinfo=UTC))
        fired = []
        scheduler = PurgeScheduler(lambda: fired.append(clock.now), 12, 30,
                                   now_fn=clock, poll=0.005).start()
        try:
            time.sleep(0.05)
            assert not fired
            clock.now = datetime(2026, 3, 1, 12, 31, tzinfo=UTC)
            assert wait_until(lambda: len(fired) == 1)
            time.sleep(0.05)
            assert len(fired) == 1  # does not refire within the same day
            clock.now = datetime(2026, 3, 2, 12, 31, tzinfo=UTC)
            assert wait_until(lambda: len(fired) == 2)
        finally:
            scheduler.stop()

    def test_catch_up_fires_exactly_once_at_start(self):
        clock = ManualClock(datetime(2026, 3, 1, 1, 0, tzinfo=UTC))
        fired = []
        scheduler = PurgeScheduler(lambda: fired.append(clock.now), 23, 59,
                                   catch_up=True, now_fn=clock, poll=0.005).start()
        try:
            assert wait_until(lambda: len(fired) == 1)
            time.sleep(0.05)
            assert len(fired) == 1
        finally:
            scheduler.stop()

    def test_keeps_running_after_a_failed_fire(self):
        clock = ManualClock(datetime(2026, 3, 1, 1, 0, tzinfo=UTC))

        def explode():
            raise RuntimeError("purge blew up")

        scheduler = PurgeScheduler(explode, 2, 0, catch_up=True,
                                   now_fn=clock, poll=0.005).start()
        try:
            assert wait_until(lambda: scheduler.fired == 1)
            clock.now = datetime(2026, 3, 1, 2, 1, tzinfo=UTC)
            assert wait_until(lambda: scheduler.fired == 2)
        finally:
            scheduler.stop()


def service_config(root, **overrides) -> ServiceConfig:
    settings = dict(
        vault_root=root / "vault",
        journal_path=root / "journal.json",
        profile_dir=root / "profiles",
        store_dir=root / "store",
        export_dir=root / "exports",
        jobs_dir=root / "jobs",
        api_token="svc-token",
        listener_port=0,
        api_port=0,
        extraction_interval=3600.0,
        journal_interval=3600.0,
    )
    settings.update(overrides)
    return ServiceConfig(**settings)


@pytest.fixture
def make_service(tmp_path):
    started: list[GatewayService] = []

    def _make(**overrides) -> GatewayService:
        now_fn = overrides.pop("now_fn", None)
        service = GatewayService(service_config(tmp_path, **overrides), now_fn=now_fn)
        started.append(service)
        return service.start()

    yield _make
    for service in started:
        service.stop()


def api_url(service: GatewayService, path: str) -> str:
    return f"http://127.0.0.1:{service.api_port}{path}"


class TestGatewayService:
    def test_api_reachable_within_two_seconds_of_start(self, tmp_path):
        service = GatewayService(service_config(tmp_path))
        begin = time.monotonic()
        service.start()
        try:
            response = httpx.get(api_url(service, "/metrics"), timeout=2.0)
            elapsed = time.monotonic() - begin
        finally:
            service.stop()
        assert response.status_code == 200
        assert elapsed < 2.0
        body = response.json()
        assert body["instances_received_total"] == 0
        assert body["series_processed"] == 0
        assert body["series_deleted"] == 0

    def test_listener_answers_echo(self, make_service):
        service = make_service()
        peer = RemotePeer("127.0.0.1", service.listener_port,
                          called_ae=service.config.listener_ae, calling_ae="PROBE")
        assert send_c_echo(peer) == 0

    def test_ingest_extract_query_purge_lifecycle(self, tmp_path, make_service):
        service = make_service()
        service.vault.settle_window = 0.0  # settling behavior is covered elsewhere
        spec = StudySpec(patient_count=1, studies_per_patient=1, series_per_study=2,
                         instances_per_series=2, rng_seed=31, pattern=Noise())
        corpus = generate_corpus(spec, tmp_path / "corpus")
        (service.config.profile_dir / "chest.txt").write_text(
            "PatientID\nModality\nRows\n"
        )

        peer = RemotePeer("127.0.0.1", service.listener_port,
                          called_ae=service.config.listener_ae, calling_ae="MODALITY")
        report = stream(peer, corpus, rate=1000.0)
        assert report.sent == 4 and not report.failed

        tick = service.extract_now()
        assert tick == {"discovered": 2, "processed": 2, "documents": 2,
                        "failures": 0, "profiles": 1}

        # A second tick rediscovers the same series but processes nothing new.
        again = service.extract_now()
        assert again["processed"] == 0 and again["documents"] == 0

        # The tick journaled before returning.
        journaled = journal_load(service.config.journal_path)
        assert journaled.processed == service.state.processed
        assert len(journaled.processed) == 2

        metrics = httpx.get(api_url(service, "/metrics"), timeout=5.0).json()
        assert metrics["instances_received_total"] == 4
        assert metrics["series_processed"] == 2
        assert metrics["series_deleted"] == 0
        assert metrics["last_extraction_at"] is not None
        assert metrics["series_processed"] + metrics["series_deleted"] == (
            len(service.state.processed) + len(service.state.deleted)
        )

        found = httpx.post(api_url(service, "/query"),
                           json={"collection": "chest"}, timeout=5.0).json()
        assert found["count"] == 2
        assert all(doc["Modality"] for doc in found["documents"])

        purge = service.purge_now()
        assert purge["deleted_series"] == 2
        assert purge["skipped_pinned"] == 0
        assert service.vault.list_series() == set()
        assert journal_load(service.config.journal_path).deleted.keys() == \
            service.state.deleted.keys()

        metrics = httpx.get(api_url(service, "/metrics"), timeout=5.0).json()
        assert metrics["series_processed"] == 0
        assert metrics["series_deleted"] == 2
        assert metrics["last_purge_at"] is not None

        assert service.purge_now()["deleted_series"] == 0  # purge is idempotent

    def test_extract_tick_with_nothing_to_do(self, make_service):
        service = make_service()
        assert service.extract_now() == {"discovered": 0, "processed": 0,
                                         "documents": 0, "failures": 0, "profiles": 0}

    def test_corrupt_journal_rejected_before_anything_binds(self, tmp_path):
        config = service_config(tmp_path)
        config.journal_path.write_text("{broken")
        with pytest.raises(CorruptJournal):
            GatewayService(config)

    def test_stale_journal_triggers_catch_up_purge_at_startup(self, tmp_path):
        fixed_now = datetime(2026, 3, 1, 10, 0, tzinfo=UTC)
        config = service_config(tmp_path)
        state = ExtractionState()
        state.last_purge_at = (fixed_now - timedelta(hours=30)).isoformat()
        journal_save(state, config.journal_path)

        service = GatewayService(config, now_fn=lambda: fixed_now).start()
        try:
            stamp = fixed_now.isoformat(timespec="seconds")
            assert wait_until(
                lambda: service.metrics_snapshot().last_purge_at == stamp
            )
        finally:
            service.stop()

    def test_fresh_journal_does_not_catch_up(self, make_service):
        service = make_service()
        time.sleep(0.3)
        assert service.metrics_snapshot().last_purge_at is None

    def test_config_plugins_join_the_registry(self, make_service):
        service = make_service(plugins=(("custom-det", "/opt/custom.py"),))
        assert "custom-det" in service.runner.registry
        assert "stub-detector" in service.runner.registry

    def test_run_forever_stops_cleanly_and_flushes_journal(self, tmp_path):
        config = service_config(tmp_path)
        service = GatewayService(config)
        up = threading.Event()
        runner = threading.Thread(
            target=lambda: service.run_forever(on_started=lambda _svc: up.set()),
            daemon=True,
        )
        runner.start()
        assert up.wait(10.0)
        api_port = service.api_port
        assert httpx.get(f"http://127.0.0.1:{api_port}/metrics",
                         timeout=5.0).status_code == 200

        service.request_stop()
        runner.join(10.0)
        assert not runner.is_alive()
        assert journal_load(config.journal_path).processed == set()
        with pytest.raises(httpx.ConnectError):
            httpx.get(f"http://127.0.0.1:{api_port}/metrics", timeout=1.0)
