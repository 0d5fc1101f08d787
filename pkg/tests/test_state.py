"""Tests for the processing-state model and its journal."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from niffler.errors import CorruptJournal
from niffler.state import ExtractionState, journal_load, journal_save
from niffler.vaultkeys import SeriesKey

NOW = datetime(2026, 8, 15, 12, 0, 0, tzinfo=timezone.utc)


def key(n: int) -> SeriesKey:
    return SeriesKey(f"P{n}", f"1.2.{n}", f"1.2.{n}.1")


class TestTransitions:
    def test_mark_processed_then_deleted(self):
        state = ExtractionState()
        state.mark_processed(key(1))
        assert state.is_known(key(1))
        state.mark_deleted(key(1), NOW)
        assert key(1) not in state.processed
        assert key(1) in state.deleted
        state.check_invariants()

    def test_processing_a_deleted_series_is_refused(self):
        state = ExtractionState()
        state.mark_processed(key(1))
        state.mark_deleted(key(1), NOW)
        with pytest.raises(ValueError):
            state.mark_processed(key(1))

    def test_deleting_an_unprocessed_series_is_refused(self):
        with pytest.raises(ValueError):
            ExtractionState().mark_deleted(key(1), NOW)

    def test_retry_counting_and_reset(self):
        state = ExtractionState()
        assert state.record_retry(key(2)) == 1
        assert state.record_retry(key(2)) == 2
        state.mark_processed(key(2))
        assert state.retries.get(key(2)) is None

    def test_compaction_drops_only_stale_entries(self):
        state = ExtractionState()
        for n, age_days in ((1, 10), (2, 100), (3, 91)):
            state.mark_processed(key(n))
            state.mark_deleted(key(n), NOW - timedelta(days=age_days))
        dropped = state.compact_deleted(NOW)
        assert dropped == 2
        assert set(state.deleted) == {key(1)}


class TestJournal:
    def test_missing_file_yields_empty_state(self, tmp_path):
        state = journal_load(tmp_path / "absent.json")
        assert state.processed == set()
        assert state.deleted == {}
        assert not (tmp_path / "absent.json").exists()

    def test_save_load_save_is_byte_identical(self, tmp_path):
        state = ExtractionState()
        for n in range(5):
            state.mark_processed(key(n))
        state.mark_deleted(key(0), NOW)
        state.record_retry(key(9))
        path = tmp_path / "journal.json"
        journal_save(state, path, now=NOW)
        first = path.read_bytes()
        reloaded = journal_load(path)
        journal_save(reloaded, path, now=NOW)
        assert path.read_bytes() == first

    def test_reload_preserves_every_field(self, tmp_path):
        state = ExtractionState()
        state.mark_processed(key(1))
        state.mark_processed(key(2))
        state.mark_deleted(key(1), NOW)
        state.record_retry(key(3))
        state.last_purge_at = "2026-08-14T23:59:00+00:00"
        path = journal_save(state, tmp_path / "j.json", now=NOW)
        loaded = journal_load(path)
        assert loaded.processed == {key(2)}
        assert loaded.deleted == {key(1): "2026-08-15T12:00:00+00:00"}
        assert loaded.retries == {key(3): 1}
        assert loaded.last_purge_at == "2026-08-14T23:59:00+00:00"
        assert loaded.last_journal_at == "2026-08-15T12:00:00+00:00"

    def test_corrupt_json_is_refused(self, tmp_path):
        path = tmp_path / "j.json"
        path.write_text("{ not json")
        with pytest.raises(CorruptJournal):
            journal_load(path)

    def test_wrong_schema_version_is_refused(self, tmp_path):
        path = tmp_path / "j.json"
        path.write_text('{"schema_version": 99, "processed": []}')
        with pytest.raises(CorruptJournal):
            journal_load(path)

    def test_overlapping_sets_are_refused(self, tmp_path):
        path = tmp_path / "j.json"
        path.write_text(
            '{"schema_version": 1,'
            ' "processed": [["P1", "1.2.1", "1.2.1.1"]],'
            ' "deleted": [{"key": ["P1", "1.2.1", "1.2.1.1"], "deleted_at": "2026-01-01T00:00:00+00:00"}]}'
        )
        with pytest.raises(CorruptJournal):
            journal_load(path)

    def test_malformed_key_is_refused(self, tmp_path):
        path = tmp_path / "j.json"
        path.write_text('{"schema_version": 1, "processed": [["only-two", "parts"]]}')
        with pytest.raises(CorruptJournal):
            journal_load(path)

    def test_save_never_leaves_a_partial_file(self, tmp_path):
        state = ExtractionState()
        state.mark_processed(key(1))
        path = tmp_path / "j.json"
        journal_save(state, path, now=NOW)
        leftovers = [p for p in tmp_path.iterdir() if p.suffix == ".tmp"]
        assert leftovers == []
        assert journal_load(path).processed == {key(1)}
