"""Tests for profile loading, the extraction pass, and its schedule."""

from __future__ import annotations

import random
import threading
import time
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import pytest

from helpers import store_event
from niffler.errors import ConfigError, InvalidProfile
from niffler.extractor import (
    ExtractionLoop,
    SelectionPolicy,
    build_document,
    extract_once,
    load_profiles,
    parse_profile_text,
    plan_ticks,
)
from niffler.state import ExtractionState
from niffler.vault import Vault
from niffler.vaultkeys import SeriesKey

NOW = datetime(2026, 8, 15, 12, 0, 0, tzinfo=timezone.utc)


class MemoryStore:
    """Minimal document sink: keyed dict per collection."""

    def __init__(self, fail: bool = False):
        self.collections: dict[str, dict[str, dict]] = {}
        self.fail = fail

    def upsert(self, collection: str, doc: dict) -> bool:
        if self.fail:
            raise OSError("store unavailable")
        bucket = self.collections.setdefault(collection, {})
        fresh = doc["SOPInstanceUID"] not in bucket
        bucket[doc["SOPInstanceUID"]] = doc
        return fresh


@pytest.fixture
def vault(tmp_path):
    return Vault(tmp_path / "vault", settle_window=0.0)


def seed_series(vault, patient, study, series, n_instances=1, **attrs):
    key = None
    for i in range(1, n_instances + 1):
        event = store_event(patient, study, series, f"{series}.{i}", extra=attrs or None)
        key = vault.store_instance(event).key
    return key


class TestProfiles:
    def test_parse_names_comments_and_blanks(self, tmp_path):
        (tmp_path / "ivc_cohort.txt").write_text(
            "# attributes for the IVC cohort\n"
            "Modality\n"
            "\n"
            "BodyPartExamined  # anatomical region\n"
            "Manufacturer\n"
        )
        profiles = load_profiles(tmp_path)
        assert len(profiles) == 1
        assert profiles[0].name == "ivc_cohort"
        assert profiles[0].attributes == ("Modality", "BodyPartExamined", "Manufacturer")

    def test_explicit_tag_form_is_canonicalized(self):
        profile = parse_profile_text("p", "(0008,0060)\n(0009,0001)\n")
        assert profile.attributes == ("Modality", "(0009,0001)")

    def test_unresolvable_keyword_is_invalid(self):
        with pytest.raises(InvalidProfile) as exc_info:
            parse_profile_text("p", "Modality\nNotARealAttribute\n")
        assert "line 2" in str(exc_info.value)

    def test_empty_profile_is_invalid(self):
        with pytest.raises(InvalidProfile):
            parse_profile_text("p", "# only comments\n\n")

    def test_bad_file_skipped_others_load(self, tmp_path):
        (tmp_path / "good.txt").write_text("Modality\n")
        (tmp_path / "bad.txt").write_text("NoSuchKeyword\n")
        profiles = load_profiles(tmp_path)
        assert [p.name for p in profiles] == ["good"]

    def test_empty_directory(self, tmp_path):
        assert load_profiles(tmp_path) == []

    def test_duplicate_lines_collapse(self):
        profile = parse_profile_text("p", "Modality\n(0008,0060)\nModality\n")
        assert profile.attributes == ("Modality",)


class TestSelectionPolicy:
    def test_counts_per_mode(self):
        for n in (1, 2, 3, 4, 9):
            items = [f"i{k:02d}" for k in range(n)]
            assert SelectionPolicy.FIRST.select(items) == items[:1]
            assert SelectionPolicy.ALL.select(items) == items
            picked = SelectionPolicy.FIRST_MIDDLE_LAST.select(items)
            assert len(picked) == min(3, n)
            assert len(set(picked)) == len(picked)
            assert picked[0] == items[0] and picked[-1] == items[-1]

    def test_middle_is_the_midpoint(self):
        assert SelectionPolicy.FIRST_MIDDLE_LAST.select(list("abcde")) == ["a", "c", "e"]

    def test_empty(self):
        assert SelectionPolicy.FIRST.select([]) == []


class TestBuildDocument:
    def test_identity_always_and_absent_omitted(self, vault):
        profiles = [parse_profile_text("p", "Modality\nBodyPartExamined\nManufacturer\n")]
        event = store_event("P1", "1.2.1", "1.2.1.1", "1.2.1.1.1", extra={"Modality": "DX"})
        doc = build_document(profiles[0], event.dataset, "2026-08-15T12:00:00+00:00")
        assert doc["Modality"] == "DX"
        assert doc["PatientID"] == "P1"
        assert doc["SOPInstanceUID"] == "1.2.1.1.1"
        assert "BodyPartExamined" not in doc, "absent attributes are omitted, never null"
        assert doc["extracted_at"] == "2026-08-15T12:00:00+00:00"

    def test_multi_valued_attribute_becomes_array(self, vault):
        profile = parse_profile_text("p", "ImageType\n")
        event = store_event(
            "P1", "1.2.1", "1.2.1.1", "1.2.1.1.1", extra={"ImageType": ["DERIVED", "PRIMARY"]}
        )
        doc = build_document(profile, event.dataset, "t")
        assert doc["ImageType"] == ["DERIVED", "PRIMARY"]

    def test_numeric_attribute_rendered_as_string(self, vault):
        profile = parse_profile_text("p", "Rows\n")
        event = store_event("P1", "1.2.1", "1.2.1.1", "1.2.1.1.1", extra={"Rows": 512})
        doc = build_document(profile, event.dataset, "t")
        assert doc["Rows"] == "512"


class TestExtractOnce:
    def test_single_series_single_profile(self, vault):
        key = seed_series(vault, "P1", "1.2.1", "1.2.1.1", Modality="DX")
        state = ExtractionState()
        store = MemoryStore()
        profiles = [parse_profile_text("tech", "Modality\n")]
        batch = extract_once(vault, profiles, state, store, now=NOW)
        assert batch.processed == (key,)
        assert batch.documents == 1
        assert state.processed == {key}
        assert store.collections["tech"]["1.2.1.1.1"]["Modality"] == "DX"

    def test_empty_vault_is_vacuous(self, vault):
        state = ExtractionState()
        store = MemoryStore()
        batch = extract_once(vault, [parse_profile_text("p", "Modality\n")], state, store)
        assert batch.discovered == 0
        assert batch.documents == 0
        assert state.processed == set()

    def test_no_profiles_is_a_noop_that_defers_series(self, vault):
        key = seed_series(vault, "P1", "1.2.1", "1.2.1.1")
        state = ExtractionState()
        store = MemoryStore()
        batch = extract_once(vault, [], state, store, now=NOW)
        assert batch.documents == 0
        assert state.processed == set(), "series left for when a profile exists"
        batch = extract_once(
            vault, [parse_profile_text("p", "Modality\n")], state, store, now=NOW
        )
        assert batch.processed == (key,)

    def test_processed_series_not_reextracted(self, vault):
        seed_series(vault, "P1", "1.2.1", "1.2.1.1")
        state = ExtractionState()
        store = MemoryStore()
        profiles = [parse_profile_text("p", "Modality\n")]
        extract_once(vault, profiles, state, store, now=NOW)
        batch = extract_once(vault, profiles, state, store, now=NOW)
        assert batch.processed == ()
        assert batch.documents == 0

    def test_new_profile_does_not_backprocess(self, vault):
        """A profile deployed at tick n+1 sees only series still unprocessed."""
        key_a = seed_series(vault, "P1", "1.2.1", "1.2.1.1")
        state = ExtractionState()
        store = MemoryStore()
        first_profiles = [parse_profile_text("alpha", "Modality\n")]
        extract_once(vault, first_profiles, state, store, now=NOW)
        key_b = seed_series(vault, "P2", "1.2.2", "1.2.2.1")
        both = first_profiles + [parse_profile_text("beta", "Modality\n")]
        batch = extract_once(vault, both, state, store, now=NOW)
        assert batch.processed == (key_b,)
        assert set(store.collections["beta"]) == {"1.2.2.1.1"}, "alpha-era series not revisited"
        assert set(store.collections["alpha"]) == {"1.2.1.1.1", "1.2.2.1.1"}
        assert key_a in state.processed and key_b in state.processed

    def test_document_count_scales_with_profiles_and_policy(self, vault):
        seed_series(vault, "P1", "1.2.1", "1.2.1.1", n_instances=5)
        state = ExtractionState()
        store = MemoryStore()
        profiles = [
            parse_profile_text("a", "Modality\n"),
            parse_profile_text("b", "Rows\n"),
        ]
        batch = extract_once(
            vault, profiles, state, store, policy=SelectionPolicy.FIRST_MIDDLE_LAST, now=NOW
        )
        assert batch.documents == 2 * 3
        assert len(store.collections["a"]) == 3

    def test_unreadable_series_retries_then_quarantines(self, vault):
        key = seed_series(vault, "P1", "1.2.1", "1.2.1.1")
        bad = vault.series_path(key) / "1.2.1.1.1.dcm"
        bad.write_bytes(b"not a dicom file at all")
        state = ExtractionState()
        store = MemoryStore()
        profiles = [parse_profile_text("p", "Modality\n")]
        for attempt in range(1, 5):
            batch = extract_once(vault, profiles, state, store, now=NOW)
            assert batch.failures[0].attempts == attempt
            assert not batch.failures[0].quarantined
            assert key not in state.processed
        batch = extract_once(vault, profiles, state, store, now=NOW)
        assert batch.failures[0].attempts == 5
        assert batch.failures[0].quarantined
        assert not vault.series_path(key).exists()
        quarantined = list((vault.quarantine_dir / "series").iterdir())
        assert any(p.is_dir() for p in quarantined)
        assert extract_once(vault, profiles, state, store, now=NOW).failures == ()
        assert state.retries == {}

    def test_store_failure_leaves_series_unprocessed(self, vault):
        key = seed_series(vault, "P1", "1.2.1", "1.2.1.1")
        state = ExtractionState()
        profiles = [parse_profile_text("p", "Modality\n")]
        batch = extract_once(vault, profiles, state, MemoryStore(fail=True), now=NOW)
        assert batch.processed == ()
        assert key not in state.processed
        batch = extract_once(vault, profiles, state, MemoryStore(), now=NOW)
        assert batch.processed == (key,)

    def test_random_states_match_the_set_oracle(self, tmp_path):
        """Post-state P' must equal P ∪ {s ∈ S : s ∉ P ∧ s ∉ D} exactly."""
        rng = random.Random(0x51A7E)
        vault = Vault(tmp_path / "v", settle_window=0.0)
        keys = []
        for i in range(500):
            keys.append(
                seed_series(vault, f"P{i % 17}", f"1.2.{i}", f"1.2.{i}.1", Modality="DX")
            )
        processed = {k for k in keys if rng.random() < 0.4}
        deleted = {k for k in keys if k not in processed and rng.random() < 0.2}
        state = ExtractionState(
            processed=set(processed),
            deleted={k: "2026-08-01T00:00:00+00:00" for k in deleted},
        )
        store = MemoryStore()
        profiles = [parse_profile_text("a", "Modality\n"), parse_profile_text("b", "Rows\n")]

        expected_new = {k for k in keys if k not in processed and k not in deleted}
        expected_p = processed | expected_new

        batch = extract_once(vault, profiles, state, store, now=NOW)
        assert state.processed == expected_p
        assert set(state.deleted) == deleted, "extraction never touches the deleted set"
        assert set(batch.processed) == expected_new
        assert batch.documents == len(expected_new) * len(profiles)
        state.check_invariants()


class TestSchedule:
    def test_long_tick_skips_intermediate_slots(self):
        ticks = plan_ticks(10.0, [25.0, 1.0, 1.0], horizon=60.0)
        assert [start for start, _ in ticks] == [0.0, 30.0, 40.0]

    def test_instant_ticks_fire_every_slot(self):
        ticks = plan_ticks(10.0, [0.0] * 5, horizon=49.0)
        assert [start for start, _ in ticks] == [0.0, 10.0, 20.0, 30.0, 40.0]

    def test_zero_interval_rejected(self):
        with pytest.raises(ConfigError):
            plan_ticks(0.0, [1.0], horizon=10.0)
        with pytest.raises(ConfigError):
            ExtractionLoop(lambda: None, interval=0)

    def test_thousand_random_durations_never_overlap(self):
        rng = random.Random(0xC10C)
        interval = 10.0
        durations = [rng.uniform(0.0, 35.0) for _ in range(1000)]
        ticks = plan_ticks(interval, durations, horizon=10.0**9)
        assert len(ticks) == 1000
        for (s0, e0), (s1, _e1) in zip(ticks, ticks[1:]):
            assert s1 >= e0, "single-flight: next tick starts after the previous ended"
            assert s1 >= s0 + interval, "at most one tick per slot"
            slot = Fraction(s1) / Fraction(interval)
            assert slot == int(slot), "ticks start on slot boundaries"

    def test_real_loop_runs_and_survives_exceptions(self):
        ran = []
        gate = threading.Event()

        def tick():
            ran.append(time.monotonic())
            if len(ran) >= 3:
                gate.set()
            raise RuntimeError("tick explodes; loop must survive")

        loop = ExtractionLoop(tick, interval=0.02).start()
        try:
            assert gate.wait(5.0), "loop stopped after a tick exception"
        finally:
            loop.stop()
        assert loop.ticks_run >= 3
