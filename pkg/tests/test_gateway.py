"""HTTP gateway: route behavior, auth, and de-identified export bundles."""

from __future__ import annotations

import hashlib
import json
import random

import httpx
import pytest
from fastapi.testclient import TestClient

from niffler.gateway import (
    AdminHooks,
    ApiConfig,
    ApiServer,
    MetricsSnapshot,
    create_app,
)
from niffler.errors import ConfigError
from niffler.inference import JobRunner
from niffler.store import MetadataStore
from niffler.vault import Vault

from helpers import implant_array, noise_array, pixel_event

TOKEN = "test-token-123"
AUTH = {"Authorization": f"Bearer {TOKEN}"}

COLLECTION = "chest"


# --- independent oracles -----------------------------------------------------------


def surrogate_oracle(salt: bytes, original: str) -> str:
    """The documented surrogate algorithm, recomputed from scratch."""
    digest = hashlib.blake2b(original.encode("ascii"), digest_size=16, key=salt).digest()
    return "2.25." + str(int.from_bytes(digest, "big"))


def bundle_bytes(bundle) -> bytes:
    return b"".join(p.read_bytes() for p in sorted(bundle.rglob("*")) if p.is_file())


# --- fixtures ----------------------------------------------------------------------


@pytest.fixture
def world(tmp_path):
    vault = Vault(tmp_path / "vault", settle_window=0.0)
    store = MetadataStore(tmp_path / "docs", fsync=False)
    runner = JobRunner(vault, store, tmp_path / "jobs")
    config = ApiConfig(token=TOKEN, export_dir=tmp_path / "exports")
    app = create_app(config, store, vault, runner)
    client = TestClient(app, raise_server_exceptions=False)
    yield {
        "vault": vault,
        "store": store,
        "runner": runner,
        "config": config,
        "client": client,
        "tmp": tmp_path,
    }
    runner.stop()
    store.close()


def ingest(world, patient, study, series, sop, arr=None, modality="DX", **doc_extra):
    if arr is None:
        arr = noise_array(random.Random(hash(sop) & 0xFFFF))
    world["vault"].store_instance(
        pixel_event(patient, study, series, sop, arr, extra=doc_extra or None)
    )
    doc = {
        "PatientID": patient,
        "StudyInstanceUID": study,
        "SeriesInstanceUID": series,
        "SOPInstanceUID": sop,
        "Modality": modality,
    }
    doc.update(doc_extra)
    world["store"].upsert(COLLECTION, doc)


def seed_small(world, n=4):
    for i in range(n):
        ingest(
            world,
            f"PATIENT-{i % 2}",
            f"1.2.840.99999.7.{i % 2}",
            f"1.2.840.99999.7.{i % 2}.1",
            f"1.2.840.99999.7.{i % 2}.1.{i}",
            modality="DX" if i % 2 == 0 else "MR",
        )


def dx_query(**kwargs):
    body = {"collection": COLLECTION, "where": [{"attr": "Modality", "op": "eq", "value": "DX"}]}
    body.update(kwargs)
    return body


# --- auth --------------------------------------------------------------------------


class TestAuth:
    MUTATING = [
        ("POST", "/jobs", {}),
        ("POST", "/jobs/any/cancel", None),
        ("POST", "/pins", {}),
        ("DELETE", "/pins", {}),
        ("POST", "/export", {}),
        ("POST", "/admin/extract", None),
        ("POST", "/admin/purge", None),
    ]

    def test_mutating_routes_require_the_token(self, world):
        client = world["client"]
        for method, path, body in self.MUTATING:
            response = client.request(method, path, json=body)
            assert response.status_code == 401, (method, path)
            response = client.request(
                method, path, json=body, headers={"Authorization": "Bearer wrong"}
            )
            assert response.status_code == 401, (method, path)

    def test_read_routes_are_open(self, world):
        assert world["client"].get("/collections").status_code == 200
        assert world["client"].get("/metrics").status_code == 200

    def test_empty_token_is_rejected_at_config_time(self, tmp_path):
        with pytest.raises(ConfigError):
            ApiConfig(token="", export_dir=tmp_path)


# --- queries and facets ---------------------------------------------------------------


class TestQueryRoutes:
    def test_collections_lists_names(self, world):
        seed_small(world)
        assert world["client"].get("/collections").json() == {"collections": [COLLECTION]}

    def test_query_returns_matching_documents(self, world):
        seed_small(world)
        response = world["client"].post("/query", json=dx_query())
        assert response.status_code == 200
        payload = response.json()
        assert payload["count"] == 2
        assert all(doc["Modality"] == "DX" for doc in payload["documents"])

    def test_limit_zero_gives_count_only_preview(self, world):
        seed_small(world)
        payload = world["client"].post("/query", json=dx_query(limit=0)).json()
        assert payload == {"count": 2, "documents": []}

    def test_query_errors_map_to_statuses(self, world):
        seed_small(world)
        client = world["client"]
        assert client.post("/query", json={"collection": "nope"}).status_code == 404
        assert client.post("/query", json={"bogus": 1}).status_code == 400
        bad_attr = {"collection": COLLECTION, "where": [{"attr": "Nope", "op": "present"}]}
        assert client.post("/query", json=bad_attr).status_code == 400
        assert (
            client.post("/query", content=b"{not json", headers={"content-type": "application/json"}).status_code
            == 400
        )

    def test_facets_match_store_facets(self, world):
        seed_small(world)
        response = world["client"].get(
            "/facets", params={"collection": COLLECTION, "attributes": "Modality"}
        )
        assert response.status_code == 200
        payload = response.json()
        assert payload["count"] == 4
        assert payload["facets"] == [
            {"attribute": "Modality", "buckets": [["DX", 2], ["MR", 2]]}
        ]

    def test_facets_respect_base_query(self, world):
        seed_small(world)
        response = world["client"].get(
            "/facets",
            params={
                "collection": COLLECTION,
                "attributes": "Modality,PatientID",
                "q": json.dumps(dx_query()),
            },
        )
        payload = response.json()
        assert payload["count"] == 2
        by_attr = {f["attribute"]: dict(map(tuple, f["buckets"])) for f in payload["facets"]}
        assert by_attr["Modality"] == {"DX": 2}
        assert by_attr["PatientID"] == {"PATIENT-0": 2}

    def test_facets_validation_failures(self, world):
        seed_small(world)
        client = world["client"]
        assert client.get("/facets", params={"attributes": "Modality"}).status_code == 400
        assert client.get("/facets", params={"collection": COLLECTION}).status_code == 400
        mismatched = {"collection": "other", "attributes": "Modality", "q": json.dumps(dx_query())}
        assert client.get("/facets", params=mismatched).status_code == 400
        assert (
            client.get(
                "/facets", params={"collection": COLLECTION, "attributes": "Modality", "q": "{"}
            ).status_code
            == 400
        )


# --- jobs ---------------------------------------------------------------------------


class TestJobRoutes:
    def _submit_and_wait(self, world, body=None):
        response = world["client"].post(
            "/jobs", json=body or {"query": dx_query(), "plugin": "stub-detector"}, headers=AUTH
        )
        assert response.status_code == 200, response.text
        job_id = response.json()["id"]
        assert world["runner"].get(job_id).wait(30)
        return job_id

    def test_job_round_trip_with_results(self, world):
        truth = (10, 12, 30, 34)
        ingest(
            world,
            "PATIENT-0",
            "1.2.840.99999.7.0",
            "1.2.840.99999.7.0.1",
            "1.2.840.99999.7.0.1.0",
            arr=implant_array(random.Random(5), truth),
        )
        job_id = self._submit_and_wait(world)

        status = world["client"].get(f"/jobs/{job_id}").json()
        assert status["state"] == "done"
        assert status["counts"] == {"matched": 1, "converted": 1, "inferred": 1, "failed": 0}

        results = world["client"].get(f"/results/{job_id}").json()
        assert len(results["documents"]) == 1
        doc = results["documents"][0]
        assert json.loads(doc["boxes"])[0]["x0"] == truth[0]

        png = world["client"].get(f"/results/{job_id}/png/{doc['SOPInstanceUID']}")
        assert png.status_code == 200
        assert png.content.startswith(b"\x89PNG")
        plain = world["client"].get(
            f"/results/{job_id}/png/{doc['SOPInstanceUID']}", params={"annotated": "false"}
        )
        assert plain.status_code == 200
        assert plain.content != png.content  # ring burned into the annotated copy

        listing = world["client"].get("/jobs").json()
        assert [j["id"] for j in listing["jobs"]] == [job_id]

    def test_unknown_job_routes_404(self, world):
        assert world["client"].get("/jobs/unknown").status_code == 404
        assert world["client"].get("/results/unknown").status_code == 404
        assert (
            world["client"].post("/jobs/unknown/cancel", headers=AUTH).status_code == 404
        )

    def test_submit_validation(self, world):
        seed_small(world)
        client = world["client"]
        body = {"query": dx_query(), "plugin": "no-such"}
        assert client.post("/jobs", json=body, headers=AUTH).status_code == 404
        body = {"query": {"collection": "nope"}, "plugin": "stub-detector"}
        assert client.post("/jobs", json=body, headers=AUTH).status_code == 404
        body = {"query": dx_query(), "plugin": 7}
        assert client.post("/jobs", json=body, headers=AUTH).status_code == 400
        body = {"query": {"bogus": True}, "plugin": "stub-detector"}
        assert client.post("/jobs", json=body, headers=AUTH).status_code == 400

    def test_cancel_after_terminal_state_conflicts(self, world):
        seed_small(world)
        job_id = self._submit_and_wait(world)
        response = world["client"].post(f"/jobs/{job_id}/cancel", headers=AUTH)
        assert response.status_code == 409

    def test_result_png_missing_instance_404(self, world):
        seed_small(world)
        job_id = self._submit_and_wait(world)
        response = world["client"].get(f"/results/{job_id}/png/9.9.9")
        assert response.status_code == 404


# --- pins ----------------------------------------------------------------------------


PIN_BODY = {
    "patient_id": "PATIENT-0",
    "study_instance_uid": "1.2.840.99999.7.0",
    "series_instance_uid": "1.2.840.99999.7.0.1",
}


class TestPinRoutes:
    def test_create_list_delete_round_trip(self, world):
        client = world["client"]
        created = client.post("/pins", json=PIN_BODY, headers=AUTH)
        assert created.status_code == 200
        assert created.json()["patient_id"] == "PATIENT-0"

        listed = client.get("/pins").json()["pins"]
        assert len(listed) == 1 and listed[0]["reason"] == created.json()["reason"]

        # Creating the same pin again is a keyed no-op.
        assert client.post("/pins", json=PIN_BODY, headers=AUTH).status_code == 200
        assert len(client.get("/pins").json()["pins"]) == 1

        assert client.request("DELETE", "/pins", json=PIN_BODY, headers=AUTH).json() == {
            "removed": 1
        }
        assert client.request("DELETE", "/pins", json=PIN_BODY, headers=AUTH).json() == {
            "removed": 0
        }

    def test_custom_reason_and_expiry(self, world):
        body = dict(PIN_BODY, reason="teaching-file", expires_at="2099-01-01T00:00:00+00:00")
        created = world["client"].post("/pins", json=body, headers=AUTH).json()
        assert created["reason"] == "teaching-file"
        assert created["expires_at"] == "2099-01-01T00:00:00+00:00"

    def test_pin_validation(self, world):
        client = world["client"]
        assert client.post("/pins", json={"patient_id": "x"}, headers=AUTH).status_code == 400
        bad_expiry = dict(PIN_BODY, expires_at="tomorrow")
        assert client.post("/pins", json=bad_expiry, headers=AUTH).status_code == 400


# --- metrics ---------------------------------------------------------------------------


class TestMetrics:
    def test_injected_provider_is_reported_verbatim(self, tmp_path):
        vault = Vault(tmp_path / "v", settle_window=0.0)
        store = MetadataStore(tmp_path / "d", fsync=False)
        runner = JobRunner(vault, store, tmp_path / "j")
        snapshot = MetricsSnapshot(
            associations_active=2,
            instances_received_total=480,
            bytes_received_total=123456,
            series_processed=100,
            series_deleted=20,
            last_extraction_at="2026-08-15T00:00:00+00:00",
            last_purge_at=None,
            jobs_by_state={"done": 3},
        )
        config = ApiConfig(token=TOKEN, export_dir=tmp_path / "e")
        app = create_app(config, store, vault, runner, metrics=lambda: snapshot)
        try:
            payload = TestClient(app).get("/metrics").json()
            assert payload == snapshot.to_json()
            assert payload["series_processed"] + payload["series_deleted"] == 120
        finally:
            runner.stop()
            store.close()

    def test_default_provider_reports_job_states(self, world):
        payload = world["client"].get("/metrics").json()
        assert payload["jobs_by_state"] == {}
        assert payload["instances_received_total"] == 0


# --- export -----------------------------------------------------------------------------


SALT = bytes(range(16))

ORIGINALS = {
    "patients": ["PATIENT-ALPHA-0001", "PATIENT-BRAVO-0002"],
    "studies": ["1.2.840.99999.55.1000", "1.2.840.99999.55.2000"],
}


def seed_export_corpus(world, n=5):
    """5 instances: 3 in study 0 (patient 0), 2 in study 1 (patient 1)."""
    sops = []
    for i in range(n):
        owner = 0 if i < 3 else 1
        sop = f"1.2.840.99999.55.{(owner + 1) * 1000}.9.{i}"
        ingest(
            world,
            ORIGINALS["patients"][owner],
            ORIGINALS["studies"][owner],
            f"{ORIGINALS['studies'][owner]}.1",
            sop,
            Manufacturer="CARESTREAM HEALTH",
        )
        sops.append(sop)
    return sops


def export(world, body=None):
    payload = {"query": dx_query(), "salt_hex": SALT.hex()}
    payload.update(body or {})
    response = world["client"].post("/export", json=payload, headers=AUTH)
    assert response.status_code == 200, response.text
    report = response.json()
    return world["config"].export_dir / report["bundle"], report


class TestExport:
    def test_bundle_contains_pngs_and_one_metadata_document(self, world):
        seed_export_corpus(world)
        bundle, report = export(world)
        assert report == {"bundle": bundle.name, "instances": 5, "failures": 0}
        assert bundle.parent == world["config"].export_dir
        pngs = sorted(p.name for p in bundle.glob("*.png"))
        assert len(pngs) == 5
        assert (bundle / "metadata.json").is_file()
        assert (bundle / "manifest.json").is_file()
        assert len(list(bundle.iterdir())) == 7
        rows = json.loads((bundle / "metadata.json").read_text())
        assert sorted(row["png"] for row in rows) == pngs

    def test_surrogates_are_consistent_and_match_the_oracle(self, world):
        sops = seed_export_corpus(world)
        bundle, _ = export(world)
        rows = json.loads((bundle / "metadata.json").read_text())

        surrogate_studies = {row["StudyInstanceUID"] for row in rows}
        assert surrogate_studies == {
            surrogate_oracle(SALT, original) for original in ORIGINALS["studies"]
        }
        by_patient = {}
        for row in rows:
            by_patient.setdefault(row["PatientID"], set()).add(row["StudyInstanceUID"])
        # Referential structure: each surrogate patient keeps exactly one study.
        assert len(by_patient) == 2
        assert all(len(studies) == 1 for studies in by_patient.values())
        assert {row["SOPInstanceUID"] for row in rows} == {
            surrogate_oracle(SALT, sop) for sop in sops
        }

    def test_no_original_identifier_bytes_leak(self, world):
        sops = seed_export_corpus(world)
        bundle, _ = export(world)
        blob = bundle_bytes(bundle)
        leaked = [
            original
            for original in ORIGINALS["patients"] + ORIGINALS["studies"] + sops
            if original.encode() in blob
        ]
        assert leaked == []

    def test_same_salt_reproduces_identical_metadata(self, world):
        seed_export_corpus(world)
        first, _ = export(world)
        second, _ = export(world)
        assert first != second
        assert (first / "metadata.json").read_bytes() == (second / "metadata.json").read_bytes()

    def test_fresh_salts_differ_without_injection(self, world):
        seed_export_corpus(world)
        first, _ = export(world, {"salt_hex": None})
        second, _ = export(world, {"salt_hex": None})
        rows = [
            json.loads((b / "metadata.json").read_text())[0]["PatientID"]
            for b in (first, second)
        ]
        assert rows[0] != rows[1]

    def test_default_strip_list_keeps_technical_fields(self, world):
        seed_export_corpus(world)
        bundle, _ = export(world)
        row = json.loads((bundle / "metadata.json").read_text())[0]
        assert row["Modality"] == "DX"
        assert row["Manufacturer"] == "CARESTREAM HEALTH"
        assert row["PatientID"].startswith("2.25.")

    def test_strip_list_removes_named_attribute_entirely(self, world):
        seed_export_corpus(world)
        bundle, _ = export(world, {"strip_list": ["Manufacturer"]})
        for row in json.loads((bundle / "metadata.json").read_text()):
            assert "Manufacturer" not in row

    def test_conversion_failure_recorded_but_bundle_produced(self, world):
        seed_export_corpus(world, n=2)
        world["store"].upsert(
            COLLECTION,
            {
                "PatientID": ORIGINALS["patients"][0],
                "StudyInstanceUID": ORIGINALS["studies"][0],
                "SeriesInstanceUID": f"{ORIGINALS['studies'][0]}.1",
                "SOPInstanceUID": "1.2.840.99999.55.404",  # not in the vault
                "Modality": "DX",
            },
        )
        bundle, report = export(world)
        assert report["instances"] == 2
        assert report["failures"] == 1
        manifest = json.loads((bundle / "manifest.json").read_text())
        assert manifest["failed"] == [surrogate_oracle(SALT, "1.2.840.99999.55.404")]
        assert "salt" not in json.dumps(manifest).lower()

    def test_export_validation(self, world):
        client = world["client"]
        seed_export_corpus(world, n=1)
        empty = {"query": {"collection": COLLECTION, "where": [
            {"attr": "Modality", "op": "eq", "value": "US"}]}}
        assert client.post("/export", json=empty, headers=AUTH).status_code == 400
        bad_strip = {"query": dx_query(), "strip_list": ["NoSuchAttribute"]}
        assert client.post("/export", json=bad_strip, headers=AUTH).status_code == 400
        assert (
            client.post("/export", json={"query": dx_query(), "strip_list": []}, headers=AUTH)
            .status_code
            == 400
        )
        bad_salt = {"query": dx_query(), "salt_hex": "zz"}
        assert client.post("/export", json=bad_salt, headers=AUTH).status_code == 400


# --- admin hooks --------------------------------------------------------------------------


class TestAdminRoutes:
    def test_hooks_are_invoked(self, tmp_path):
        vault = Vault(tmp_path / "v", settle_window=0.0)
        store = MetadataStore(tmp_path / "d", fsync=False)
        runner = JobRunner(vault, store, tmp_path / "j")
        hooks = AdminHooks(
            extract_once=lambda: {"processed": 3},
            purge_now=lambda: {"deleted_series": 1},
        )
        config = ApiConfig(token=TOKEN, export_dir=tmp_path / "e")
        app = create_app(config, store, vault, runner, admin=hooks)
        try:
            client = TestClient(app)
            assert client.post("/admin/extract", headers=AUTH).json() == {"processed": 3}
            assert client.post("/admin/purge", headers=AUTH).json() == {"deleted_series": 1}
        finally:
            runner.stop()
            store.close()

    def test_unwired_hooks_yield_503(self, world):
        assert world["client"].post("/admin/extract", headers=AUTH).status_code == 503
        assert world["client"].post("/admin/purge", headers=AUTH).status_code == 503


# --- real socket smoke -----------------------------------------------------------------------


class TestApiServer:
    def test_serves_metrics_over_a_real_socket(self, world):
        app = world["client"].app
        server = ApiServer(app, host="127.0.0.1", port=0).start()
        try:
            response = httpx.get(f"http://127.0.0.1:{server.port}/metrics", timeout=5.0)
            assert response.status_code == 200
            assert "instances_received_total" in response.json()
        finally:
            server.stop()
