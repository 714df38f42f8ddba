"""HTTP surface tests: routing, idempotency, auth, and persistence."""

from __future__ import annotations

import json
import time

import pytest
from fastapi.testclient import TestClient

from evscout.corpus import RunStore, load_corpus
from evscout.embedding import HashedEmbedder
from evscout.pipeline import Backends
from evscout.service import ServiceState, create_app, derive_run_id, resolve_style

from helpers import note_record, rule, scripted, write_corpus


def _corpus(tmp_path):
    lines = [
        note_record("n1", "p1", hours=1.0,
                    text="ALPHAMARK hypertension history. Denies chest pain."),
        note_record("n2", "p1", hours=2.0, text="BRAVOMARK routine follow up visit."),
        note_record("n3", "p2", hours=3.0, text="Annual wellness exam unremarkable."),
    ]
    path = tmp_path / "corpus.jsonl"
    write_corpus(path, lines)
    return load_corpus(path)


def _pipeline_backend():
    # Only the ALPHAMARK chunk screens positive; everything else is a flat No.
    return scripted(
        rule(r"ALPHAMARK[\s\S]*Is the patient at risk", "Yes", mode="regex"),
        rule("why is the patient at risk", "Long-standing hypertension.",
             logprobs=[("Long-standing", -0.1), ("hypertension.", -0.2)]),
        rule("List the risk factors of", "hypertension, smoking"),
        rule("", "No"),
    )


def _judge_backend():
    return scripted(
        rule("Extract the risk factors from the statement", "1. hypertension"),
        rule("Does the patient have hypertension?", "Yes"),
        rule("Is hypertension a risk factor of stroke?", "Yes"),
        rule("", "No"),
    )


def _state(tmp_path, *, embedding="hashed", auth_token=None, completion=None):
    backends = Backends(
        completion=completion or _pipeline_backend(),
        embedding=HashedEmbedder() if embedding == "hashed" else None,
    )
    return ServiceState(
        corpus=_corpus(tmp_path),
        store=RunStore(tmp_path / "runs"),
        backends=backends,
        judge=_judge_backend(),
        auth_token=auth_token,
    )


@pytest.fixture()
def state(tmp_path):
    return _state(tmp_path)


@pytest.fixture()
def client(state):
    return TestClient(create_app(state))


def _evidence(client, patient="p1", **overrides):
    body = {"condition": "stroke"}
    body.update(overrides)
    return client.post(f"/patients/{patient}/evidence", json=body)


def test_health_is_open_and_reports_corpus_shape(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok", "corpus_notes": 3, "patients": 2}


def test_patients_listing_sorted_with_counts(client):
    resp = client.get("/patients")
    assert resp.status_code == 200
    assert resp.json() == [
        {"patient_id": "p1", "note_count": 2},
        {"patient_id": "p2", "note_count": 1},
    ]


def test_patient_notes_returns_sorted_notes(client):
    resp = client.get("/patients/p1/notes")
    assert resp.status_code == 200
    body = resp.json()
    assert body["patient_id"] == "p1"
    assert [n["note_id"] for n in body["notes"]] == ["n1", "n2"]
    # Sentence spans slice the note text exactly, so clients can highlight
    # by sentence index without splitting text themselves.
    for note in body["notes"]:
        assert note["sentences"], note["note_id"]
        for sent in note["sentences"]:
            assert note["text"][sent["start"]:sent["end"]] == sent["text"]
            assert sent["note_id"] == note["note_id"]


def test_patient_notes_unknown_patient_404(client):
    resp = client.get("/patients/ghost/notes")
    assert resp.status_code == 404
    assert "unknown patient" in resp.json()["detail"]


def test_evidence_run_then_cache_hit(client):
    first = _evidence(client)
    assert first.status_code == 200
    body = first.json()
    assert body["cached"] is False
    assert body["excluded"] is False
    assert body["run_id"].startswith("r")
    items = body["bundle"]["items"]
    active = [i for i in items if i["status"] == "active"]
    assert [i["text"] for i in active] == ["Long-standing hypertension."]

    second = _evidence(client)
    assert second.status_code == 200
    again = second.json()
    assert again["cached"] is True
    assert again["run_id"] == body["run_id"]
    assert json.dumps(again["bundle"], sort_keys=True) == json.dumps(
        body["bundle"], sort_keys=True
    )


def test_evidence_idempotency_key_mapping_wins(client):
    first = _evidence(client, idempotency_key="k1")
    run_id = first.json()["run_id"]
    assert first.json()["cached"] is False

    # Same content under a new key resolves to the same content-derived run.
    second = _evidence(client, idempotency_key="k2")
    assert second.json()["cached"] is True
    assert second.json()["run_id"] == run_id

    # A reused key short-circuits even when the body would derive a new run.
    third = _evidence(client, condition="migraine", idempotency_key="k1")
    assert third.status_code == 200
    assert third.json()["cached"] is True
    assert third.json()["run_id"] == run_id


def test_evidence_unknown_patient_404(client):
    resp = _evidence(client, patient="ghost")
    assert resp.status_code == 404
    assert "unknown patient" in resp.json()["detail"]


def test_evidence_unknown_style_400(client):
    resp = _evidence(client, style="gpt9")
    assert resp.status_code == 400
    assert "unknown style" in resp.json()["detail"]


def test_evidence_backend_failure_becomes_502(tmp_path):
    state = _state(tmp_path, completion=scripted(rule("NEVERMATCHES", "Yes")))
    client = TestClient(create_app(state))
    resp = _evidence(client)
    assert resp.status_code == 502
    assert resp.json()["detail"]


def test_runs_listing_and_detail(client):
    run_id = _evidence(client).json()["run_id"]

    rows = client.get("/runs").json()
    assert {
        "run_id": run_id,
        "kind": "pipeline",
        "patient_id": "p1",
        "condition": "stroke",
        "excluded": False,
    } in rows

    detail = client.get(f"/runs/{run_id}").json()
    assert detail["kind"] == "pipeline"
    assert detail["step_count"] > 0

    assert client.get("/runs/zzz").status_code == 404


def test_evaluate_flow_cache_and_report(client):
    run_id = _evidence(client).json()["run_id"]

    first = client.post(f"/runs/{run_id}/evaluate", json={"strict": False})
    assert first.status_code == 200
    body = first.json()
    assert body["cached"] is False
    assert body["run_id"].startswith("e")
    assert body["summary"]["useful_pct"] == 100.0
    assert body["summary"]["hallucination_pct"] == 0.0
    assert body["summary"]["evaluated"] == 1
    assert body["summary"]["self_evaluation"] is False
    (verdict,) = body["verdicts"]
    assert verdict["hallucinated"] is False

    second = client.post(f"/runs/{run_id}/evaluate", json={"strict": False})
    assert second.json()["cached"] is True
    assert second.json()["run_id"] == body["run_id"]
    assert second.json()["verdicts"] == body["verdicts"]

    report = client.get(f"/reports/{body['run_id']}").json()
    assert report["parent_run_id"] == run_id
    assert report["useful_pct"] == 100.0
    assert report["condition"] == "stroke"

    # Role mismatches are rejected in both directions.
    assert client.get(f"/reports/{run_id}").status_code == 400
    assert client.post(f"/runs/{body['run_id']}/evaluate", json={}).status_code == 400
    assert client.post("/runs/zzz/evaluate", json={}).status_code == 404
    assert client.get("/reports/zzz").status_code == 404


def test_annotations_round_trip(client):
    bundle = _evidence(client).json()["bundle"]
    evidence_id = next(
        i["id"] for i in bundle["items"] if i["status"] == "active"
    )

    posted = client.post(
        "/annotations",
        json={
            "rows": [
                {
                    "evidence_id": evidence_id,
                    "annotator_id": "a1",
                    "present_in_note": True,
                    "relevance": "very useful",
                },
                {
                    "evidence_id": evidence_id,
                    "annotator_id": "a2",
                    "present_in_note": False,
                    "relevance": "not_useful",
                },
            ]
        },
    )
    assert posted.status_code == 200
    assert posted.json() == {"imported": 2, "total": 2}

    rows = client.get("/annotations").json()["rows"]
    assert {
        "evidence_id": evidence_id,
        "annotator_id": "a1",
        "present_in_note": True,
        "relevance": "very_useful",
    } in rows
    assert {
        "evidence_id": evidence_id,
        "annotator_id": "a2",
        "present_in_note": False,
        "relevance": "not_useful",
    } in rows


def test_annotations_reject_unknown_evidence_and_bad_labels(client):
    _evidence(client)  # seed the known-id set
    base = {"annotator_id": "a1", "present_in_note": True, "relevance": "useful"}

    bad_id = client.post(
        "/annotations", json={"rows": [{"evidence_id": "ev0000000000000000", **base}]}
    )
    assert bad_id.status_code == 400
    assert "unknown evidence id" in bad_id.json()["detail"]

    bundle = client.get("/runs").json()
    assert bundle  # the seeding run persisted despite the rejected import

    bad_label = client.post(
        "/annotations",
        json={
            "rows": [
                {
                    "evidence_id": "ev0000000000000000",
                    "annotator_id": "a1",
                    "present_in_note": True,
                    "relevance": "meh",
                }
            ]
        },
    )
    assert bad_label.status_code == 400


def test_annotations_duplicate_rows_rejected(client):
    bundle = _evidence(client).json()["bundle"]
    evidence_id = next(i["id"] for i in bundle["items"] if i["status"] == "active")
    row = {
        "evidence_id": evidence_id,
        "annotator_id": "a1",
        "present_in_note": True,
        "relevance": "useful",
    }
    assert client.post("/annotations", json={"rows": [row]}).status_code == 200
    dup = client.post("/annotations", json={"rows": [row]})
    assert dup.status_code == 400
    assert "duplicate annotation" in dup.json()["detail"]


def _wait_for_job(client, job_id, timeout_s=5.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        body = client.get(f"/jobs/{job_id}").json()
        if body["status"] != "pending":
            return body
        time.sleep(0.01)
    raise AssertionError("job never left pending")


def test_jobs_run_to_completion(client):
    resp = client.post("/jobs", json={"patient_id": "p1", "condition": "stroke"})
    assert resp.status_code == 200
    job = _wait_for_job(client, resp.json()["job_id"])
    assert job["status"] == "done"
    assert client.get(f"/runs/{job['run_id']}").status_code == 200


def test_jobs_surface_failures(client):
    resp = client.post("/jobs", json={"patient_id": "ghost", "condition": "stroke"})
    job = _wait_for_job(client, resp.json()["job_id"])
    assert job["status"] == "error"
    assert "unknown patient" in job["error"]


def test_jobs_unknown_id_404(client):
    assert client.get("/jobs/nope").status_code == 404


def test_bearer_auth_guards_everything_but_health(tmp_path):
    state = _state(tmp_path, auth_token="sekret")
    client = TestClient(create_app(state))

    assert client.get("/health").status_code == 200
    assert client.get("/patients").status_code == 401
    wrong = client.get("/patients", headers={"Authorization": "Bearer nope"})
    assert wrong.status_code == 401
    right = client.get("/patients", headers={"Authorization": "Bearer sekret"})
    assert right.status_code == 200


def test_baseline_requires_embedding_backend(tmp_path):
    state = _state(tmp_path, embedding=None)
    client = TestClient(create_app(state))
    resp = _evidence(client, mode="baseline")
    assert resp.status_code == 400
    assert "embedding backend" in resp.json()["detail"]


def test_baseline_mode_returns_extractive_items(client):
    resp = _evidence(client, mode="baseline")
    assert resp.status_code == 200
    body = resp.json()
    items = body["bundle"]["items"]
    assert items
    note_sentences = {
        "ALPHAMARK hypertension history.",
        "Denies chest pain.",
        "BRAVOMARK routine follow up visit.",
    }
    assert {i["text"] for i in items} <= note_sentences
    assert all(i["source"] == "extracted_baseline" for i in items)

    detail = client.get(f"/runs/{body['run_id']}").json()
    assert detail["mode"] == "baseline"


def test_store_survives_app_restart(tmp_path):
    first_state = _state(tmp_path)
    first = TestClient(create_app(first_state)).post(
        "/patients/p1/evidence", json={"condition": "stroke"}
    )
    assert first.json()["cached"] is False

    # A fresh app over the same store and backends must serve the stored run.
    reopened = ServiceState(
        corpus=_corpus(tmp_path),
        store=RunStore(tmp_path / "runs"),
        backends=Backends(completion=_pipeline_backend(), embedding=HashedEmbedder()),
        judge=_judge_backend(),
    )
    second = TestClient(create_app(reopened)).post(
        "/patients/p1/evidence", json={"condition": "stroke"}
    )
    assert second.json()["cached"] is True
    assert json.dumps(second.json(), sort_keys=True) == json.dumps(
        {**first.json(), "cached": True}, sort_keys=True
    )


def test_resolve_style_and_run_id_derivation():
    from evscout.pipeline import PromptStyle

    assert resolve_style(None, PromptStyle.CONCISE) is PromptStyle.CONCISE
    assert resolve_style("FLAN", PromptStyle.CONCISE) is PromptStyle.CHOICE_THEN_STEPWISE
    with pytest.raises(ValueError, match="unknown style"):
        resolve_style("gpt9", PromptStyle.CONCISE)

    a = derive_run_id("r", {"x": 1, "y": 2})
    b = derive_run_id("r", {"y": 2, "x": 1})
    assert a == b and a.startswith("r") and len(a) == 17
    assert derive_run_id("r", {"x": 1, "y": 3}) != a
