from __future__ import annotations

import csv
import io
import json
import time

import pytest
from fastapi.testclient import TestClient

from sarline.service import create_app
from sarline.store import JobStore, apply_corrections


@pytest.fixture()
def client(demo_corpus, tmp_path):
    app = create_app(tmp_path / "store.db")
    with TestClient(app) as test_client:
        yield test_client


def _submit(client, demo_corpus, **extra) -> str:
    body = {
        "corpus_dir": str(demo_corpus.corpus_dir),
        "config": {"backend_config": {"fixture_path": str(demo_corpus.oracle_path)}},
    }
    body.update(extra)
    response = client.post("/jobs", json=body)
    assert response.status_code == 200, response.text
    return response.json()["job_id"]


def _wait_done(client, job_id, timeout=30.0) -> dict:
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/jobs/{job_id}").json()
        if job["state"] in ("Done", "Failed"):
            return job
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} did not finish")


class TestSubmit:
    def test_happy_path_and_idempotence(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        job = _wait_done(client, job_id)
        assert job["state"] == "Done"
        again = client.post("/jobs", json={
            "corpus_dir": str(demo_corpus.corpus_dir),
            "config": {"backend_config": {"fixture_path": str(demo_corpus.oracle_path)}},
        }).json()
        assert again["job_id"] == job_id
        assert again["existing"] is True

    def test_malformed_corpus(self, client, tmp_path):
        bad = tmp_path / "empty"
        bad.mkdir()
        response = client.post("/jobs", json={"corpus_dir": str(bad)})
        assert response.status_code == 400
        assert response.json()["code"] == "MalformedBundle"

    def test_invalid_bbox_bundle_rejected(self, client, tmp_path):
        corpus = tmp_path / "badcorpus"
        doc = corpus / "doc"
        doc.mkdir(parents=True)
        (doc / "manifest.json").write_text(json.dumps({
            "doc_id": "doc", "doc_type": "Patent", "language_tags": [], "dpi": 200,
            "pages": [{"width": 10, "height": 10}],
            "regions": [{"id": "r", "page_index": 0, "kind": "Molecule",
                         "bbox": {"x": 0, "y": 0, "w": 0, "h": 5}, "confidence": 0.5}],
        }))
        response = client.post("/jobs", json={"corpus_dir": str(corpus)})
        assert response.status_code == 400
        assert response.json()["code"] == "MalformedBundle"

    def test_unknown_job(self, client):
        response = client.get("/jobs/nope")
        assert response.status_code == 404
        assert response.json()["code"] == "UnknownJob"


class TestResults:
    def test_records_present(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        results = client.get(f"/jobs/{job_id}/results").json()
        assert results["state"] == "Done"
        assert len(results["records"]) == 11
        assert all("record_index" in r for r in results["records"])
        assert results["unmatched"]
        assert results["rejected"]

    def test_eval_included_with_truth(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus, truth_csv=str(demo_corpus.truth_path))
        _wait_done(client, job_id)
        results = client.get(f"/jobs/{job_id}/results").json()
        assert results["eval"]["overall"] == 1.0


class TestTrace:
    def test_cross_page_anchors(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        records = client.get(f"/jobs/{job_id}/results").json()["records"]
        cross = next(r for r in records if r["doc_id"] == "doc02_crosspage")
        trace = client.get(f"/jobs/{job_id}/records/{cross['record_index']}/trace").json()
        assert trace["molecule"]["page_index"] == 33
        assert trace["table"]["page_index"] == 69
        assert trace["table"]["row_index"] >= 1
        for anchor in ("molecule", "table"):
            page = client.get(trace[anchor]["image_url"])
            assert page.status_code == 200
            assert page.headers["content-type"] == "image/png"

    def test_same_page_anchors(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        records = client.get(f"/jobs/{job_id}/results").json()["records"]
        intra = next(r for r in records if r["doc_id"] == "doc01_intra")
        trace = client.get(f"/jobs/{job_id}/records/{intra['record_index']}/trace").json()
        assert trace["molecule"]["page_index"] == trace["table"]["page_index"]

    def test_stale_locator(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        response = client.get(f"/jobs/{job_id}/records/9999/trace")
        assert response.status_code == 404
        assert response.json()["code"] == "UnknownRecord"


class TestCorrections:
    def test_smiles_correction_round_trip(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        records = client.get(f"/jobs/{job_id}/results").json()["records"]
        ix = records[0]["record_index"]
        response = client.post(
            f"/jobs/{job_id}/records/{ix}/corrections",
            json={"field": "Smiles", "new_value": "C1CCC1", "author": "tester"},
        )
        assert response.status_code == 200
        updated = response.json()
        assert updated["smiles"] == "C1CCC1"
        assert updated["edited"] is True
        refetched = client.get(f"/jobs/{job_id}/results").json()["records"][ix]
        assert refetched["smiles"] == "C1CCC1"

    def test_invalid_smiles_rejected(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        response = client.post(
            f"/jobs/{job_id}/records/0/corrections",
            json={"field": "Smiles", "new_value": "C1CC", "author": "tester"},
        )
        assert response.status_code == 422
        body = response.json()
        assert body["code"] == "InvalidNewValue"
        assert "UnclosedRingBond" in body["message"]

    def test_latest_wins_both_logged(self, client, demo_corpus, tmp_path):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        for value in ("first!", "second!"):
            client.post(
                f"/jobs/{job_id}/records/0/corrections",
                json={"field": "CorefId", "new_value": value, "author": "tester"},
            )
        record = client.get(f"/jobs/{job_id}/results").json()["records"][0]
        assert record["coref_id"] == "second!"

    def test_activity_field_corrections(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        for field, value in (("ActivityValue", "3.14"), ("Unit", "uM"), ("Qualifier", ">")):
            response = client.post(
                f"/jobs/{job_id}/records/1/corrections",
                json={"field": field, "new_value": value, "author": "t", "activity_index": 0},
            )
            assert response.status_code == 200, response.text
        activity = client.get(f"/jobs/{job_id}/results").json()["records"][1]["activities"][0]
        assert activity["value"] == 3.14
        assert activity["unit"] == "uM"
        assert activity["qualifier"] == ">"

    def test_audit_replay_reproduces_view(self, client, demo_corpus, tmp_path):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        client.post(
            f"/jobs/{job_id}/records/0/corrections",
            json={"field": "CorefId", "new_value": "curated-id", "author": "t"},
        )
        client.post(
            f"/jobs/{job_id}/records/2/corrections",
            json={"field": "Smiles", "new_value": "CCOCC", "author": "t"},
        )
        served = client.get(f"/jobs/{job_id}/results").json()["records"]
        store: JobStore = client.app.state.store
        replayed = apply_corrections(store.doc_results(job_id), store.corrections(job_id))
        assert json.dumps(served, sort_keys=True) == json.dumps(replayed, sort_keys=True)


class TestExport:
    def test_header_and_rows(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        response = client.get(f"/jobs/{job_id}/export.csv")
        assert response.status_code == 200
        reader = csv.reader(io.StringIO(response.text))
        rows = list(reader)
        assert rows[0] == [
            "doc_id", "coref_id", "smiles", "attribute", "qualifier", "value", "unit",
            "molecule_page", "table_page", "match_tier", "match_similarity", "edited",
        ]
        records = client.get(f"/jobs/{job_id}/results").json()["records"]
        expected_rows = sum(len(r["activities"]) for r in records)
        assert len(rows) - 1 == expected_rows

    def test_quoting_round_trip(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        client.post(
            f"/jobs/{job_id}/records/0/corrections",
            json={"field": "CorefId", "new_value": 'weird, "id"', "author": "t"},
        )
        response = client.get(f"/jobs/{job_id}/export.csv")
        rows = list(csv.reader(io.StringIO(response.text)))
        assert any(row[1] == 'weird, "id"' for row in rows[1:])

    def test_export_matches_results_multiset(self, client, demo_corpus):
        job_id = _submit(client, demo_corpus)
        _wait_done(client, job_id)
        records = client.get(f"/jobs/{job_id}/results").json()["records"]
        expected = sorted(
            (r["doc_id"], r["coref_id"], r["smiles"], a["attribute"], str(a["value"]))
            for r in records
            for a in r["activities"]
        )
        rows = list(csv.reader(io.StringIO(client.get(f"/jobs/{job_id}/export.csv").text)))[1:]
        got = sorted((row[0], row[1], row[2], row[3], row[5]) for row in rows)
        assert [(a, b, c, d) for a, b, c, d, _ in expected] == [(a, b, c, d) for a, b, c, d, _ in got]
        assert all(float(e[4]) == float(g[4]) for e, g in zip(expected, got))

    def test_unknown_job_export(self, client):
        response = client.get("/jobs/missing/export.csv")
        assert response.status_code == 404

    def test_empty_results_header_only(self, client, demo_corpus, tmp_path):
        import shutil

        corpus = tmp_path / "onlydoc06"
        shutil.copytree(demo_corpus.corpus_dir / "doc06_unmatched", corpus / "doc06_unmatched")
        job_id = _submit(client, demo_corpus, corpus_dir=str(corpus))
        _wait_done(client, job_id)
        text = client.get(f"/jobs/{job_id}/export.csv").text
        lines = [line for line in text.split("\r\n") if line]
        assert len(lines) == 1
        assert lines[0].startswith("doc_id,coref_id,smiles")

    def test_not_done_rejected(self, client, demo_corpus, tmp_path):
        slow = json.loads(demo_corpus.oracle_path.read_text(encoding="utf-8"))
        slow["latency_ms"] = 150
        slow_path = tmp_path / "slow_oracle.json"
        slow_path.write_text(json.dumps(slow, ensure_ascii=False))
        job_id = _submit(client, demo_corpus, config={
            "parallelism": 1,
            "backend_config": {"fixture_path": str(slow_path)},
        })
        response = client.get(f"/jobs/{job_id}/export.csv")
        state = client.get(f"/jobs/{job_id}").json()["state"]
        if state in ("Queued", "Running"):
            assert response.status_code == 409
            assert response.json()["code"] == "JobNotDone"
        _wait_done(client, job_id, timeout=120.0)
