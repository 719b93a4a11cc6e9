from __future__ import annotations

import json
from importlib import resources

import jsonschema
import numpy as np
import pytest
from click.testing import CliRunner

from sarline.cli import compute_stats, gaussian_kde_curve, main, silverman_bandwidth


def _schema(name: str) -> dict:
    return json.loads(resources.files("sarline.schemas").joinpath(name).read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def extracted(demo_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("out")
    runner = CliRunner()
    result = runner.invoke(main, [
        "extract",
        "--corpus", str(demo_corpus.corpus_dir),
        "--out", str(out),
        "--fixture", str(demo_corpus.oracle_path),
    ])
    assert result.exit_code == 0, result.output
    return out


class TestExtract:
    def test_outputs_written(self, extracted):
        assert (extracted / "records.json").is_file()
        assert (extracted / "records.csv").is_file()
        assert (extracted / "unmatched.json").is_file()

    def test_records_schema(self, extracted):
        payload = json.loads((extracted / "records.json").read_text(encoding="utf-8"))
        jsonschema.validate(payload, _schema("records.schema.json"))

    def test_unmatched_schema(self, extracted):
        payload = json.loads((extracted / "unmatched.json").read_text(encoding="utf-8"))
        jsonschema.validate(payload, _schema("unmatched.schema.json"))

    def test_env_var_overrides_mirror_flags(self, demo_corpus, tmp_path, monkeypatch):
        monkeypatch.setenv("SARLINE_EXTRACT_CORPUS", str(demo_corpus.corpus_dir))
        monkeypatch.setenv("SARLINE_EXTRACT_OUT", str(tmp_path / "env_out"))
        monkeypatch.setenv("SARLINE_EXTRACT_FIXTURE", str(demo_corpus.oracle_path))
        monkeypatch.setenv("SARLINE_EXTRACT_PARALLELISM", "2")
        runner = CliRunner()
        result = runner.invoke(main, ["extract"], auto_envvar_prefix="SARLINE")
        assert result.exit_code == 0, result.output
        assert (tmp_path / "env_out" / "records.json").is_file()

    def test_missing_config_exit_2(self, demo_corpus, tmp_path):
        runner = CliRunner()
        result = runner.invoke(main, [
            "extract",
            "--corpus", str(demo_corpus.corpus_dir),
            "--out", str(tmp_path / "o"),
            "--config", str(tmp_path / "missing.json"),
        ])
        assert result.exit_code == 2

    def test_failed_document_exit_1(self, demo_corpus, tmp_path):
        oracle = json.loads(demo_corpus.oracle_path.read_text(encoding="utf-8"))
        del oracle["ocsr"]["d01m1"]
        broken = tmp_path / "broken.json"
        broken.write_text(json.dumps(oracle, ensure_ascii=False))
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"fail_policy": "SkipDocument"}))
        runner = CliRunner()
        result = runner.invoke(main, [
            "extract",
            "--corpus", str(demo_corpus.corpus_dir),
            "--out", str(tmp_path / "o"),
            "--config", str(config),
            "--fixture", str(broken),
        ])
        assert result.exit_code == 1
        payload = json.loads((tmp_path / "o" / "records.json").read_text(encoding="utf-8"))
        done = [d for d in payload["docs"] if not d["failed"]]
        assert len(done) == 9


class TestEval:
    def test_perfect_corpus(self, extracted, demo_corpus, tmp_path):
        runner = CliRunner()
        out = tmp_path / "eval.json"
        result = runner.invoke(main, [
            "eval",
            "--pred", str(extracted / "records.json"),
            "--truth", str(demo_corpus.truth_path),
            "--out", str(out),
            "--coref-truth", str(demo_corpus.coref_truth_path),
            "--teds-truth", str(demo_corpus.teds_truth_path),
        ])
        assert result.exit_code == 0, result.output
        assert "1.0000" in result.output
        payload = json.loads(out.read_text(encoding="utf-8"))
        jsonschema.validate(payload, _schema("eval.schema.json"))
        assert payload["overall"] == 1.0
        assert payload["teds"]["overall"] == 1.0

    def test_malformed_truth(self, extracted, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text(
            "doc_id,coref_id,smiles,attribute,qualifier,value,unit,molecule_page,table_page\n"
            "d,x,C1CC,IC50,,1,nM,0,0\n"
        )
        runner = CliRunner()
        result = runner.invoke(main, ["eval", "--pred", str(extracted / "records.json"), "--truth", str(bad)])
        assert result.exit_code == 2

    def test_empty_predictions(self, demo_corpus, tmp_path):
        empty = tmp_path / "records.json"
        empty.write_text(json.dumps({"schema": "sarline.records/1", "docs": []}))
        runner = CliRunner()
        result = runner.invoke(main, [
            "eval", "--pred", str(empty), "--truth", str(demo_corpus.truth_path),
            "--out", str(tmp_path / "eval.json"),
        ])
        assert result.exit_code == 0
        payload = json.loads((tmp_path / "eval.json").read_text(encoding="utf-8"))
        assert payload["overall"] == 0.0


class TestStats:
    def test_schema_and_composition(self, demo_corpus, tmp_path):
        runner = CliRunner()
        out = tmp_path / "stats.json"
        result = runner.invoke(main, [
            "stats",
            "--truth", str(demo_corpus.truth_path),
            "--bundles", str(demo_corpus.corpus_dir),
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        payload = json.loads(out.read_text(encoding="utf-8"))
        jsonschema.validate(payload, _schema("stats.schema.json"))
        assert payload["doc_counts"]["patents"] == 5
        assert payload["doc_counts"]["literature"] == 5

    def test_pure_function_of_inputs(self, demo_corpus):
        a = compute_stats(str(demo_corpus.truth_path), str(demo_corpus.corpus_dir))
        b = compute_stats(str(demo_corpus.truth_path), str(demo_corpus.corpus_dir))
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_degenerate_distribution(self):
        curve = gaussian_kde_curve([30, 30, 30, 30])
        xs = curve["x"]
        density = curve["density"]
        peak = xs[int(np.argmax(density))]
        assert peak == pytest.approx(30, abs=0.5)

    def test_silverman_formula(self):
        counts = np.array([10.0, 20.0, 30.0, 40.0, 200.0])
        sigma = float(np.std(counts, ddof=1))
        q75, q25 = np.percentile(counts, [75, 25])
        expected = 0.9 * min(sigma, (q75 - q25) / 1.34) * len(counts) ** (-1 / 5)
        assert silverman_bandwidth(counts) == pytest.approx(expected)

    def test_skew_flag(self, tmp_path, demo_corpus):
        report = compute_stats(str(demo_corpus.truth_path), str(demo_corpus.corpus_dir))
        summary = report["atom_count_summary"]
        assert summary["right_skew"] == (summary["mean"] > summary["median"])


class TestServeLocking:
    def test_second_instance_store_locked(self, tmp_path):
        import socket
        import subprocess
        import sys
        import time

        import httpx

        def free_port() -> int:
            with socket.socket() as sock:
                sock.bind(("127.0.0.1", 0))
                return sock.getsockname()[1]

        store = tmp_path / "locked.db"
        port_a = free_port()
        first = subprocess.Popen(
            [sys.executable, "-m", "sarline.cli", "serve", "--store", str(store),
             "--listen", f"127.0.0.1:{port_a}"],
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
        )
        try:
            deadline = time.time() + 20
            while time.time() < deadline:
                try:
                    if httpx.get(f"http://127.0.0.1:{port_a}/health", timeout=1.0).status_code == 200:
                        break
                except httpx.HTTPError:
                    time.sleep(0.1)
            second = subprocess.run(
                [sys.executable, "-m", "sarline.cli", "serve", "--store", str(store),
                 "--listen", f"127.0.0.1:{free_port()}"],
                capture_output=True, text=True, timeout=30,
            )
            assert second.returncode == 3
            assert "StoreLocked" in second.stderr
        finally:
            first.terminate()
            first.wait(timeout=10)
