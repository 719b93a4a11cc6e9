from __future__ import annotations

import json

import pytest

from sarline.backends import BackendConfig
from sarline.domain import MatchTier, load_corpus
from sarline.pipeline import (
    DocumentFailed,
    FailPolicy,
    PipelineConfig,
    cache_key,
    results_to_json,
    run_corpus,
    run_document,
)


def _cfg(demo, parallelism=4, **kwargs) -> PipelineConfig:
    return PipelineConfig(
        parallelism=parallelism,
        backend_config=BackendConfig(fixture_path=str(demo.oracle_path)),
        **kwargs,
    )


def _bundle(demo, doc_id):
    return next(b for b in load_corpus(demo.corpus_dir) if b.doc_id == doc_id)


class TestRunDocument:
    def test_intra_page_case(self, demo_corpus):
        result = run_document(_bundle(demo_corpus, "doc01_intra"), _cfg(demo_corpus))
        assert len(result.records) == 1
        record = result.records[0]
        assert record.molecule_page == record.table_page == 0
        assert record.activities[0].value == 2.3

    def test_cross_page_gap_36(self, demo_corpus):
        result = run_document(_bundle(demo_corpus, "doc02_crosspage"), _cfg(demo_corpus))
        assert len(result.records) == 2
        for record in result.records:
            assert abs(record.molecule_page - record.table_page) == 36

    def test_no_tables_means_all_unmatched(self, demo_corpus, tmp_path):
        bundle = _bundle(demo_corpus, "doc01_intra")
        stripped = type(bundle)(
            doc_id=bundle.doc_id, doc_type=bundle.doc_type, language_tags=bundle.language_tags,
            dpi=bundle.dpi, pages=bundle.pages,
            regions=tuple(r for r in bundle.regions if r.kind.value == "Molecule"),
            root=bundle.root,
        )
        result = run_document(stripped, _cfg(demo_corpus))
        assert result.records == []
        assert len(result.unmatched) == 1

    def test_region_conservation(self, demo_corpus):
        for bundle in load_corpus(demo_corpus.corpus_dir):
            result = run_document(bundle, _cfg(demo_corpus))
            molecule_ids = {r.id for r in bundle.regions if r.kind.value == "Molecule"}
            in_records = {r.molecule_region for r in result.records}
            in_unmatched = {u["region_id"] for u in result.unmatched}
            in_errors = {rid for rid, _ in result.region_errors if rid in molecule_ids}
            covered = sorted(in_records | in_unmatched | in_errors)
            assert covered == sorted(molecule_ids)
            # exactly one bucket per region
            assert not (in_records & in_unmatched)
            assert not (in_records & in_errors)
            assert not (in_unmatched & in_errors)

    def test_fuzzy_tier_assertions(self, demo_corpus):
        result = run_document(_bundle(demo_corpus, "doc10_fuzzy"), _cfg(demo_corpus))
        record = result.records[0]
        assert record.match_tier is MatchTier.FUZZY
        assert record.match_similarity >= 0.8


class TestFailPolicies:
    def _broken_oracle(self, demo_corpus, tmp_path):
        oracle = json.loads(demo_corpus.oracle_path.read_text(encoding="utf-8"))
        del oracle["ocsr"]["d01m1"]  # EmptyPrediction for that region
        path = tmp_path / "broken_oracle.json"
        path.write_text(json.dumps(oracle))
        return path

    def test_skip_region(self, demo_corpus, tmp_path):
        path = self._broken_oracle(demo_corpus, tmp_path)
        cfg = PipelineConfig(parallelism=2, backend_config=BackendConfig(fixture_path=str(path)))
        result = run_document(_bundle(demo_corpus, "doc01_intra"), cfg)
        assert not result.failed
        assert result.region_errors and result.region_errors[0][0] == "d01m1"
        assert result.records == []

    def test_skip_document(self, demo_corpus, tmp_path):
        path = self._broken_oracle(demo_corpus, tmp_path)
        cfg = PipelineConfig(
            parallelism=2,
            fail_policy=FailPolicy.SKIP_DOCUMENT,
            backend_config=BackendConfig(fixture_path=str(path)),
        )
        result = run_document(_bundle(demo_corpus, "doc01_intra"), cfg)
        assert result.failed

    def test_abort(self, demo_corpus, tmp_path):
        path = self._broken_oracle(demo_corpus, tmp_path)
        cfg = PipelineConfig(
            parallelism=2,
            fail_policy=FailPolicy.ABORT,
            backend_config=BackendConfig(fixture_path=str(path)),
        )
        with pytest.raises(DocumentFailed):
            run_document(_bundle(demo_corpus, "doc01_intra"), cfg)

    def test_corpus_isolates_failures(self, demo_corpus, tmp_path):
        path = self._broken_oracle(demo_corpus, tmp_path)
        cfg = PipelineConfig(
            parallelism=4,
            fail_policy=FailPolicy.SKIP_DOCUMENT,
            backend_config=BackendConfig(fixture_path=str(path)),
        )
        results = run_corpus(load_corpus(demo_corpus.corpus_dir), cfg)
        failed = [r for r in results if r.failed]
        assert [r.doc_id for r in failed] == ["doc01_intra"]
        assert len(results) == 10


class TestDeterminism:
    def test_parallelism_transparency(self, demo_corpus):
        bundles = load_corpus(demo_corpus.corpus_dir)
        serial = run_corpus(bundles, _cfg(demo_corpus, parallelism=1))
        parallel = run_corpus(bundles, _cfg(demo_corpus, parallelism=8))
        a = json.dumps(results_to_json(serial), sort_keys=True)
        b = json.dumps(results_to_json(parallel), sort_keys=True)
        assert a == b

    def test_hundred_document_corpus(self, demo_corpus):
        # 10 distinct documents cloned to 100; content must be order-independent
        # and identical to the sequential run.
        from dataclasses import replace

        base = load_corpus(demo_corpus.corpus_dir)
        bundles = [replace(b, doc_id=f"{b.doc_id}_copy{i}") for i in range(10) for b in base]
        parallel = run_corpus(bundles, _cfg(demo_corpus, parallelism=8))
        assert len(parallel) == 100
        assert [r.doc_id for r in parallel] == [b.doc_id for b in bundles]
        serial = run_corpus(bundles, _cfg(demo_corpus, parallelism=1))
        assert json.dumps(results_to_json(serial), sort_keys=True) == json.dumps(
            results_to_json(parallel), sort_keys=True
        )

    def test_noise_is_parallelism_independent(self, demo_corpus, tmp_path):
        oracle = json.loads(demo_corpus.oracle_path.read_text(encoding="utf-8"))
        oracle["noise"] = {"seed": 11, "coref_edits": 1}
        path = tmp_path / "noisy.json"
        path.write_text(json.dumps(oracle, ensure_ascii=False))
        cfg1 = PipelineConfig(parallelism=1, backend_config=BackendConfig(fixture_path=str(path)))
        cfg8 = PipelineConfig(parallelism=8, backend_config=BackendConfig(fixture_path=str(path)))
        bundles = load_corpus(demo_corpus.corpus_dir)
        a = json.dumps(results_to_json(run_corpus(bundles, cfg1)), sort_keys=True)
        b = json.dumps(results_to_json(run_corpus(bundles, cfg8)), sort_keys=True)
        assert a == b


class TestCache:
    def test_cache_soundness(self, demo_corpus, tmp_path):
        bundles = load_corpus(demo_corpus.corpus_dir)
        plain = results_to_json(run_corpus(bundles, _cfg(demo_corpus)))
        cache_dir = tmp_path / "cache"
        cached_cfg = _cfg(demo_corpus, cache_dir=str(cache_dir))
        first = results_to_json(run_corpus(bundles, cached_cfg))
        second = results_to_json(run_corpus(bundles, cached_cfg))  # warm cache
        assert json.dumps(first, sort_keys=True) == json.dumps(plain, sort_keys=True)
        assert json.dumps(second, sort_keys=True) == json.dumps(plain, sort_keys=True)
        assert any(cache_dir.iterdir())

    def test_cache_key_contract(self):
        image = b"pixels"
        base = cache_key(image, "ocsr", "prompt", "http://a")
        assert cache_key(image, "ocsr", "prompt", "http://a") == base
        assert cache_key(image, "ocsr", "prompt2", "http://a") != base
        assert cache_key(image, "ocsr", "prompt", "http://b") != base
        assert cache_key(b"other", "ocsr", "prompt", "http://a") != base
        assert cache_key(image, "coref_in_table", "prompt", "http://a") != base


class TestProgressEvents:
    def test_events_emitted(self, demo_corpus):
        events = []
        run_document(_bundle(demo_corpus, "doc01_intra"), _cfg(demo_corpus), progress=events.append)
        stages = {e["stage"] for e in events}
        assert {"detect", "extract", "assemble"} <= stages
        assert all("doc_id" in e and "status" in e for e in events)
