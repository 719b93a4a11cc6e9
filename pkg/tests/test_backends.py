from __future__ import annotations

import hashlib
import json

import httpx
import pytest

from sarline.backends import (
    BackendConfig,
    BackendTimeout,
    BackendUnreachable,
    COREF_NONE_TOKEN,
    EmptyPrediction,
    FixtureBackend,
    FixtureOracle,
    HttpBackend,
    MalformedJson,
    MalformedResponse,
    MissingField,
    NOT_ACTIVITY_SENTINEL,
    NoiseSpec,
    apply_noise,
    default_prompts,
    make_backend,
    parse_coref_body,
)
from sarline.domain import BBox, DocumentBundle, DocType, PageInfo, Region, RegionKind

# Frozen digests of the shipped prompt texts; a diff here means the wire
# contract changed and every downstream fixture needs a fresh look.
PROMPT_DIGESTS = {
    "coref_in_table": "f5a9b8cbed00cd411e9735a54b71404291c5b76fca0d361c2749df91afaf6767",
    "coref_out_of_table": "773abbab205a45c21044497cbec4126883365927a78750832e3f39b9111332ca",
    "table_html": "54d650936e4a1ee7897e49bfc9cdd655e86ed79040d345238d5be35c1dfe0279",
}


def _bundle() -> DocumentBundle:
    return DocumentBundle(
        doc_id="d1",
        doc_type=DocType.PATENT,
        language_tags=("en",),
        dpi=200,
        pages=(PageInfo(100, 100),),
        regions=(
            Region("m1", 0, RegionKind.MOLECULE, BBox(0, 0, 10, 10), 0.9),
            Region("t1", 0, RegionKind.TABLE, BBox(20, 20, 30, 30), 0.8),
            Region("m2", 0, RegionKind.MOLECULE, BBox(40, 40, 10, 10), 0.7),
        ),
    )


class TestPromptFidelity:
    def test_golden_digests(self):
        prompts = default_prompts()
        assert {k: hashlib.sha256(v.encode("utf-8")).hexdigest() for k, v in prompts.items()} == PROMPT_DIGESTS

    def test_wire_format_anchors(self):
        prompts = default_prompts()
        table = prompts["table_html"]
        assert "['EC50', 'IC50', 'Ki', 'Kd', 'pKd', 'TD50', 'Ti', 'TC50']" in table
        assert "['uM', 'nM', '%', 'kcal/mol']" in table
        assert "<table>None</table>" in table
        assert '"[mol]"' in table
        assert "rowspan" in table and "colspan" in table
        out = prompts["coref_out_of_table"]
        assert '"compound_id"' in out
        assert out.index("left side") < out.index("right side")
        assert "[None]" in out
        inside = prompts["coref_in_table"]
        assert "same table cell" in inside
        assert '"compound_id"' in inside


class TestCorefBody:
    def test_plain(self):
        assert parse_coref_body('{"compound_id": "1a"}') == "1a"

    def test_none_token(self):
        assert parse_coref_body(json.dumps({"compound_id": COREF_NONE_TOKEN})) is None

    def test_missing_field(self):
        with pytest.raises(MissingField):
            parse_coref_body('{"id": "1a"}')

    def test_malformed_json(self):
        with pytest.raises(MalformedJson):
            parse_coref_body("not json")


class TestFixtureBackend:
    def test_detect_oracle_overrides_manifest(self):
        region = Region("x", 0, RegionKind.MOLECULE, BBox(0, 0, 5, 5), 0.5)
        backend = FixtureBackend(FixtureOracle(detections={"d1": [region]}))
        assert backend.detect(_bundle()) == [region]

    def test_detect_manifest_passthrough(self):
        backend = FixtureBackend(FixtureOracle())
        assert backend.detect(_bundle()) == list(_bundle().regions)

    def test_ocsr_verbatim_no_validation(self):
        backend = FixtureBackend(FixtureOracle(ocsr={"m1": "C1CC"}))
        assert backend.ocsr(None, "d1", "m1") == "C1CC"

    def test_ocsr_missing_entry(self):
        backend = FixtureBackend(FixtureOracle())
        with pytest.raises(EmptyPrediction):
            backend.ocsr(None, "d1", "m1")

    def test_coref_policies(self):
        oracle = FixtureOracle(coref={
            "m1": {"left": "1a", "right": "zz"},
            "m2": {"right": "2b"},
            "m3": {"cell": "A35", "nearby": "A00"},
            "m4": {"nearby": "A36"},
            "m5": COREF_NONE_TOKEN,
        })
        backend = FixtureBackend(oracle)
        assert backend.coref(None, "d", "m1", in_table=False) == "1a"
        assert backend.coref(None, "d", "m2", in_table=False) == "2b"
        assert backend.coref(None, "d", "m3", in_table=True) == "A35"
        assert backend.coref(None, "d", "m4", in_table=True) == "A36"
        assert backend.coref(None, "d", "m5", in_table=False) is None
        assert backend.coref(None, "d", "missing", in_table=False) is None

    def test_table_default_sentinel(self):
        backend = FixtureBackend(FixtureOracle())
        assert backend.table_html(None, "d", "t9") == NOT_ACTIVITY_SENTINEL

    def test_determinism_across_instances(self):
        spec = {"coref": {"m1": "compound 12"}, "noise": {"seed": 5, "coref_edits": 1}}
        a = FixtureBackend(FixtureOracle.from_dict(spec))
        b = FixtureBackend(FixtureOracle.from_dict(spec))
        va = [a.coref(None, "d", "m1", False) for _ in range(3)]
        vb = [b.coref(None, "d", "m1", False) for _ in range(3)]
        assert va == vb
        assert len(set(va)) == 1


class TestNoise:
    def test_zero_edits_identity(self):
        assert apply_noise("1a", "r", NoiseSpec(seed=1, coref_edits=0)) == "1a"

    def test_one_edit_distance(self):
        from sarline.align import levenshtein

        for seed in range(30):
            noisy = apply_noise("compound 12", "r1", NoiseSpec(seed=seed, coref_edits=1))
            assert levenshtein("compound 12", noisy) == 1

    def test_seeded_per_region(self):
        spec = NoiseSpec(seed=7, coref_edits=1)
        assert apply_noise("abcdef", "r1", spec) == apply_noise("abcdef", "r1", spec)
        # different regions draw independent edits (almost surely different)
        outcomes = {apply_noise("abcdef", f"r{i}", spec) for i in range(12)}
        assert len(outcomes) > 1


def _http_backend(handler, max_retries=2, timeout_ms=30000) -> HttpBackend:
    config = BackendConfig(endpoint="http://models.test", max_retries=max_retries, timeout_ms=timeout_ms)
    client = httpx.Client(transport=httpx.MockTransport(handler), timeout=1.0)
    return HttpBackend(config, client=client)


class TestHttpBackend:
    def test_unreachable_retry_count(self):
        calls = []

        def handler(request):
            calls.append(request.url.path)
            raise httpx.ConnectError("refused")

        backend = _http_backend(handler, max_retries=2)
        with pytest.raises(BackendUnreachable):
            backend.ocsr(_image(), "d", "m1")
        assert len(calls) == 3  # 1 attempt + 2 retries

    def test_timeout(self):
        def handler(request):
            raise httpx.ReadTimeout("slow")

        backend = _http_backend(handler, max_retries=0)
        with pytest.raises(BackendTimeout):
            backend.table_html(_image(), "d", "t1")

    def test_ocsr_payload(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["task"] == "ocsr"
            assert body["image_b64"]
            return httpx.Response(200, json={"output": "CCO", "latency_ms": 3})

        backend = _http_backend(handler)
        assert backend.ocsr(_image(), "d", "m1") == "CCO"

    def test_coref_payload(self):
        def handler(request):
            return httpx.Response(200, json={"output": '{"compound_id": "1a"}', "latency_ms": 1})

        backend = _http_backend(handler)
        assert backend.coref(_image(), "d", "m1", in_table=False) == "1a"

    def test_detect_confidence_validation(self):
        def handler(request):
            bad = {"id": "r", "page_index": 0, "kind": "Molecule",
                   "bbox": {"x": 0, "y": 0, "w": 1, "h": 1}, "confidence": 1.2}
            return httpx.Response(200, json={"output": [bad], "latency_ms": 1})

        backend = _http_backend(handler)
        with pytest.raises(MalformedResponse):
            backend.detect(_bundle())

    def test_missing_output_field(self):
        def handler(request):
            return httpx.Response(200, json={"latency_ms": 1})

        backend = _http_backend(handler)
        with pytest.raises(MalformedResponse):
            backend.ocsr(_image(), "d", "m1")

    def test_server_error_retries_then_fails(self):
        def handler(request):
            return httpx.Response(503)

        backend = _http_backend(handler, max_retries=1)
        with pytest.raises(BackendUnreachable):
            backend.ocsr(_image(), "d", "m1")


def _image():
    from PIL import Image

    return Image.new("RGB", (4, 4), "white")


class TestFactory:
    def test_fixture_mode_when_no_endpoint(self, tmp_path):
        oracle_path = tmp_path / "oracle.json"
        oracle_path.write_text(json.dumps({"ocsr": {"m1": "CCO"}}))
        backend = make_backend(BackendConfig(fixture_path=str(oracle_path)))
        assert isinstance(backend, FixtureBackend)
        assert backend.ocsr(None, "d", "m1") == "CCO"

    def test_http_mode_with_endpoint(self):
        backend = make_backend(BackendConfig(endpoint="http://models.test"))
        assert isinstance(backend, HttpBackend)

    def test_env_config(self, monkeypatch):
        monkeypatch.setenv("SARLINE_BACKEND_URL", "http://env.test")
        monkeypatch.setenv("SARLINE_BACKEND_TIMEOUT_MS", "1234")
        config = BackendConfig.from_env()
        assert config.endpoint == "http://env.test"
        assert config.timeout_ms == 1234
