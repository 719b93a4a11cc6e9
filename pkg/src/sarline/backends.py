"""Uniform interface to the model-driven extractors: detector, structure
recognizer, coreference reader, and table converter.

Two implementations share one contract: an HTTP client speaking
JSON-over-HTTP to a hosted model service, and a deterministic fixture
backend that answers from an oracle file and stands in for trained models
at desk scale. Fixture mode is selected by leaving the endpoint unset.
"""

from __future__ import annotations

import base64
import io
import json
import os
import random
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Protocol

import httpx

from .domain import DocumentBundle, Region

TASK_DETECT = "detect"
TASK_OCSR = "ocsr"
TASK_COREF_OUT = "coref_out_of_table"
TASK_COREF_IN = "coref_in_table"
TASK_TABLE = "table_html"

COREF_NONE_TOKEN = "[None]"
NOT_ACTIVITY_SENTINEL = "<table>None</table>"

ENV_BACKEND_URL = "SARLINE_BACKEND_URL"
ENV_BACKEND_TIMEOUT_MS = "SARLINE_BACKEND_TIMEOUT_MS"


class BackendError(Exception):
    pass


class BackendUnreachable(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class EmptyPrediction(BackendError):
    pass


class MalformedJson(BackendError):
    pass


class MissingField(BackendError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"backend response missing field {name!r}")


def default_prompts() -> dict[str, str]:
    """The shipped prompt texts, keyed by task name."""
    out = {}
    for task in (TASK_TABLE, TASK_COREF_OUT, TASK_COREF_IN):
        out[task] = resources.files("sarline.prompts").joinpath(f"{task}.txt").read_text(encoding="utf-8")
    return out


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str | None = None  # None selects fixture mode
    timeout_ms: int = 30000
    max_retries: int = 2
    prompts: Mapping[str, str] = field(default_factory=default_prompts)
    fixture_path: str | None = None

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, **overrides: Any) -> "BackendConfig":
        endpoint = overrides.pop("endpoint", os.environ.get(ENV_BACKEND_URL) or None)
        timeout = overrides.pop("timeout_ms", int(os.environ.get(ENV_BACKEND_TIMEOUT_MS, "30000")))
        return cls(endpoint=endpoint, timeout_ms=timeout, **overrides)

    def to_dict(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "timeout_ms": self.timeout_ms,
            "max_retries": self.max_retries,
            "fixture_path": self.fixture_path,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BackendConfig":
        return cls(
            endpoint=d.get("endpoint"),
            timeout_ms=int(d.get("timeout_ms", 30000)),
            max_retries=int(d.get("max_retries", 2)),
            fixture_path=d.get("fixture_path"),
        )


class Backend(Protocol):
    def detect(self, bundle: DocumentBundle) -> list[Region]: ...

    def ocsr(self, image, doc_id: str, region_id: str) -> str: ...

    def coref(self, image, doc_id: str, region_id: str, in_table: bool) -> str | None: ...

    def table_html(self, image, doc_id: str, region_id: str) -> str: ...


def _validate_regions(raw: Any) -> list[Region]:
    if not isinstance(raw, list):
        raise MalformedResponse(f"detect payload must be a list, got {type(raw).__name__}")
    regions = []
    for entry in raw:
        try:
            regions.append(Region.from_dict(entry))
        except Exception as exc:
            raise MalformedResponse(f"invalid region in response: {exc}") from exc
    return regions


def parse_coref_body(body: str) -> str | None:
    """Decode the coreference JSON body; the [None] token maps to absent."""
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"coreference body is not JSON: {exc}") from exc
    if not isinstance(payload, dict) or "compound_id" not in payload:
        raise MissingField("compound_id")
    value = payload["compound_id"]
    if value is None or value == COREF_NONE_TOKEN:
        return None
    return str(value)


# --- fixture backend ---------------------------------------------------------


@dataclass
class NoiseSpec:
    seed: int = 0
    coref_edits: int = 0

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "NoiseSpec":
        if not d:
            return cls()
        return cls(seed=int(d.get("seed", 0)), coref_edits=int(d.get("coref_edits", 0)))


_EDIT_ALPHABET = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"


def apply_noise(value: str, region_id: str, noise: NoiseSpec) -> str:
    """Seeded character edits (substitute/insert/delete), deterministic per region."""
    if noise.coref_edits <= 0 or not value:
        return value
    rng = random.Random(f"{noise.seed}:{region_id}")
    chars = list(value)
    for _ in range(noise.coref_edits):
        op = rng.choice(("substitute", "insert", "delete")) if len(chars) > 1 else "insert"
        if op == "substitute":
            pos = rng.randrange(len(chars))
            chars[pos] = rng.choice([c for c in _EDIT_ALPHABET if c != chars[pos]])
        elif op == "insert":
            pos = rng.randrange(len(chars) + 1)
            chars.insert(pos, rng.choice(_EDIT_ALPHABET))
        else:
            chars.pop(rng.randrange(len(chars)))
    return "".join(chars)


@dataclass
class FixtureOracle:
    """Deterministic stand-in for trained models, loaded from a JSON file.

    Coreference entries are either a plain string, {"left":…, "right":…}
    (resolved left first, per the out-of-table search policy), or
    {"cell":…, "nearby":…} (same cell first, per the in-table policy).
    """

    detections: dict[str, list[Region]] = field(default_factory=dict)
    ocsr: dict[str, str] = field(default_factory=dict)
    coref: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, str] = field(default_factory=dict)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    latency_ms: int = 0

    @classmethod
    def from_dict(cls, d: Mapping) -> "FixtureOracle":
        detections = {
            doc_id: [Region.from_dict(r) for r in regions]
            for doc_id, regions in d.get("detections", {}).items()
        }
        return cls(
            detections=detections,
            ocsr=dict(d.get("ocsr", {})),
            coref=dict(d.get("coref", {})),
            tables=dict(d.get("tables", {})),
            noise=NoiseSpec.from_dict(d.get("noise")),
            latency_ms=int(d.get("latency_ms", 0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "FixtureOracle":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {
            "detections": {k: [r.to_dict() for r in v] for k, v in self.detections.items()},
            "ocsr": self.ocsr,
            "coref": self.coref,
            "tables": self.tables,
            "noise": {"seed": self.noise.seed, "coref_edits": self.noise.coref_edits},
            "latency_ms": self.latency_ms,
        }


class FixtureBackend:
    def __init__(self, oracle: FixtureOracle):
        self.oracle = oracle

    def _wait(self) -> None:
        if self.oracle.latency_ms:
            time.sleep(self.oracle.latency_ms / 1000.0)

    def detect(self, bundle: DocumentBundle) -> list[Region]:
        self._wait()
        if bundle.doc_id in self.oracle.detections:
            return list(self.oracle.detections[bundle.doc_id])
        return list(bundle.regions)

    def ocsr(self, image, doc_id: str, region_id: str) -> str:
        self._wait()
        if region_id not in self.oracle.ocsr:
            raise EmptyPrediction(f"no OCSR fixture for region {region_id!r}")
        return self.oracle.ocsr[region_id]

    def coref(self, image, doc_id: str, region_id: str, in_table: bool) -> str | None:
        self._wait()
        entry = self.oracle.coref.get(region_id)
        value: str | None
        if entry is None:
            value = None
        elif isinstance(entry, str):
            value = entry
        elif in_table:
            value = entry.get("cell") or entry.get("nearby")
        else:
            value = entry.get("left") or entry.get("right")
        if value is None or value == COREF_NONE_TOKEN:
            return None
        return apply_noise(str(value), region_id, self.oracle.noise)

    def table_html(self, image, doc_id: str, region_id: str) -> str:
        self._wait()
        return self.oracle.tables.get(region_id, NOT_ACTIVITY_SENTINEL)


# --- HTTP backend ------------------------------------------------------------


def encode_image(image) -> str:
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return base64.b64encode(buffer.getvalue()).decode("ascii")


class HttpBackend:
    """JSON-over-HTTP client: one endpoint per task, base64-encoded crops."""

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        if config.endpoint is None:
            raise ValueError("HTTP backend needs an endpoint")
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout_ms / 1000.0)

    def _post(self, task: str, path: str, doc_id: str, region_id: str, image_b64: str | None) -> dict:
        body = {
            "task": task,
            "doc_id": doc_id,
            "region_id": region_id,
            "image_b64": image_b64,
            "prompt": self.config.prompts.get(task, ""),
        }
        url = self.config.endpoint.rstrip("/") + path
        attempts = self.config.max_retries + 1
        last_error: Exception | None = None
        for _ in range(attempts):
            try:
                response = self.client.post(url, json=body)
            except httpx.TimeoutException:
                last_error = BackendTimeout(f"{task} timed out after {self.config.timeout_ms} ms")
                continue
            except httpx.TransportError as exc:
                last_error = BackendUnreachable(f"{task}: {exc}")
                continue
            if response.status_code >= 500:
                last_error = BackendUnreachable(f"{task}: server returned {response.status_code}")
                continue
            try:
                payload = response.json()
            except ValueError as exc:
                raise MalformedResponse(f"{task}: response is not JSON: {exc}") from exc
            if "output" not in payload:
                raise MalformedResponse(f"{task}: response lacks 'output'")
            return payload
        assert last_error is not None
        raise last_error

    def detect(self, bundle: DocumentBundle) -> list[Region]:
        payload = self._post(TASK_DETECT, "/detect", bundle.doc_id, "", None)
        return _validate_regions(payload["output"])

    def ocsr(self, image, doc_id: str, region_id: str) -> str:
        payload = self._post(TASK_OCSR, "/ocsr", doc_id, region_id, encode_image(image))
        output = payload["output"]
        if not isinstance(output, str) or not output:
            raise EmptyPrediction(f"empty OCSR output for region {region_id!r}")
        return output

    def coref(self, image, doc_id: str, region_id: str, in_table: bool) -> str | None:
        task = TASK_COREF_IN if in_table else TASK_COREF_OUT
        payload = self._post(task, "/coref", doc_id, region_id, encode_image(image))
        return parse_coref_body(payload["output"] if isinstance(payload["output"], str) else json.dumps(payload["output"]))

    def table_html(self, image, doc_id: str, region_id: str) -> str:
        payload = self._post(TASK_TABLE, "/table", doc_id, region_id, encode_image(image))
        output = payload["output"]
        if not isinstance(output, str):
            raise MalformedResponse("table output must be a string")
        return output


def make_backend(config: BackendConfig) -> Backend:
    if config.endpoint:
        return HttpBackend(config)
    oracle = FixtureOracle.load(config.fixture_path) if config.fixture_path else FixtureOracle()
    return FixtureBackend(oracle)
