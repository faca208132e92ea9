"""REST listener exposing pre-screening and assessment.

Endpoints (all JSON, versioned under /api/v1):

* ``POST /api/v1/prescreen``    evaluate checklist answers; returns the
  outcome plus a signed gate token when the caller may proceed
* ``POST /api/v1/assess``       run the assessment pipeline; requires a
  valid gate token (409 otherwise)
* ``GET  /api/v1/assessments``            paged audit record summaries
* ``GET  /api/v1/assessments/{record_id}``  one full audit record
* ``GET  /api/v1/corpus/units/{ref}``     corpus unit lookup
* ``GET  /api/v1/prescreen/options``      the option catalog for UI clients
* ``GET  /healthz``                       load state and backend reachability

Every 200 from the two POST endpoints appends exactly one record to the
append-only audit log; record ids survive restarts.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import yaml
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import __version__, data_path
from . import annindex, backends, prescreen, ragflow
from .corpus import BadRef, Corpus, UnknownRef, UnitRef, load_corpus, parse_document


class ConfigError(Exception):
    pass


class GateNotPassed(Exception):
    pass


@dataclass(frozen=True)
class BackendSpec:
    """One backend's wiring: http, deterministic or replay."""
    mode: str = "deterministic"
    endpoint: str = ""
    model_id: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    dimension: int = 64
    seed: int = 0
    fixtures_dir: str = ""


@dataclass(frozen=True)
class ServiceConfig:
    bind_host: str = "127.0.0.1"
    bind_port: int = 8080
    corpus_path: str = ""           # empty: parse the bundled document
    index_path: str = ""            # empty or missing file: assess disabled
    rewrite_template_path: str = ""
    answer_template_path: str = ""
    catalog_path: str = ""
    audit_log_path: str = "audit.log"
    retrieval_k: int = 10
    search_budget: int = 0  # 0: use the index default of max(4k, 64)
    kind_filter: tuple[str, ...] = ("article",)
    gate_secret: str = "taiscan-dev-gate-secret"
    gate_ttl_seconds: int = 900
    embedding: BackendSpec = field(default_factory=BackendSpec)
    generation: BackendSpec = field(default_factory=lambda: BackendSpec(mode="replay"))

    def digest(self) -> str:
        payload = json.dumps(self, default=lambda o: o.__dict__, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


_ENV_PREFIX = "TAISCAN_"
_ENV_KEYS = {
    "BIND_HOST": ("bind_host", str),
    "BIND_PORT": ("bind_port", int),
    "CORPUS_PATH": ("corpus_path", str),
    "INDEX_PATH": ("index_path", str),
    "AUDIT_LOG_PATH": ("audit_log_path", str),
    "GATE_SECRET": ("gate_secret", str),
    "GATE_TTL_SECONDS": ("gate_ttl_seconds", int),
    "RETRIEVAL_K": ("retrieval_k", int),
    "SEARCH_BUDGET": ("search_budget", int),
}


def load_config(path: str | Path | None = None, env: dict[str, str] | None = None) -> ServiceConfig:
    """Build a ServiceConfig from a YAML file with TAISCAN_* env overrides."""
    raw: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path}: config must be a mapping")
            raw = loaded

    env = dict(os.environ if env is None else env)
    for key, (attr, cast) in _ENV_KEYS.items():
        value = env.get(_ENV_PREFIX + key)
        if value is not None:
            try:
                raw[attr] = cast(value)
            except ValueError as exc:
                raise ConfigError(f"{_ENV_PREFIX + key}: {exc}") from exc
    for side in ("embedding", "generation"):
        spec = dict(raw.get(side) or {})
        for suffix in ("MODE", "ENDPOINT", "MODEL"):
            value = env.get(f"{_ENV_PREFIX}{side.upper()}_{suffix}")
            if value is not None:
                spec["model_id" if suffix == "MODEL" else suffix.lower()] = value
        raw[side] = spec

    try:
        embedding = BackendSpec(**raw.pop("embedding", {}))
        generation = BackendSpec(**raw.pop("generation", {}))
        if "kind_filter" in raw:
            raw["kind_filter"] = tuple(raw["kind_filter"])
        config = ServiceConfig(embedding=embedding, generation=generation, **raw)
    except TypeError as exc:
        raise ConfigError(f"bad configuration key: {exc}") from exc

    if not (1 <= config.bind_port <= 65535):
        raise ConfigError(f"invalid port {config.bind_port}")
    if config.retrieval_k < 1:
        raise ConfigError("retrieval_k must be >= 1")
    for attr in ("corpus_path", "rewrite_template_path", "answer_template_path", "catalog_path"):
        value = getattr(config, attr)
        if value and not Path(value).exists():
            raise ConfigError(f"{attr} does not exist: {value}")
    return config


# ---------------------------------------------------------------------------
# Gate tokens: HMAC over outcome digest + expiry
# ---------------------------------------------------------------------------


def _b64(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _unb64(text: str) -> bytes:
    padded = text + "=" * (-len(text) % 4)
    return base64.urlsafe_b64decode(padded.encode("ascii"))


def make_gate_token(outcome: prescreen.PrescreenOutcome, secret: str,
                    ttl_seconds: int, now: float | None = None) -> str:
    issued = int(now if now is not None else time.time())
    outcome_digest = hashlib.sha256(
        json.dumps(outcome_to_json(outcome), sort_keys=True).encode("utf-8")).hexdigest()[:16]
    payload = json.dumps({
        "may_proceed": outcome.may_proceed,
        "issued_at": issued,
        "expires_at": issued + ttl_seconds,
        "outcome_digest": outcome_digest,
    }, sort_keys=True).encode("utf-8")
    signature = hmac.new(secret.encode("utf-8"), payload, hashlib.sha256).digest()
    return f"{_b64(payload)}.{_b64(signature)}"


def verify_gate_token(token: str, secret: str, now: float | None = None) -> dict:
    """Returns the token payload or raises GateNotPassed."""
    try:
        payload_b64, signature_b64 = token.split(".")
        payload = _unb64(payload_b64)
        signature = _unb64(signature_b64)
    except (ValueError, TypeError) as exc:
        raise GateNotPassed("malformed gate token") from exc
    expected = hmac.new(secret.encode("utf-8"), payload, hashlib.sha256).digest()
    if not hmac.compare_digest(signature, expected):
        raise GateNotPassed("gate token signature mismatch")
    data = json.loads(payload)
    if not data.get("may_proceed"):
        raise GateNotPassed("pre-screening outcome does not permit assessment")
    current = time.time() if now is None else now
    if current > data["expires_at"]:
        raise GateNotPassed("gate token expired; run pre-screening again")
    return data


# ---------------------------------------------------------------------------
# Audit log
# ---------------------------------------------------------------------------


class AuditLog:
    """Append-only JSON-lines log; ids strictly increase and survive restarts."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._next_id = 1
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._next_id = json.loads(line)["id"] + 1

    def append(self, kind: str, request_payload, outcome_payload,
               prompt_version: str | None, model_ids: dict, config_digest: str) -> int:
        from datetime import datetime, timezone
        with self._lock:
            record = {
                "id": self._next_id,
                "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                "kind": kind,
                "request": request_payload,
                "outcome": outcome_payload,
                "prompt_version": prompt_version,
                "model_ids": model_ids,
                "config_digest": config_digest,
            }
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._next_id += 1
            return record["id"]

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [json.loads(line) for line in self.path.read_text(encoding="utf-8").splitlines()
                if line.strip()]

    def get(self, record_id: int) -> dict | None:
        for record in self.records():
            if record["id"] == record_id:
                return record
        return None

    def count(self) -> int:
        return len(self.records())


# ---------------------------------------------------------------------------
# Components and JSON mappings
# ---------------------------------------------------------------------------


def build_backend(spec: BackendSpec, kind: str):
    if spec.mode == "http":
        config = backends.BackendConfig(endpoint=spec.endpoint, model_id=spec.model_id,
                                        timeout=spec.timeout, max_retries=spec.max_retries)
        if kind == "embedding":
            return backends.HttpEmbeddingBackend(config)
        return backends.HttpGenerationBackend(config)
    if spec.mode == "deterministic":
        if kind == "embedding":
            return backends.DeterministicEmbeddingBackend(spec.dimension, spec.seed)
        return None  # resolved against the corpus in build_components
    if spec.mode == "replay":
        fixtures = spec.fixtures_dir or str(data_path("fixtures", "replay"))
        if kind == "embedding":
            return backends.ReplayEmbeddingBackend(fixtures)
        return backends.ReplayGenerationBackend(fixtures)
    raise ConfigError(f"unknown backend mode {spec.mode!r}")


@dataclass
class ServiceComponents:
    config: ServiceConfig
    corpus: Corpus
    catalog: prescreen.OptionCatalog
    template: ragflow.PromptTemplate
    index: annindex.AnnIndex | None
    embedding_backend: object | None
    generation_backend: object
    audit: AuditLog


def build_components(config: ServiceConfig) -> ServiceComponents:
    if config.corpus_path:
        corpus = load_corpus(config.corpus_path)
    else:
        corpus = parse_document(data_path("ai_act_extract.txt").read_text(encoding="utf-8"),
                                source="ai_act_extract.txt", version="2024/1689-abridged")
    catalog = prescreen.load_catalog(config.catalog_path or None)
    template = ragflow.load_templates(config.rewrite_template_path or None,
                                      config.answer_template_path or None)

    index = None
    if config.index_path and Path(config.index_path).exists():
        index = annindex.load(config.index_path)

    embedding = build_backend(config.embedding, "embedding")
    generation = build_backend(config.generation, "generation")
    if generation is None:
        generation = ragflow.scripted_assessment_backend(corpus, config.generation.seed)

    audit = AuditLog(config.audit_log_path)
    return ServiceComponents(config=config, corpus=corpus, catalog=catalog, template=template,
                             index=index, embedding_backend=embedding,
                             generation_backend=generation, audit=audit)


def outcome_to_json(outcome: prescreen.PrescreenOutcome) -> dict:
    return {
        "classification": outcome.classification.value,
        "risk": outcome.risk.value,
        "gpai": outcome.gpai.value,
        "may_proceed": outcome.may_proceed,
        "triggered_rules": [{"rule": f.rule, "options": list(f.options)}
                            for f in outcome.triggered_rules],
        "display": prescreen.outcome_text(outcome),
    }


def result_to_json(result: ragflow.AssessmentResult) -> dict:
    return {
        "risk_level": result.risk_level.value,
        "articles": sorted(str(r) for r in result.articles),
        "recitals": sorted(str(r) for r in result.recitals),
        "annexes": sorted(str(r) for r in result.annexes),
        "article_groups": {str(ref): group.value for ref, group in
                           sorted(result.article_groups.items(), key=lambda kv: int(kv[0].number))},
        "retrieved_context": [{"ref": str(ref), "score": score}
                              for ref, score in result.retrieved_context],
        "rewritten_query": result.rewritten_query,
        "raw_generation": result.raw_generation,
        "prompt_version": result.prompt_version,
        "warnings": list(result.warnings),
    }


def unit_to_json(unit) -> dict:
    return {
        "ref": str(unit.ref),
        "kind": unit.ref.kind.value,
        "number": unit.ref.number,
        "title": unit.title,
        "body": unit.body,
        "paragraphs": [{"label": p.label, "text": p.text} for p in unit.paragraphs],
    }


def catalog_to_json(catalog: prescreen.OptionCatalog) -> dict:
    return {
        "version": catalog.version,
        "groups": {
            group: {
                "question": catalog.questions[group],
                "options": [{"id": o.id, "text": o.text, "citations": [str(c) for c in o.citations]}
                            for o in catalog.options[group]],
            }
            for group in prescreen.GROUPS
        },
        "gpai": {"question": catalog.gpai_question, "text": catalog.gpai_text,
                 "citations": [str(c) for c in catalog.gpai_citations]},
    }


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------


def create_app(components: ServiceComponents) -> FastAPI:
    app = FastAPI(title="taiscan", version=__version__)
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.components = components
    config = components.config
    model_ids = {
        "embedding": getattr(components.embedding_backend, "model_id", None),
        "generation": getattr(components.generation_backend, "model_id", None),
    }

    def error(status: int, code: str, detail) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": code, "detail": detail})

    @app.post("/api/v1/prescreen")
    async def handle_prescreen(request: Request):
        payload = await request.json()
        try:
            answers = prescreen.validate_answers(payload, components.catalog)
        except prescreen.PrescreenError as exc:
            return error(400, "validation_failed", exc.errors)
        outcome = prescreen.evaluate(answers, components.catalog)
        body = outcome_to_json(outcome)
        if outcome.may_proceed:
            body["gate_token"] = make_gate_token(outcome, config.gate_secret,
                                                 config.gate_ttl_seconds)
        try:
            body["audit_id"] = components.audit.append(
                "prescreen", payload, outcome_to_json(outcome), None, model_ids, config.digest())
        except OSError as exc:
            return error(500, "audit_failure", str(exc))
        return body

    @app.post("/api/v1/assess")
    async def handle_assess(request: Request):
        payload = await request.json()
        if not isinstance(payload, dict):
            return error(400, "validation_failed", ["payload must be an object"])
        token = payload.get("gate_token")
        if not token:
            return error(409, "gate_not_passed", "missing gate_token; run pre-screening first")
        try:
            verify_gate_token(token, config.gate_secret)
        except GateNotPassed as exc:
            return error(409, "gate_not_passed", str(exc))

        if components.index is None:
            return error(503, "index_unavailable", "no ANN index loaded; assessment disabled")

        field_errors = []
        try:
            role = ragflow.Role(str(payload.get("role", "")).lower())
        except ValueError:
            field_errors.append("role: must be 'provider' or 'deployer'")
            role = ragflow.Role.PROVIDER
        values = {}
        for name in ("domain", "system_type", "input_data", "intended_use"):
            value = payload.get(name, "")
            if not isinstance(value, str) or not value.strip():
                field_errors.append(f"{name}: must be non-empty text")
            values[name] = value
        if field_errors:
            return error(400, "validation_failed", field_errors)
        input_ = ragflow.AssessmentInput(role=role, **values)

        try:
            result = ragflow.assess(input_, components.index, components.corpus,
                                    components.embedding_backend, components.generation_backend,
                                    components.template, k=config.retrieval_k,
                                    kinds=config.kind_filter or None,
                                    search_budget=config.search_budget or None)
        except backends.BackendError as exc:
            return JSONResponse(status_code=502, headers={"Retry-After": "5"},
                                content={"error": "backend_unavailable", "detail": str(exc)})
        except ragflow.MalformedOutput as exc:
            return error(422, "malformed_output", str(exc))

        body = result_to_json(result)
        request_record = {k: payload[k] for k in
                          ("role", "domain", "system_type", "input_data", "intended_use")}
        try:
            body["audit_id"] = components.audit.append(
                "assess", request_record, result_to_json(result),
                result.prompt_version, model_ids, config.digest())
        except OSError as exc:
            return error(500, "audit_failure", str(exc))
        return body

    @app.get("/api/v1/assessments")
    def list_audits(page: int = 1, page_size: int = 20):
        if page < 1 or page_size < 1:
            return error(400, "validation_failed", ["page and page_size must be >= 1"])
        records = components.audit.records()
        start = (page - 1) * page_size
        summaries = [{"id": r["id"], "timestamp": r["timestamp"], "kind": r["kind"]}
                     for r in records[start:start + page_size]]
        return {"total": len(records), "page": page, "page_size": page_size,
                "records": summaries}

    @app.get("/api/v1/assessments/{record_id}")
    def get_audit(record_id: int):
        record = components.audit.get(record_id)
        if record is None:
            return error(404, "not_found", f"no audit record {record_id}")
        return record

    @app.get("/api/v1/corpus/units/{ref}")
    def get_corpus_unit(ref: str):
        try:
            unit = components.corpus.get(UnitRef.parse(ref))
        except (BadRef, UnknownRef) as exc:
            return error(404, "not_found", str(exc))
        return unit_to_json(unit)

    @app.get("/api/v1/prescreen/options")
    def get_catalog():
        return catalog_to_json(components.catalog)

    @app.get("/healthz")
    def health():
        detail = {
            "corpus": {"loaded": True, "units": len(components.corpus)},
            "index": {"loaded": components.index is not None,
                      "items": len(components.index) if components.index else 0},
            "embedding_backend": _probe_backend(components.embedding_backend, config.embedding),
            "generation_backend": _probe_backend(components.generation_backend, config.generation),
        }
        degraded = (components.index is None
                    or detail["embedding_backend"] != "ok"
                    or detail["generation_backend"] != "ok")
        return {"status": "degraded" if degraded else "ok",
                "assess_enabled": components.index is not None,
                "components": detail, "version": __version__}

    return app


def _probe_backend(backend, spec: BackendSpec) -> str:
    if backend is None:
        return "missing"
    if spec.mode != "http":
        return "ok"  # in-process backends are reachable by construction
    try:
        httpx.get(spec.endpoint, timeout=1.0)
        return "ok"
    except httpx.HTTPError as exc:
        return f"unreachable: {type(exc).__name__}"
