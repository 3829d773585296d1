"""Chat-completion and embedding clients with schema-constrained output.

Every chat call is bound to an output schema (stage prediction, stage plus
rule list, or rule list only). When the backend enforces the schema server
side the JSON schema is forwarded; either way the client validates locally
and re-asks with a corrective instruction up to a retry budget. A scripted
backend replays canned responses for fully deterministic, offline runs.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .corpus import CorpusError, StageCategory, StageLabel


class LlmError(Exception):
    """Base class for client and backend failures."""


class TransportError(LlmError):
    """Network-level failure. Retried with backoff when `retryable`."""

    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class AuthenticationError(LlmError):
    """Endpoint rejected the credentials; never retried."""


class SchemaViolation(LlmError):
    """A single model response failed schema validation (internal, retried)."""


class SchemaViolationError(LlmError):
    """All retries produced schema-violating output; terminal for the call."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class ScriptError(LlmError):
    """Scripted backend problem: malformed script or key miss."""


class ScriptExhaustedError(ScriptError):
    """The script has no responses left."""


class SchemaKind(Enum):
    STAGING = "staging"
    STAGING_WITH_RULES = "staging_with_rules"
    RULES_ONLY = "rules_only"


@dataclass(frozen=True)
class OutputSchema:
    """What a chat response must contain; staging kinds bind a category."""

    kind: SchemaKind
    category: StageCategory | None = None

    def __post_init__(self) -> None:
        needs_category = self.kind is not SchemaKind.RULES_ONLY
        if needs_category and self.category is None:
            raise LlmError(f"schema kind {self.kind.value} requires a category")
        if not needs_category and self.category is not None:
            raise LlmError("rules_only schema takes no category")

    @classmethod
    def staging(cls, category: StageCategory) -> OutputSchema:
        return cls(SchemaKind.STAGING, category)

    @classmethod
    def staging_with_rules(cls, category: StageCategory) -> OutputSchema:
        return cls(SchemaKind.STAGING_WITH_RULES, category)

    @classmethod
    def rules_only(cls) -> OutputSchema:
        return cls(SchemaKind.RULES_ONLY)

    @property
    def wants_stage(self) -> bool:
        return self.kind in (SchemaKind.STAGING, SchemaKind.STAGING_WITH_RULES)

    @property
    def wants_rules(self) -> bool:
        return self.kind in (SchemaKind.STAGING_WITH_RULES, SchemaKind.RULES_ONLY)

    def label_names(self) -> list[str]:
        return self.category.label_names() if self.category else []

    def json_schema(self) -> dict:
        """JSON schema forwarded to backends that constrain decoding."""
        props: dict[str, dict] = {}
        required: list[str] = []
        if self.wants_stage:
            props["reasoning"] = {"type": "string"}
            props["stage"] = {"type": "string", "enum": self.label_names()}
            required += ["reasoning", "stage"]
        if self.wants_rules:
            props["rules"] = {
                "type": "array",
                "items": {"type": "string", "minLength": 1},
                "minItems": 1,
            }
            required.append("rules")
        return {
            "type": "object",
            "properties": props,
            "required": required,
            "additionalProperties": False,
        }


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call. `template_id` is provenance for replay keying."""

    user: str
    schema: OutputSchema
    system: str | None = None
    temperature: float = 0.0
    max_tokens: int = 1024
    template_id: str | None = None

    def __post_init__(self) -> None:
        if not self.user.strip():
            raise LlmError("user text must be non-empty")
        if self.temperature < 0:
            raise LlmError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise LlmError("max_tokens must be positive")


@dataclass(frozen=True)
class StructuredOutput:
    """Validated model output; fields present exactly as the schema demands."""

    raw: str
    reasoning: str | None = None
    stage: StageLabel | None = None
    rules: tuple[str, ...] | None = None


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def __post_init__(self) -> None:
        if not self.values:
            raise LlmError("embedding vector must be non-empty")
        if all(v == 0.0 for v in self.values):
            raise LlmError("embedding vector is all-zero")


def _extract_json_object(text: str) -> dict:
    """Parse the response as JSON, tolerating surrounding prose."""
    try:
        obj = json.loads(text)
        if isinstance(obj, dict):
            return obj
    except json.JSONDecodeError:
        pass
    # fall back to the first balanced {...} block
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : i + 1])
                        if isinstance(obj, dict):
                            return obj
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    raise SchemaViolation("response is not a JSON object")


def parse_structured(raw: str, schema: OutputSchema) -> StructuredOutput:
    """Validate raw model text against the schema, or raise SchemaViolation."""
    obj = _extract_json_object(raw)
    reasoning: str | None = None
    stage: StageLabel | None = None
    rules: tuple[str, ...] | None = None
    if schema.wants_stage:
        if "reasoning" not in obj:
            raise SchemaViolation("missing required field 'reasoning'")
        if not isinstance(obj["reasoning"], str):
            raise SchemaViolation("'reasoning' must be a string")
        reasoning = obj["reasoning"]
        if "stage" not in obj:
            raise SchemaViolation("missing required field 'stage'")
        if not isinstance(obj["stage"], str):
            raise SchemaViolation("'stage' must be a string")
        assert schema.category is not None
        try:
            stage = StageLabel.parse(obj["stage"], schema.category)
        except CorpusError:
            raise SchemaViolation(
                f"'stage' must be one of {', '.join(schema.label_names())}; "
                f"got {obj['stage']!r}"
            )
    if schema.wants_rules:
        if "rules" not in obj:
            raise SchemaViolation("missing required field 'rules'")
        val = obj["rules"]
        if not isinstance(val, list) or not val:
            raise SchemaViolation("'rules' must be a non-empty list of strings")
        cleaned = []
        for r in val:
            if not isinstance(r, str) or not r.strip():
                raise SchemaViolation("'rules' entries must be non-empty strings")
            cleaned.append(r.strip())
        rules = tuple(cleaned)
    return StructuredOutput(raw=raw, reasoning=reasoning, stage=stage, rules=rules)


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class EmbedBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> tuple[list[list[float]], str]: ...


# --------------------------------------------------------------------------
# scripted backend
# --------------------------------------------------------------------------


@dataclass
class _ScriptEntry:
    kind: str
    body: dict
    key_template: str | None = None
    key_index: int | None = None


def _hash_vector(text: str, dim: int) -> list[float]:
    """Deterministic pseudo-embedding derived from sha256; platform-stable."""
    values = []
    for i in range(dim):
        digest = hashlib.sha256(f"{i}:{text}".encode("utf-8")).digest()
        n = int.from_bytes(digest[:8], "big", signed=False)
        values.append(n / 2**63 - 1.0)  # in [-1, 1)
    if all(v == 0.0 for v in values):  # astronomically unlikely
        values[0] = 1.0
    return values


class ScriptedBackend:
    """Replays scripted chat/embed responses; deterministic by construction.

    Chat entries are matched by (template_id, per-template 1-based call
    index) when keyed, otherwise consumed in file order. Embed entries are
    either persistent lookups (``{"map": {...}}`` / ``{"hash_dim": n}``) or
    positionally consumed ``{"vectors": [...]}`` batches.
    """

    deterministic = True
    model_id = "scripted"

    def __init__(self, entries: Sequence[_ScriptEntry]):
        self._lock = threading.Lock()
        self._template_counts: dict[str, int] = {}
        self._keyed_chat: dict[tuple[str, int], _ScriptEntry] = {}
        self._chat_queue: deque[_ScriptEntry] = deque()
        self._vector_queue: deque[_ScriptEntry] = deque()
        self._maps: list[dict] = []
        self._hash_dim: int | None = None
        for e in entries:
            if e.kind == "chat":
                if e.key_template is not None:
                    self._keyed_chat[(e.key_template, e.key_index)] = e
                else:
                    self._chat_queue.append(e)
            elif "map" in e.body:
                self._maps.append(e.body["map"])
            elif "hash_dim" in e.body:
                if self._hash_dim is None:
                    self._hash_dim = int(e.body["hash_dim"])
            elif "vectors" in e.body:
                self._vector_queue.append(e)
            else:
                raise ScriptError(
                    "embed entry body needs one of 'map', 'hash_dim', 'vectors'"
                )
        self.chat_calls = 0
        self.embed_calls = 0

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedBackend:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ScriptError(f"cannot parse script {path}: {exc}")
        return cls(cls._parse_entries(data, origin=str(path)))

    @classmethod
    def from_entries(cls, data: Sequence[dict]) -> ScriptedBackend:
        return cls(cls._parse_entries(data, origin="<inline>"))

    @staticmethod
    def _parse_entries(data, origin: str) -> list[_ScriptEntry]:
        if not isinstance(data, list):
            raise ScriptError(f"{origin}: script must be a JSON list")
        entries = []
        for pos, item in enumerate(data):
            if not isinstance(item, dict):
                raise ScriptError(f"{origin}: entry {pos} is not an object")
            kind = item.get("kind")
            if kind not in ("chat", "embed"):
                raise ScriptError(f"{origin}: entry {pos} has bad kind {kind!r}")
            body = item.get("body")
            if not isinstance(body, dict):
                raise ScriptError(f"{origin}: entry {pos} body must be an object")
            key = item.get("key")
            if key is None:
                entries.append(_ScriptEntry(kind=kind, body=body))
            elif (
                isinstance(key, dict)
                and isinstance(key.get("template"), str)
                and isinstance(key.get("index"), int)
            ):
                entries.append(
                    _ScriptEntry(
                        kind=kind,
                        body=body,
                        key_template=key["template"],
                        key_index=key["index"],
                    )
                )
            else:
                raise ScriptError(f"{origin}: entry {pos} has malformed key {key!r}")
        return entries

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.chat_calls += 1
            tid = request.template_id
            index = None
            if tid is not None:
                self._template_counts[tid] = self._template_counts.get(tid, 0) + 1
                index = self._template_counts[tid]
                entry = self._keyed_chat.pop((tid, index), None)
                if entry is not None:
                    return self._chat_body(entry)
            if self._chat_queue:
                return self._chat_body(self._chat_queue.popleft())
            if self._keyed_chat:
                raise ScriptError(
                    f"no scripted chat response for template {tid!r} call {index}"
                )
            raise ScriptExhaustedError("script exhausted: no chat responses left")

    @staticmethod
    def _chat_body(entry: _ScriptEntry) -> str:
        body = entry.body
        if set(body) == {"raw_text"}:
            return str(body["raw_text"])
        return json.dumps(body)

    def embed(self, texts: Sequence[str]) -> tuple[list[list[float]], str]:
        with self._lock:
            self.embed_calls += 1
            resolved = self._resolve_persistent(texts)
            if resolved is not None:
                return resolved, self.model_id
            if self._vector_queue:
                entry = self._vector_queue.popleft()
                vectors = entry.body["vectors"]
                if len(vectors) != len(texts):
                    raise ScriptError(
                        f"scripted embed batch has {len(vectors)} vectors "
                        f"for {len(texts)} texts"
                    )
                return [list(map(float, v)) for v in vectors], self.model_id
            raise ScriptExhaustedError("script exhausted: no embed responses left")

    def _resolve_persistent(self, texts: Sequence[str]) -> list[list[float]] | None:
        out: list[list[float]] = []
        for text in texts:
            vec = None
            for m in self._maps:
                if text in m:
                    vec = [float(x) for x in m[text]]
                    break
            if vec is None and self._hash_dim is not None:
                vec = _hash_vector(text, self._hash_dim)
            if vec is None:
                return None
            out.append(vec)
        return out if out or not texts else None


def scripted_backend(script: str | Path) -> ScriptedBackend:
    """Load a replay backend from a script file (see ScriptedBackend)."""
    return ScriptedBackend.from_file(script)


# --------------------------------------------------------------------------
# live OpenAI-compatible backends
# --------------------------------------------------------------------------


def _endpoint(base: str, path: str) -> str:
    base = base.rstrip("/")
    if base.endswith("/v1"):
        return f"{base}{path[len('/v1'):]}"
    return f"{base}{path}"


class HttpChatBackend:
    """POSTs to ``{base}/v1/chat/completions``; forwards the JSON schema."""

    deterministic = False

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        model: str = "default",
        forward_schema: bool = True,
        timeout_s: float = 120.0,
    ):
        self.base_url = base_url
        self.api_key = api_key
        self.model_id = model
        self.forward_schema = forward_schema
        self.timeout_s = timeout_s

    def complete(self, request: ChatRequest) -> str:
        import requests

        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        payload: dict = {
            "model": self.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if self.forward_schema:
            payload["response_format"] = {
                "type": "json_schema",
                "json_schema": {
                    "name": "staging_output",
                    "schema": request.schema.json_schema(),
                },
            }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                _endpoint(self.base_url, "/v1/chat/completions"),
                json=payload,
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransportError(f"chat endpoint unreachable: {exc}")
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"chat endpoint rejected credentials ({resp.status_code})")
        if resp.status_code >= 500:
            raise TransportError(f"chat endpoint error {resp.status_code}")
        if resp.status_code != 200:
            raise TransportError(
                f"chat endpoint returned {resp.status_code}: {resp.text[:200]}",
                retryable=False,
            )
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed chat response: {exc}", retryable=False)


class HttpEmbedBackend:
    """POSTs to ``{base}/v1/embeddings``."""

    deterministic = False

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        model: str = "default",
        timeout_s: float = 120.0,
    ):
        self.base_url = base_url
        self.api_key = api_key
        self.model_id = model
        self.timeout_s = timeout_s

    def embed(self, texts: Sequence[str]) -> tuple[list[list[float]], str]:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                _endpoint(self.base_url, "/v1/embeddings"),
                json={"model": self.model_id, "input": list(texts)},
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransportError(f"embedding endpoint unreachable: {exc}")
        if resp.status_code in (401, 403):
            raise AuthenticationError(
                f"embedding endpoint rejected credentials ({resp.status_code})"
            )
        if resp.status_code >= 500:
            raise TransportError(f"embedding endpoint error {resp.status_code}")
        if resp.status_code != 200:
            raise TransportError(
                f"embedding endpoint returned {resp.status_code}: {resp.text[:200]}",
                retryable=False,
            )
        try:
            data = resp.json()
            rows = sorted(data["data"], key=lambda d: d["index"])
            vectors = [list(map(float, row["embedding"])) for row in rows]
            model = data.get("model", self.model_id)
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed embedding response: {exc}", retryable=False)
        return vectors, model


# --------------------------------------------------------------------------
# client
# --------------------------------------------------------------------------


class LlmClient:
    """Shared handle over chat/embed backends with validation and retries."""

    def __init__(
        self,
        chat_backend: ChatBackend | None = None,
        embed_backend: EmbedBackend | None = None,
        *,
        max_schema_retries: int = 3,
        transport_attempts: int = 3,
        backoff_s: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        max_in_flight: int = 4,
    ):
        self.chat_backend = chat_backend
        self.embed_backend = embed_backend
        self.max_schema_retries = max_schema_retries
        self.transport_attempts = transport_attempts
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._gate = threading.Semaphore(max_in_flight)

    @property
    def deterministic(self) -> bool:
        return bool(getattr(self.chat_backend, "deterministic", False))

    def chat(self, request: ChatRequest) -> StructuredOutput:
        """Run one schema-validated chat call.

        Raises SchemaViolationError once the retry budget is spent; callers
        typically record the report as unparseable and continue.
        """
        if self.chat_backend is None:
            raise LlmError("no chat backend configured")
        attempt_request = request
        last: SchemaViolation | None = None
        raw = ""
        for _ in range(1 + self.max_schema_retries):
            raw = self._complete(attempt_request)
            try:
                return parse_structured(raw, request.schema)
            except SchemaViolation as violation:
                last = violation
                attempt_request = replace(
                    request, user=self._corrective(request, violation)
                )
        raise SchemaViolationError(
            f"schema still violated after {self.max_schema_retries} retries: {last}",
            raw=raw,
        )

    def _corrective(self, request: ChatRequest, violation: SchemaViolation) -> str:
        schema = request.schema
        parts = [f"Your previous response was invalid: {violation}."]
        fields = []
        if schema.wants_stage:
            fields.append('"reasoning" (string)')
            fields.append(f'"stage" (exactly one of {", ".join(schema.label_names())})')
        if schema.wants_rules:
            fields.append('"rules" (non-empty list of non-empty strings)')
        parts.append(f"Respond with a single JSON object containing {' and '.join(fields)}.")
        return request.user + "\n\n" + " ".join(parts)

    def _complete(self, request: ChatRequest) -> str:
        assert self.chat_backend is not None
        delay = self.backoff_s
        for attempt in range(1, self.transport_attempts + 1):
            try:
                with self._gate:
                    return self.chat_backend.complete(request)
            except TransportError as exc:
                if not exc.retryable or attempt == self.transport_attempts:
                    raise
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        """Embed a batch; one vector per text, order preserved."""
        if not texts:
            return []
        if self.embed_backend is None:
            raise LlmError("no embedding backend configured")
        for t in texts:
            if not t:
                raise LlmError("cannot embed empty text")
        delay = self.backoff_s
        for attempt in range(1, self.transport_attempts + 1):
            try:
                with self._gate:
                    vectors, model_id = self.embed_backend.embed(texts)
                break
            except TransportError as exc:
                if not exc.retryable or attempt == self.transport_attempts:
                    raise
                self._sleep(delay)
                delay *= 2
        if len(vectors) != len(texts):
            raise LlmError(
                f"embedding backend returned {len(vectors)} vectors for {len(texts)} texts"
            )
        dims = {len(v) for v in vectors}
        if len(dims) > 1:
            raise LlmError(f"inconsistent embedding dimensions in one batch: {sorted(dims)}")
        return [EmbeddingVector(tuple(v), model_id) for v in vectors]


def client_from_env(
    *,
    llm_base: str | None = None,
    llm_key: str | None = None,
    embed_base: str | None = None,
    embed_key: str | None = None,
    llm_model: str = "default",
    embed_model: str = "default",
) -> LlmClient:
    """Build a live client from STAGEPIPE_* env vars (explicit args win)."""
    import os

    llm_base = llm_base or os.environ.get("STAGEPIPE_LLM_BASE")
    llm_key = llm_key if llm_key is not None else os.environ.get("STAGEPIPE_LLM_KEY", "")
    embed_base = embed_base or os.environ.get("STAGEPIPE_EMBED_BASE")
    embed_key = (
        embed_key if embed_key is not None else os.environ.get("STAGEPIPE_EMBED_KEY", "")
    )
    chat = HttpChatBackend(llm_base, llm_key, model=llm_model) if llm_base else None
    emb = HttpEmbedBackend(embed_base, embed_key, model=embed_model) if embed_base else None
    return LlmClient(chat_backend=chat, embed_backend=emb)
