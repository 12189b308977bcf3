"""Chat-completion and embedding backends.

Two implementations share one interface: an OpenAI-compatible HTTP client
and a scripted backend that replays canned responses for offline tests.
Scripted runs are fully deterministic, which is what makes end-to-end
pipeline tests byte-for-byte reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

VALID_ROLES = ("system", "user", "assistant")


class BackendError(Exception):
    """Any failure talking to a backend."""


class AuthenticationError(BackendError):
    """Credential rejected; never retried."""


class TransportError(BackendError):
    """Network-level failure after retries were exhausted."""


class ScriptExhausted(BackendError):
    """The scripted backend ran out of queued responses."""


@dataclass(frozen=True, slots=True)
class TextPart:
    text: str


@dataclass(frozen=True, slots=True)
class ImagePart:
    data: bytes
    media_type: str = "image/png"

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


@dataclass(frozen=True, slots=True)
class ChatMessage:
    role: str
    parts: tuple

    def __post_init__(self):
        if self.role not in VALID_ROLES:
            raise ValueError(f"bad role {self.role!r}")
        if not self.parts:
            raise ValueError("message needs at least one part")
        if self.role != "user" and any(isinstance(p, ImagePart) for p in self.parts):
            raise ValueError("image parts are only allowed in user messages")

    @classmethod
    def system(cls, text: str) -> "ChatMessage":
        return cls("system", (TextPart(text),))

    @classmethod
    def user(cls, text: str, images: list[ImagePart] | None = None) -> "ChatMessage":
        parts: list = [TextPart(text)]
        parts.extend(images or [])
        return cls("user", tuple(parts))

    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))


@dataclass(frozen=True, slots=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_output_tokens: int = 2048
    model_name: str = ""

    def prompt_text(self) -> str:
        return "\n".join(m.text() for m in self.messages)


@dataclass(frozen=True, slots=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True, slots=True)
class CompletionResult:
    text: str
    usage: TokenUsage = TokenUsage()
    truncated: bool = False


@dataclass(frozen=True, slots=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.values)


class Backend:
    """Interface: complete() for chat, embed() for text embeddings."""

    name = "backend"

    def complete(self, req: ChatRequest) -> CompletionResult:
        raise NotImplementedError

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        raise NotImplementedError


def _hash_embedding(text: str, dim: int) -> EmbeddingVector:
    # deterministic pseudo-embedding: unit vector seeded by the text digest
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
    rng = random.Random(seed)
    vec = [rng.gauss(0.0, 1.0) for _ in range(dim)]
    norm = sum(v * v for v in vec) ** 0.5 or 1.0
    return EmbeddingVector(tuple(v / norm for v in vec))


@dataclass
class ScriptRecord:
    response: str | None = None
    match: str | None = None
    error: str | None = None


class ScriptedBackend(Backend):
    """Replays canned responses.

    Records with a ``match`` substring are routes: any request whose prompt
    text contains the substring gets that response, and routes are reusable
    (so concurrent callers see the same answers regardless of scheduling).
    Records without ``match`` form a FIFO queue consumed one per call.
    Records may carry ``error`` instead of ``response`` to simulate failures.
    """

    name = "scripted"

    def __init__(
        self,
        responses: list[str] | None = None,
        routes: list[ScriptRecord] | None = None,
        embeddings: dict[str, list[float]] | None = None,
        embed_dim: int = 16,
    ):
        self._queue: list[ScriptRecord] = [ScriptRecord(response=r) for r in (responses or [])]
        self._routes: list[ScriptRecord] = list(routes or [])
        self._embeddings = dict(embeddings or {})
        self.embed_dim = embed_dim
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []

    @classmethod
    def from_records(cls, records: list[dict], **kwargs) -> "ScriptedBackend":
        backend = cls(**kwargs)
        for rec in records:
            if "embed" in rec:
                backend._embeddings[rec["embed"]] = list(rec["vector"])
                continue
            parsed = ScriptRecord(
                response=rec.get("response"), match=rec.get("match"), error=rec.get("error")
            )
            if parsed.match is not None:
                backend._routes.append(parsed)
            else:
                backend._queue.append(parsed)
        return backend

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            records = data.get("records", [])
            kwargs.setdefault("embed_dim", data.get("embed_dim", 16))
        else:
            records = data
        return cls.from_records(records, **kwargs)

    def complete(self, req: ChatRequest) -> CompletionResult:
        prompt = req.prompt_text()
        with self._lock:
            self.calls.append(req)
            for route in self._routes:
                if route.match in prompt:
                    if route.error is not None:
                        raise BackendError(route.error)
                    return CompletionResult(text=route.response)
            if not self._queue:
                raise ScriptExhausted("script exhausted")
            rec = self._queue.pop(0)
        if rec.error is not None:
            raise BackendError(rec.error)
        return CompletionResult(text=rec.response)

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            raise BackendError("embed requires at least one text")
        out = []
        for t in texts:
            if not t.strip():
                raise BackendError("empty text")
            if t in self._embeddings:
                out.append(EmbeddingVector(tuple(float(v) for v in self._embeddings[t])))
            else:
                out.append(_hash_embedding(t, self.embed_dim))
        return out


def _to_openai_message(msg: ChatMessage) -> dict:
    if all(isinstance(p, TextPart) for p in msg.parts):
        return {"role": msg.role, "content": msg.text()}
    content = []
    for part in msg.parts:
        if isinstance(part, TextPart):
            content.append({"type": "text", "text": part.text})
        else:
            b64 = base64.b64encode(part.data).decode("ascii")
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:{part.media_type};base64,{b64}"},
                }
            )
    return {"role": msg.role, "content": content}


class HTTPBackend(Backend):
    """OpenAI-compatible chat/embeddings client with bounded retries.

    Transient transport failures and 429/5xx responses get up to
    ``max_retries`` retries after the initial attempt, waiting 1s, 2s, 4s
    (±20% jitter); authentication failures are surfaced immediately. At most
    ``max_inflight`` requests run at once.
    """

    name = "http"

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        chat_model: str = "",
        embed_model: str = "",
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff_base: float = 1.0,
        max_inflight: int = 4,
        session: requests.Session | None = None,
        sleep=time.sleep,
    ):
        if not base_url:
            raise BackendError("backend not configured: missing API base URL")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.chat_model = chat_model
        self.embed_model = embed_model
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._session = session or requests.Session()
        self._sleep = sleep
        self._sem = threading.Semaphore(max_inflight)
        self._jitter = random.Random(0)

    @classmethod
    def from_env(cls, environ) -> "HTTPBackend":
        return cls(
            base_url=environ.get("DECKAGENT_API_BASE", ""),
            api_key=environ.get("DECKAGENT_API_KEY", ""),
            chat_model=environ.get("DECKAGENT_CHAT_MODEL", ""),
            embed_model=environ.get("DECKAGENT_EMBED_MODEL", ""),
        )

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        attempts = self.max_retries + 1
        last_exc: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                delay = self.backoff_base * (2 ** (attempt - 1))
                delay *= 1.0 + self._jitter.uniform(-0.2, 0.2)
                self._sleep(delay)
            try:
                with self._sem:
                    resp = self._session.post(
                        url, json=payload, headers=self._headers(), timeout=self.timeout
                    )
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code in (401, 403):
                raise AuthenticationError(f"{resp.status_code}: {resp.text}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_exc = BackendError(f"{resp.status_code}: {resp.text}")
                continue
            if resp.status_code >= 400:
                raise BackendError(f"{resp.status_code}: {resp.text}")
            return resp.json()
        raise TransportError(f"request to {url} failed after {attempts} attempts: {last_exc}")

    def complete(self, req: ChatRequest) -> CompletionResult:
        payload = {
            "model": req.model_name or self.chat_model,
            "messages": [_to_openai_message(m) for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        data = self._post("/chat/completions", payload)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion payload: {data!r}") from exc
        usage = data.get("usage") or {}
        return CompletionResult(
            text=text,
            usage=TokenUsage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            ),
            truncated=choice.get("finish_reason") == "length",
        )

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            raise BackendError("embed requires at least one text")
        for t in texts:
            if not t.strip():
                raise BackendError("empty text")
        data = self._post("/embeddings", {"model": self.embed_model, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            vectors = [EmbeddingVector(tuple(float(v) for v in r["embedding"])) for r in rows]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed embeddings payload: {data!r}") from exc
        if len(vectors) != len(texts):
            raise BackendError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        dims = {v.dimension for v in vectors}
        if len(dims) > 1:
            raise BackendError(f"inconsistent embedding dimensions: {sorted(dims)}")
        return vectors
