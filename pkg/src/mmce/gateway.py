"""Chat-completion gateway with a content-addressed response cache.

Every request is reduced to a canonical JSON form (image bytes hashed, not
inlined) and keyed by its SHA-256.  The same on-disk store serves as the
live-mode cache and as the replay-mode fixture set, so a live run leaves
behind everything needed to replay it offline.

Store layout: ``<root>/<hex digest>.json`` holding
``{"key": ..., "request": <canonical request>, "response": <raw text>}``.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import os
import random
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import httpx

log = logging.getLogger(__name__)

MODES = ("live", "replay")


class GatewayError(RuntimeError):
    pass


class TransientError(GatewayError):
    """Transport or 5xx-class failure; worth retrying."""


class ProviderError(GatewayError):
    """The provider rejected the request; retrying will not help."""


class RetryExhaustedError(GatewayError):
    pass


class MissingFixtureError(GatewayError):
    def __init__(self, key: str):
        super().__init__(f"no fixture for cache key {key}")
        self.key = key


class ImageAccessError(GatewayError):
    pass


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    data: bytes = field(repr=False)
    media_type: str = "image/jpeg"

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.data).hexdigest()

    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode('ascii')}"


Segment = Union[TextPart, ImagePart]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[Segment, ...]
    temperature: float = 0.0
    max_output: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if self.temperature != 0.0:
            raise ValueError("temperature is fixed at 0.0")
        if not any(isinstance(m, TextPart) for m in self.messages):
            raise ValueError("a request needs at least one text segment")

    @property
    def text(self) -> str:
        return "\n\n".join(m.text for m in self.messages if isinstance(m, TextPart))

    @property
    def images(self) -> tuple[ImagePart, ...]:
        return tuple(m for m in self.messages if isinstance(m, ImagePart))

    def canonical(self) -> dict:
        segments = []
        for m in self.messages:
            if isinstance(m, TextPart):
                segments.append({"type": "text", "text": m.text})
            else:
                segments.append({"type": "image", "media_type": m.media_type, "sha256": m.sha256})
        return {
            "model_id": self.model_id,
            "messages": segments,
            "temperature": self.temperature,
            "max_output": self.max_output,
        }

    def cache_key(self) -> str:
        return digest(self.canonical())


@dataclass(frozen=True)
class ChatResponse:
    text: str
    model_id: str
    latency: float
    cached: bool
    key: str


class FixtureStore:
    """Directory of JSON files named by cache key."""

    def __init__(self, root):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> Optional[dict]:
        try:
            with self.path(key).open(encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None

    def put(self, key: str, request: dict, response: str) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        payload = json.dumps({"key": key, "request": request, "response": response}, indent=1, sort_keys=True, ensure_ascii=False)
        with self._lock(key):
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, self.path(key))

    def __contains__(self, key: str) -> bool:
        return self.path(key).exists()

    def keys(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(p.stem for p in self.root.glob("*.json"))

    def digest(self) -> str:
        h = hashlib.sha256()
        for key in self.keys():
            h.update(key.encode())
            h.update(self.get(key)["response"].encode("utf-8"))
        return h.hexdigest()


Transport = Callable[[ChatRequest], str]


class OpenRouterTransport:
    """OpenAI-compatible chat-completions endpoint (OpenRouter by default).

    Images travel inline as base64 ``data:`` URLs in ``image_url`` parts.
    """

    def __init__(self, base_url: str = "https://openrouter.ai/api/v1", api_key: str = "", timeout: float = 120.0, client: Optional[httpx.Client] = None):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key = api_key
        self.client = client or httpx.Client(timeout=timeout)

    @staticmethod
    def payload(request: ChatRequest) -> dict:
        content = []
        for m in request.messages:
            if isinstance(m, TextPart):
                content.append({"type": "text", "text": m.text})
            else:
                content.append({"type": "image_url", "image_url": {"url": m.data_url()}})
        body = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.temperature,
        }
        if request.max_output is not None:
            body["max_tokens"] = request.max_output
        return body

    def __call__(self, request: ChatRequest) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"}
        try:
            resp = self.client.post(self.url, json=self.payload(request), headers=headers)
        except httpx.TransportError as exc:
            raise TransientError(f"transport failure: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            body = resp.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            # OpenRouter reports upstream failures inside a 200 body
            raise TransientError(f"malformed provider body: {resp.text[:200]}") from exc
        if content is None:
            raise TransientError("provider returned no content")
        return content


def with_retry(fn: Callable[[], str], max_attempts: int = 3, backoff: float = 1.0, sleep=time.sleep) -> str:
    """Call ``fn`` retrying only on ``TransientError``.

    Jitter is the only randomness in the package and never touches outputs.
    """
    for attempt in range(1, max_attempts + 1):
        try:
            return fn()
        except TransientError as exc:
            if attempt == max_attempts:
                raise RetryExhaustedError(f"gave up after {max_attempts} attempts: {exc}") from exc
            delay = backoff * 2 ** (attempt - 1) + random.uniform(0, backoff)
            log.warning("attempt %d failed (%s); retrying in %.1fs", attempt, exc, delay)
            sleep(delay)
    raise AssertionError("unreachable")


class Backend:
    """Cache-first completion backend.

    ``live`` consults the store and falls through to the transport on a miss,
    persisting the reply; ``replay`` never touches the network.
    """

    def __init__(self, store: Union[FixtureStore, str, os.PathLike], mode: str = "replay", transport: Optional[Transport] = None,
                 max_attempts: int = 3, backoff: float = 1.0, sleep=time.sleep):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "live" and transport is None:
            raise ValueError("live mode needs a transport")
        self.store = store if isinstance(store, FixtureStore) else FixtureStore(store)
        self.mode = mode
        self.transport = transport
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = request.cache_key()
        start = time.perf_counter()
        hit = self.store.get(key)
        if hit is not None:
            return ChatResponse(hit["response"], request.model_id, time.perf_counter() - start, True, key)
        if self.mode == "replay":
            raise MissingFixtureError(key)
        text = with_retry(lambda: self.transport(request), self.max_attempts, self.backoff, self.sleep)
        self.store.put(key, request.canonical(), text)
        return ChatResponse(text, request.model_id, time.perf_counter() - start, False, key)


def complete(request: ChatRequest, backend: Backend) -> ChatResponse:
    return backend.complete(request)


def record_fixtures(requests: Iterable[ChatRequest], backend: Backend, out) -> int:
    """Persist replies for ``requests`` into the store at ``out``.

    Errors propagate; whatever was recorded before the failure stays valid.
    """
    if backend.transport is None:
        raise ValueError("recording needs a backend with a live transport")
    recorder = Backend(out, mode="live", transport=backend.transport, max_attempts=backend.max_attempts,
                       backoff=backend.backoff, sleep=backend.sleep)
    keys = set()
    for request in requests:
        recorder.complete(request)
        keys.add(request.cache_key())
    return len(keys)


_MAGIC = (
    (b"\x89PNG\r\n\x1a\n", "image/png"),
    (b"\xff\xd8\xff", "image/jpeg"),
    (b"GIF87a", "image/gif"),
    (b"GIF89a", "image/gif"),
    (b"RIFF", "image/webp"),
)


def sniff_media_type(data: bytes, name: str = "") -> str:
    for magic, media_type in _MAGIC:
        if data.startswith(magic):
            return media_type
    guessed, _ = mimetypes.guess_type(name)
    return guessed or "application/octet-stream"


def is_url(ref: str) -> bool:
    return ref.startswith(("http://", "https://"))


def load_image(ref: str, base_dir=None, client: Optional[httpx.Client] = None) -> ImagePart:
    """Read a local image (relative to ``base_dir``) or fetch a URL."""
    if is_url(ref):
        try:
            resp = (client or httpx).get(ref, follow_redirects=True, timeout=60.0)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise ImageAccessError(f"cannot fetch {ref}: {exc}") from exc
        data = resp.content
        media_type = resp.headers.get("content-type", "").split(";")[0] or sniff_media_type(data, ref)
        if not media_type.startswith("image/"):
            media_type = sniff_media_type(data, ref)
        return ImagePart(data, media_type)
    path = Path(ref)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageAccessError(f"cannot read {ref}: {exc.strerror or exc}") from exc
    return ImagePart(data, sniff_media_type(data, path.name))
