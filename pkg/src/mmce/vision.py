"""Stage 1 of MICE: dense captions, OCR text and tags for each post image.

The live client speaks the Azure AI Vision Image Analysis 4.0 REST API.
Responses are cached in a :class:`~mmce.gateway.FixtureStore` under a key
derived from the image bytes and requested features, so replay works
exactly like the chat gateway.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import httpx

from .dataset import PostClaimPair
from .gateway import (
    FixtureStore,
    GatewayError,
    ImageAccessError,
    ImagePart,
    MissingFixtureError,
    ProviderError,
    TransientError,
    digest,
    load_image,
    with_retry,
)

log = logging.getLogger(__name__)

FEATURES = ("denseCaptions", "read", "tags")
API_VERSION = "2024-02-01"


class VisionServiceError(GatewayError):
    pass


@dataclass(frozen=True)
class Caption:
    text: str
    confidence: Optional[float] = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("caption text must be non-empty")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class VisualSemantics:
    dense_captions: tuple[Caption, ...] = ()
    ocr_text: str = ""
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "dense_captions", tuple(self.dense_captions))
        seen, tags = set(), []
        for tag in self.tags:
            tag = tag.strip()
            if not tag:
                raise ValueError("tags must be non-empty strings")
            if tag not in seen:
                seen.add(tag)
                tags.append(tag)
        object.__setattr__(self, "tags", tuple(tags))

    def to_dict(self) -> dict:
        return {
            "dense_captions": [
                {"text": c.text} if c.confidence is None else {"text": c.text, "confidence": c.confidence}
                for c in self.dense_captions
            ],
            "ocr_text": self.ocr_text,
            "tags": list(self.tags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VisualSemantics":
        return cls(
            dense_captions=tuple(Caption(c["text"], c.get("confidence")) for c in d.get("dense_captions", [])),
            ocr_text=d.get("ocr_text", ""),
            tags=tuple(d.get("tags", [])),
        )


def parse_analysis(body: dict) -> VisualSemantics:
    """Map an Image Analysis 4.0 response body onto :class:`VisualSemantics`."""
    captions = []
    for item in (body.get("denseCaptionsResult") or {}).get("values", []):
        text = (item.get("text") or "").strip()
        if text:
            captions.append(Caption(text, item.get("confidence")))
    lines = []
    for block in (body.get("readResult") or {}).get("blocks", []):
        for line in block.get("lines", []):
            if line.get("text"):
                lines.append(line["text"])
    tags = [t["name"] for t in (body.get("tagsResult") or {}).get("values", []) if (t.get("name") or "").strip()]
    return VisualSemantics(tuple(captions), "\n".join(lines), tuple(tags))


def vision_cache_key(image: ImagePart, features: Sequence[str] = FEATURES, api_version: str = API_VERSION) -> tuple[str, dict]:
    request = {
        "service": "image-analysis",
        "api_version": api_version,
        "features": list(features),
        "image_sha256": image.sha256,
    }
    return digest(request), request


class AzureVisionTransport:
    def __init__(self, endpoint: str, api_key: str, api_version: str = API_VERSION, features: Sequence[str] = FEATURES,
                 timeout: float = 60.0, client: Optional[httpx.Client] = None):
        self.url = endpoint.rstrip("/") + "/computervision/imageanalysis:analyze"
        self.api_key = api_key
        self.api_version = api_version
        self.features = tuple(features)
        self.client = client or httpx.Client(timeout=timeout)

    def __call__(self, image: ImagePart) -> str:
        params = {"api-version": self.api_version, "features": ",".join(self.features)}
        headers = {"Ocp-Apim-Subscription-Key": self.api_key, "Content-Type": "application/octet-stream"}
        try:
            resp = self.client.post(self.url, params=params, headers=headers, content=image.data)
        except httpx.TransportError as exc:
            raise TransientError(f"vision transport failure: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"vision HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"vision HTTP {resp.status_code}: {resp.text[:500]}")
        return resp.text


class VisionClient:
    """Cache-first image analysis; ``replay`` mode never calls the service."""

    def __init__(self, store, mode: str = "replay", transport=None, max_attempts: int = 3, backoff: float = 1.0, sleep=None):
        if mode == "live" and transport is None:
            raise ValueError("live mode needs a transport")
        self.store = store if isinstance(store, FixtureStore) else FixtureStore(store)
        self.mode = mode
        self.transport = transport
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep

    def analyze(self, image: ImagePart) -> VisualSemantics:
        features = getattr(self.transport, "features", FEATURES)
        api_version = getattr(self.transport, "api_version", API_VERSION)
        key, request = vision_cache_key(image, features, api_version)
        hit = self.store.get(key)
        if hit is not None:
            raw = hit["response"]
        elif self.mode == "replay":
            raise MissingFixtureError(key)
        else:
            kwargs = {"sleep": self.sleep} if self.sleep else {}
            try:
                raw = with_retry(lambda: self.transport(image), self.max_attempts, self.backoff, **kwargs)
            except GatewayError as exc:
                raise VisionServiceError(str(exc)) from exc
            self.store.put(key, request, raw)
        try:
            return parse_analysis(json.loads(raw))
        except (ValueError, TypeError, AttributeError, KeyError) as exc:
            raise VisionServiceError(f"unreadable vision response for {key}: {exc}") from exc


def analyze_image(image, client: VisionClient, base_dir=None) -> VisualSemantics:
    if not isinstance(image, ImagePart):
        image = load_image(image, base_dir)
    return client.analyze(image)


@dataclass
class PostVision:
    semantics: list[VisualSemantics] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def analyze_post_images(pair: PostClaimPair, client: VisionClient, base_dir=None, images: Optional[Sequence[ImagePart]] = None) -> PostVision:
    """Analyse every image of a post, in ``image_refs`` order.

    Individual failures become warnings; only a post where every image
    fails raises.  Pre-loaded ``images`` (aligned with ``image_refs``, holding
    the load exception for unreadable ones) skip re-reading.
    """
    out = PostVision()
    errors: list[Exception] = []
    for i, ref in enumerate(pair.image_refs):
        try:
            image = images[i] if images is not None else load_image(ref, base_dir)
            if isinstance(image, Exception):
                raise image
            out.semantics.append(client.analyze(image))
        except GatewayError as exc:
            errors.append(exc)
            out.warnings.append(f"{pair.id}: image {i} ({ref}) skipped: {exc}")
            log.warning(out.warnings[-1])
    if not out.semantics:
        if all(isinstance(e, ImageAccessError) for e in errors):
            raise ImageAccessError(f"{pair.id}: no readable images")
        raise errors[-1]
    return out


def render_visual_block(semantics: Sequence[VisualSemantics]) -> str:
    if not semantics:
        return ""
    parts = ["# VISION API OUTPUT"]
    for i, sem in enumerate(semantics, start=1):
        parts.append(f"## Image {i}")
        if sem.dense_captions:
            parts.append("Dense captions:")
            parts.extend(f"- {c.text}" for c in sem.dense_captions)
        if sem.ocr_text:
            parts.append("OCR text:")
            parts.append(sem.ocr_text)
        if sem.tags:
            parts.append("Tags: " + ", ".join(sem.tags))
    return "\n".join(parts)
