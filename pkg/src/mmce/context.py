"""Stage 2 of MICE: intent, tone, context and visual context of a post."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import templates
from .dataset import PostClaimPair
from .gateway import Backend, ChatRequest, ImagePart, TextPart
from .parsing import ParseError, loads_object

FIELDS = ("intent", "tone", "context", "visual_context")


@dataclass(frozen=True)
class ContextualBreakdown:
    intent: str
    tone: str
    context: str
    visual_context: str

    def __post_init__(self):
        for name in FIELDS:
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise ValueError(f"{name} must be a non-empty string")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in FIELDS}


@dataclass(frozen=True)
class BreakdownResult:
    breakdown: ContextualBreakdown
    raw_response: str


def _as_text(value) -> str:
    # models sometimes answer a field with a list of phrases
    if isinstance(value, list):
        return "; ".join(str(v) for v in value)
    return value if isinstance(value, str) else ""


def parse_breakdown(raw: str) -> ContextualBreakdown:
    obj = loads_object(raw)
    missing = [name for name in FIELDS if not _as_text(obj.get(name)).strip()]
    if missing:
        raise ParseError(f"contextual breakdown missing {missing}", raw)
    return ContextualBreakdown(**{name: _as_text(obj[name]).strip() for name in FIELDS})


def build_request(pair: PostClaimPair, images: Sequence[ImagePart], model_id: str) -> ChatRequest:
    # the template has no slot for the post, so it goes after the template body
    prompt = templates.load(templates.CONTEXTUAL_BREAKDOWN) + "\n# INPUT\nText: " + pair.post_text
    return ChatRequest(model_id, (TextPart(prompt), *images))


def breakdown(pair: PostClaimPair, images: Sequence[ImagePart], backend: Backend, model_id: str) -> BreakdownResult:
    response = backend.complete(build_request(pair, images, model_id))
    return BreakdownResult(parse_breakdown(response.text), response.text)


def render_context_block(b: ContextualBreakdown) -> str:
    return "\n".join([
        "# CONTEXTUAL ANALYSIS OUTPUT",
        f"INTENT: {b.intent}",
        f"TONE: {b.tone}",
        f"CONTEXT: {b.context}",
        f"VISUAL_CONTEXT: {b.visual_context}",
    ])
