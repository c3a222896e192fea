"""Deterministic offline stand-ins for the chat provider and vision service.

They answer each prompt family with a reply derived only from the
request content, so they can seed a fixture store for replay runs and
tests without any network access.  Their outputs are plausible in shape
and nothing more.
"""
from __future__ import annotations

import hashlib
import json
import re
import struct
import zlib

from . import templates
from .gateway import ChatRequest, ImagePart, TextPart
from .retrieval import tokenize

_PRONOUNS = {"he", "she", "they", "it", "this", "that", "these", "those", "him", "her", "them"}
_TAGS = ("outdoor", "person", "text", "crowd", "building", "protest", "flooding", "screenshot", "vehicle", "sky")


def _slot(text: str, label: str) -> str:
    match = re.search(rf"^{re.escape(label)} (.*)$", text, re.M)
    return match.group(1).strip() if match else ""


def _overlap(a: str, b: str) -> float:
    ta, tb = set(tokenize(a)), set(tokenize(b))
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def _first_sentence(text: str) -> str:
    text = " ".join(text.split())
    parts = re.split(r"(?<=[.!?])\s+", text)
    return parts[0] if parts else text


class SimulatedModel:
    """Callable transport: ``ChatRequest -> reply text``."""

    def __init__(self, name: str = "simulated"):
        self.name = name
        self.calls = 0
        self._model = ""

    def _hash(self, *parts: str) -> int:
        h = hashlib.sha256("\x00".join((self.name, self._model) + parts).encode("utf-8")).digest()
        return int.from_bytes(h[:4], "big")

    def __call__(self, request: ChatRequest) -> str:
        self.calls += 1
        self._model = request.model_id
        text = request.text
        if "Provide a similarity score from 1 to 4" in text:
            gen, ref = _slot(text, "Generated Claim:"), _slot(text, "Reference Claim:")
            score = 1 + min(3, int(round(3 * _overlap(gen, ref) * 1.5)))
            return json.dumps({"score": score, "reasoning": f"token overlap {_overlap(gen, ref):.2f}"}, indent=4)
        if "fully faithful to and entailed by" in text:
            claim, post = _slot(text, "Generated Claim:"), _slot(text, "Text:")
            ctoks = tokenize(claim)
            share = sum(t in set(tokenize(post)) for t in ctoks) / max(1, len(ctoks))
            label = "entailed" if share >= 0.9 else "partially_entailed" if share >= 0.5 else "not_entailed"
            return f"**{label}**"
        if "understandable in isolation" in text:
            toks = tokenize(_slot(text, "Generated Claim:"))
            if not toks or toks[0] in _PRONOUNS:
                return "not_decontextualized"
            return "partially_decontextualized" if _PRONOUNS & set(toks) else "fully_decontextualized"
        if "provide contextual insights" in text:
            post = _slot(text, "Text:")
            tones = ("serious", "sarcastic", "outraged", "humorous")
            return "```json\n" + json.dumps({
                "intent": "inform" if self._hash(post) % 2 else "persuade",
                "tone": tones[self._hash(post, "tone") % len(tones)],
                "context": f"Relates to: {_first_sentence(post)[:80]}",
                "visual_context": f"{len(request.images)} image(s) accompanying the post",
            }, indent=4) + "\n```"
        if "Extract the claim(s) from the following text:" in text:
            template_part = next(m.text for m in request.messages
                                 if isinstance(m, TextPart) and "Extract the claim(s) from the following text:" in m.text)
            post = template_part.split("Extract the claim(s) from the following text:", 1)[1].strip()
            claims = [_first_sentence(post)]
            tags = re.search(r"^Tags: (.*)$", text, re.M)
            if tags:
                claims[0] = f"{claims[0].rstrip('.')} (image shows {tags.group(1).split(',')[0]})."
            if self._hash(post) % 3 == 0 and len(post.split(". ")) > 1:
                claims.append(" ".join(post.split(". ")[1:])[:160])
            return "```json\n" + json.dumps({"claims": claims}, indent=4) + "\n```"
        return "I cannot help with that."


class SimulatedVision:
    """Callable vision transport returning Image Analysis 4.0 shaped JSON."""

    features = ("denseCaptions", "read", "tags")
    api_version = "2024-02-01"

    def __call__(self, image: ImagePart) -> str:
        h = int(image.sha256[:8], 16)
        tags = [_TAGS[(h >> (3 * i)) % len(_TAGS)] for i in range(3)]
        body = {
            "denseCaptionsResult": {"values": [
                {"text": f"a photo featuring {tags[0]}", "confidence": 0.8},
                {"text": f"a close-up of {tags[1]}", "confidence": 0.6},
            ]},
            "readResult": {"blocks": [{"lines": [{"text": f"CODE {image.sha256[:6].upper()}"}]}] if h % 2 else []},
            "tagsResult": {"values": [{"name": t, "confidence": 0.9} for t in tags]},
        }
        return json.dumps(body, sort_keys=True)


def template_names_in(request: ChatRequest) -> list[str]:
    """Which shipped templates a request embeds (by their first mission line)."""
    found = []
    for name in templates.NAMES:
        first = templates.load(name).splitlines()[1]
        if first in request.text:
            found.append(name)
    return found


def tiny_png(rgb: tuple[int, int, int], size: int = 4) -> bytes:
    """A solid-colour RGB PNG, small enough to commit as a fixture."""
    def chunk(tag: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    row = b"\x00" + bytes(rgb) * size
    return (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(row * size, 9))
            + chunk(b"IEND", b""))
