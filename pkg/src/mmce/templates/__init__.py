"""Prompt templates shipped verbatim, with a SHA-256 manifest.

Placeholders are the literal angle-bracket slots that appear in the
templates (``<generated claim>``, ``<social media post text>``, ...).
"""
from __future__ import annotations

import hashlib
import re
from functools import lru_cache
from importlib import resources

REFERENCE = "reference"
ENTAILMENT = "entailment"
DECONTEXTUALIZATION = "decontextualization"
EXTRACT_TEXT_ONLY = "extract_text_only"
EXTRACT_IMAGE_TEXT = "extract_image_text"
CONTEXTUAL_BREAKDOWN = "contextual_breakdown"

NAMES = (
    REFERENCE,
    ENTAILMENT,
    DECONTEXTUALIZATION,
    EXTRACT_TEXT_ONLY,
    EXTRACT_IMAGE_TEXT,
    CONTEXTUAL_BREAKDOWN,
)

GENERATED_CLAIM = "<generated claim>"
REFERENCE_CLAIM = "<reference claim>"
POST_TEXT = "<social media post text>"
POST_IMAGES = "<social media post image(s)>"


@lru_cache(maxsize=None)
def load(name: str) -> str:
    if name not in NAMES:
        raise KeyError(f"unknown template {name!r}")
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def manifest() -> dict[str, str]:
    text = resources.files(__package__).joinpath("MANIFEST.sha256").read_text(encoding="utf-8")
    out = {}
    for line in text.splitlines():
        digest, fname = line.split()
        out[fname.removesuffix(".txt")] = digest
    return out


def checksums() -> dict[str, str]:
    return {name: hashlib.sha256(load(name).encode("utf-8")).hexdigest() for name in NAMES}


def verify() -> list[str]:
    """Names of templates whose content no longer matches the manifest."""
    expected = manifest()
    return [name for name, digest in checksums().items() if expected.get(name) != digest]


def render(name: str, **slots: str) -> str:
    """Fill placeholder slots in a single pass (slot values are never re-scanned)."""
    mapping = {
        GENERATED_CLAIM: slots.pop("generated_claim", None),
        REFERENCE_CLAIM: slots.pop("reference_claim", None),
        POST_TEXT: slots.pop("post_text", None),
        POST_IMAGES: slots.pop("post_images", None),
    }
    if slots:
        raise TypeError(f"unknown template slots: {sorted(slots)}")
    mapping = {k: v for k, v in mapping.items() if v is not None}
    template = load(name)
    if not mapping:
        return template
    pattern = re.compile("|".join(re.escape(k) for k in mapping))
    return pattern.sub(lambda m: mapping[m.group(0)], template)
