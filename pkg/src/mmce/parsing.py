"""Tolerant parsing of model replies.

Models routinely wrap JSON in markdown fences or surround it with prose.
``loads_reply`` tries a strict parse first, then exactly one repair pass:
take the body of the first code fence (if any) and decode the first JSON
value found in it, ignoring whatever text precedes or follows.
"""
from __future__ import annotations

import json
import re

_FENCE = re.compile(r"```[a-zA-Z0-9_-]*[ \t]*\n?(.*?)(?:```|\Z)", re.S)
_DECODER = json.JSONDecoder()


class ParseError(ValueError):
    """A model reply could not be turned into the expected structure."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


def _repair(text: str, openers: str = "{["):
    match = _FENCE.search(text)
    body = match.group(1) if match else text
    for i, ch in enumerate(body):
        if ch not in openers:
            continue
        try:
            value, _ = _DECODER.raw_decode(body, i)
        except json.JSONDecodeError:
            continue
        return value
    raise ParseError("no JSON value found in reply", text)


def loads_reply(text: str):
    """Decode a JSON value from a model reply, repairing once if needed."""
    if not isinstance(text, str):
        raise ParseError(f"reply is not text: {type(text).__name__}")
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    return _repair(text)


def loads_object(text: str) -> dict:
    value = loads_reply(text)
    if not isinstance(value, dict):
        # a strict parse may have produced a list/scalar while an object sits in prose
        value = _repair(text, "{")
        if not isinstance(value, dict):
            raise ParseError("expected a JSON object", text)
    return value
