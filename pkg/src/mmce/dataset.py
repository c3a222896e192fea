"""Loading, validating and slicing MMCE post-claim pairs.

One pair per line, UTF-8 JSONL::

    {"id": str, "post_text": str, "original_language": str, "platform": str,
     "source_url": str, "image_refs": [str, ...], "gold_claim": str,
     "split": "train"|"dev", "intent_critical": bool, "post_date": "YYYY-MM-DD"|null}

``original_language`` may name several languages separated by commas
(posts mixing languages count under each one in :func:`summarize`).
Images are never opened here; a missing image file only surfaces when a
pipeline stage needs the bytes.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

SPLITS = ("train", "dev")

REQUIRED_FIELDS = (
    "id",
    "post_text",
    "original_language",
    "platform",
    "source_url",
    "image_refs",
    "gold_claim",
    "split",
    "intent_critical",
)


class DatasetError(ValueError):
    """A record violates the dataset schema."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class PostClaimPair:
    id: str
    post_text: str
    original_language: str
    platform: str
    source_url: str
    image_refs: tuple[str, ...]
    gold_claim: str
    split: str
    intent_critical: bool = False
    post_date: Optional[dt.date] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("id must be non-empty")
        if not self.post_text.strip():
            raise ValueError("post_text must be non-empty")
        if not self.gold_claim.strip():
            raise ValueError("gold_claim must be non-empty")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if len(self.image_refs) < 1:
            raise ValueError("image_refs must contain at least one image")
        object.__setattr__(self, "image_refs", tuple(self.image_refs))

    @property
    def languages(self) -> list[str]:
        return [s.strip() for s in self.original_language.split(",") if s.strip()]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "post_text": self.post_text,
            "original_language": self.original_language,
            "platform": self.platform,
            "source_url": self.source_url,
            "image_refs": list(self.image_refs),
            "gold_claim": self.gold_claim,
            "split": self.split,
            "intent_critical": self.intent_critical,
            "post_date": self.post_date.isoformat() if self.post_date else None,
        }

    @classmethod
    def from_dict(cls, record: dict, line: Optional[int] = None) -> "PostClaimPair":
        if not isinstance(record, dict):
            raise DatasetError("record is not a JSON object", line)
        for name in REQUIRED_FIELDS:
            if name not in record:
                raise DatasetError(f"missing required field {name!r}", line)
        for name in ("id", "post_text", "original_language", "platform", "source_url", "gold_claim", "split"):
            if not isinstance(record[name], str):
                raise DatasetError(f"field {name!r} must be a string", line)
        refs = record["image_refs"]
        if not isinstance(refs, list) or not all(isinstance(r, str) and r for r in refs):
            raise DatasetError("field 'image_refs' must be a list of non-empty strings", line)
        if not isinstance(record["intent_critical"], bool):
            raise DatasetError("field 'intent_critical' must be a boolean", line)
        raw_date = record.get("post_date")
        post_date = None
        if raw_date is not None:
            try:
                post_date = dt.date.fromisoformat(raw_date)
            except (TypeError, ValueError):
                raise DatasetError(f"field 'post_date' is not a YYYY-MM-DD date: {raw_date!r}", line) from None
        try:
            return cls(
                id=record["id"],
                post_text=record["post_text"],
                original_language=record["original_language"],
                platform=record["platform"],
                source_url=record["source_url"],
                image_refs=tuple(refs),
                gold_claim=record["gold_claim"],
                split=record["split"],
                intent_critical=record["intent_critical"],
                post_date=post_date,
            )
        except ValueError as exc:
            raise DatasetError(str(exc), line) from None


@dataclass(frozen=True)
class Dataset:
    pairs: tuple[PostClaimPair, ...] = ()
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        seen = set()
        for pair in self.pairs:
            if pair.id in seen:
                raise DatasetError(f"duplicate id {pair.id!r}")
            seen.add(pair.id)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def counts(self) -> dict[str, int]:
        split = Counter(p.split for p in self.pairs)
        return {
            "total": len(self.pairs),
            "train": split.get("train", 0),
            "dev": split.get("dev", 0),
            "intent_critical": sum(p.intent_critical for p in self.pairs),
        }

    def by_id(self) -> dict[str, PostClaimPair]:
        return {p.id: p for p in self.pairs}

    def replace(self, pairs: Iterable[PostClaimPair]) -> "Dataset":
        return dataclasses.replace(self, pairs=tuple(pairs))


def load_dataset(path) -> Dataset:
    path = Path(path)
    pairs = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON ({exc.msg})", lineno) from None
            pair = PostClaimPair.from_dict(record, lineno)
            if pair.id in seen:
                raise DatasetError(f"duplicate id {pair.id!r} (first seen on line {seen[pair.id]})", lineno)
            seen[pair.id] = lineno
            pairs.append(pair)
    return Dataset(tuple(pairs), base_dir=path.parent)


def dump_dataset(dataset: Dataset, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pair in dataset.pairs:
            fh.write(json.dumps(pair.to_dict(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class PairFilter:
    """Conjunction of optional criteria; ``None`` means "don't care".

    ``date_range`` is inclusive on both ends and drops pairs without a date.
    """

    split: Optional[str] = None
    platform: Optional[str] = None
    intent_critical: Optional[bool] = None
    date_range: Optional[tuple[dt.date, dt.date]] = None

    def __call__(self, pair: PostClaimPair) -> bool:
        if self.split is not None and pair.split != self.split:
            return False
        if self.platform is not None and pair.platform != self.platform:
            return False
        if self.intent_critical is not None and pair.intent_critical != self.intent_critical:
            return False
        if self.date_range is not None:
            start, end = self.date_range
            if pair.post_date is None or not (start <= pair.post_date <= end):
                return False
        return True


def filter_dataset(dataset: Dataset, predicate: Optional[PairFilter] = None, **criteria) -> Dataset:
    if predicate is None:
        predicate = PairFilter(**criteria)
    elif criteria:
        raise TypeError("pass either a PairFilter or keyword criteria, not both")
    return dataset.replace(p for p in dataset.pairs if predicate(p))


def summarize(dataset: Dataset) -> dict[str, Counter]:
    """Tallies by platform, language and split, most common first."""
    platform = Counter(p.platform for p in dataset.pairs)
    language = Counter(lang for p in dataset.pairs for lang in p.languages)
    split = Counter(p.split for p in dataset.pairs)
    return {
        "platform": Counter(dict(platform.most_common())),
        "language": Counter(dict(language.most_common())),
        "split": Counter(dict(split.most_common())),
    }


def format_summary(dataset: Dataset) -> str:
    tallies = summarize(dataset)
    counts = dataset.counts
    lines = [
        f"pairs: {counts['total']}",
        f"train: {counts['train']}",
        f"dev: {counts['dev']}",
        f"intent_critical: {counts['intent_critical']}",
    ]
    for name in ("platform", "language"):
        lines.append(f"{name}:")
        lines.extend(f"  {key}: {n}" for key, n in tallies[name].items())
    return "\n".join(lines)
