"""Prompt assembly and the four claim-extraction methods.

Request layouts (text segments in order, images where marked):

* ``text_only``       extraction template (text only), no images
* ``image_text``      image-text template, post images
* ``image_text_icl``  demonstrations, image-text template, post images
* ``mice``            demonstrations, image-text template, post images,
                      vision block, context block

Each demonstration is ``Text: <post text>``, its images, then its gold
claim as ``{"claims": [...]}`` followed by a ``---`` rule.
"""
from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from . import templates
from .context import breakdown, render_context_block
from .dataset import Dataset, PostClaimPair
from .gateway import Backend, ChatRequest, GatewayError, ImageAccessError, ImagePart, TextPart, load_image
from .parsing import ParseError, loads_reply
from .retrieval import Bm25Index, ShotSet, index_pairs, select_shots
from .vision import VisionClient, analyze_post_images, render_visual_block

log = logging.getLogger(__name__)

DEFAULT_SHOTS = 5
DEFAULT_IMAGE_BUDGET = 30
DEMO_HEADER = "# EXAMPLES"
DEMO_RULE = "---"


class Method(str, enum.Enum):
    TEXT_ONLY = "text_only"
    IMAGE_TEXT = "image_text"
    IMAGE_TEXT_ICL = "image_text_icl"
    MICE = "mice"

    @property
    def uses_images(self) -> bool:
        return self is not Method.TEXT_ONLY

    @property
    def uses_shots(self) -> bool:
        return self in (Method.IMAGE_TEXT_ICL, Method.MICE)

    @property
    def label(self) -> str:
        return {
            Method.TEXT_ONLY: "MLLM (text input only)",
            Method.IMAGE_TEXT: "MLLM",
            Method.IMAGE_TEXT_ICL: "MLLM with ICL",
            Method.MICE: "MICE",
        }[self]


class ConfigurationError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, pair_id: str, cause: Exception):
        super().__init__(f"{pair_id}: {stage} stage failed: {cause}")
        self.stage = stage
        self.pair_id = pair_id
        self.cause = cause


@dataclass(frozen=True)
class ExtractionConfig:
    model_id: str
    shots: int = DEFAULT_SHOTS
    image_budget: Optional[int] = DEFAULT_IMAGE_BUDGET
    max_output: Optional[int] = None
    workers: int = 4

    def __post_init__(self):
        if not self.model_id:
            raise ConfigurationError("model_id must be non-empty")
        if self.shots < 0:
            raise ConfigurationError("shots must be >= 0")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")


@dataclass(frozen=True)
class ExtractedClaims:
    pair_id: str
    method: Method
    model_id: str
    claims: tuple[str, ...]
    raw_response: str
    shot_ids: tuple[str, ...] = ()
    artifacts: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "claims", tuple(self.claims))
        object.__setattr__(self, "shot_ids", tuple(self.shot_ids))
        if not self.claims:
            raise ValueError("at least one claim is required")
        if self.pair_id in self.shot_ids:
            raise ValueError("a pair cannot be its own demonstration")

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "method": self.method.value,
            "model_id": self.model_id,
            "claims": list(self.claims),
            "raw_response": self.raw_response,
            "shot_ids": list(self.shot_ids),
            "artifacts": self.artifacts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractedClaims":
        return cls(d["pair_id"], Method(d["method"]), d["model_id"], tuple(d["claims"]), d["raw_response"],
                   tuple(d.get("shot_ids", ())), d.get("artifacts"))


def parse_claims(raw: str) -> list[str]:
    """Accept ``{"claims": [...]}`` or a bare list of non-empty strings."""
    value = loads_reply(raw)
    if isinstance(value, dict):
        if "claims" not in value:
            raise ParseError("reply has no 'claims' key", raw)
        value = value["claims"]
    if not isinstance(value, list):
        raise ParseError("claims must be a list", raw)
    if not all(isinstance(c, str) for c in value):
        raise ParseError("every claim must be a string", raw)
    claims = [c.strip() for c in value if c.strip()]
    if not claims:
        raise ParseError("reply contains no claims", raw)
    return claims


def render_demonstrations(shots: ShotSet, shot_images: Mapping[str, Sequence[ImagePart]]) -> list:
    segments: list = [TextPart(DEMO_HEADER)]
    for shot in shots.shots:
        segments.append(TextPart(f"Text: {shot.post_text}"))
        segments.extend(shot_images.get(shot.pair_id, ()))
        segments.append(TextPart(json.dumps({"claims": [shot.gold_claim]}, ensure_ascii=False) + "\n" + DEMO_RULE))
    return segments


def build_prompt(method: Method, pair: PostClaimPair, model_id: str, images: Sequence[ImagePart] = (),
                 shots: Optional[ShotSet] = None, shot_images: Optional[Mapping[str, Sequence[ImagePart]]] = None,
                 visual_block: Optional[str] = None, context_block: Optional[str] = None,
                 max_output: Optional[int] = None) -> ChatRequest:
    method = Method(method)
    if method is Method.TEXT_ONLY:
        body = templates.render(templates.EXTRACT_TEXT_ONLY, post_text=pair.post_text)
        return ChatRequest(model_id, (TextPart(body),), max_output=max_output)

    if method.uses_shots and shots is None:
        raise ConfigurationError(f"{method.value} needs a demonstration set")
    if method is Method.MICE and (visual_block is None or context_block is None):
        raise ConfigurationError("mice needs both the visual block and the context block")

    segments: list = []
    if method.uses_shots and shots.shots:
        segments.extend(render_demonstrations(shots, shot_images or {}))
    segments.append(TextPart(templates.render(templates.EXTRACT_IMAGE_TEXT, post_text=pair.post_text)))
    segments.extend(images)
    if method is Method.MICE:
        segments.append(TextPart(visual_block))
        segments.append(TextPart(context_block))
    return ChatRequest(model_id, tuple(segments), max_output=max_output)


def load_images(refs: Sequence[str], base_dir=None, loader: Callable = load_image) -> list:
    """Load each ref; unreadable ones are returned as their exception."""
    out = []
    for ref in refs:
        try:
            out.append(loader(ref, base_dir))
        except ImageAccessError as exc:
            out.append(exc)
    return out


@dataclass
class Pipeline:
    """Everything the four methods might need, bound once per run."""

    config: ExtractionConfig
    backend: Backend
    vision: Optional[VisionClient] = None
    index: Optional[Bm25Index] = None
    pool: Mapping[str, PostClaimPair] = field(default_factory=dict)
    base_dir: Optional[Path] = None
    pool_base_dir: Optional[Path] = None

    def extract(self, pair: PostClaimPair, method: Method) -> ExtractedClaims:
        method = Method(method)
        cfg = self.config
        if method.uses_shots and self.index is None:
            raise ConfigurationError(f"{method.value} needs a BM25 index over the demonstration pool")
        if method is Method.MICE and self.vision is None:
            raise ConfigurationError("mice needs a vision client")
        images: list[ImagePart] = []
        loaded: list = []
        warnings: list[str] = []
        if method.uses_images:
            loaded = load_images(pair.image_refs, self.base_dir)
            images = [im for im in loaded if isinstance(im, ImagePart)]
            warnings += [f"image {i} unreadable: {im}" for i, im in enumerate(loaded) if not isinstance(im, ImagePart)]
            if not images:
                raise StageError("images", pair.id, ImageAccessError(f"{pair.id}: no readable images"))

        shots, shot_images = None, {}
        if method.uses_shots:
            shots = select_shots(self.index, pair, self.pool, cfg.shots, cfg.image_budget)
            for shot in shots.shots:
                demo = load_images(shot.image_refs, self.pool_base_dir or self.base_dir)
                shot_images[shot.pair_id] = [im for im in demo if isinstance(im, ImagePart)]
                if len(shot_images[shot.pair_id]) < len(demo):
                    warnings.append(f"demonstration {shot.pair_id} has unreadable images")

        visual_block = context_block = None
        artifacts = None
        if method is Method.MICE:
            try:
                vis = analyze_post_images(pair, self.vision, self.base_dir, images=loaded)
            except (GatewayError, ValueError) as exc:
                raise StageError("vision", pair.id, exc) from exc
            warnings += vis.warnings
            visual_block = render_visual_block(vis.semantics)
            try:
                ctx = breakdown(pair, images, self.backend, cfg.model_id)
            except (GatewayError, ParseError) as exc:
                raise StageError("context", pair.id, exc) from exc
            context_block = render_context_block(ctx.breakdown)
            artifacts = {
                "visual_block": visual_block,
                "context_block": context_block,
                "context_raw": ctx.raw_response,
            }
        if warnings:
            artifacts = dict(artifacts or {}, warnings=warnings)

        request = build_prompt(method, pair, cfg.model_id, images, shots, shot_images, visual_block, context_block, cfg.max_output)
        try:
            response = self.backend.complete(request)
        except GatewayError as exc:
            raise StageError("extraction", pair.id, exc) from exc
        claims = parse_claims(response.text)
        return ExtractedClaims(pair.id, method, cfg.model_id, tuple(claims), response.text,
                               tuple(shots.ids) if shots else (), artifacts)


def extract(pair: PostClaimPair, method: Method, config: ExtractionConfig, backend: Backend,
            vision: Optional[VisionClient] = None, index: Optional[Bm25Index] = None,
            pool: Optional[Mapping[str, PostClaimPair]] = None, base_dir=None) -> ExtractedClaims:
    return Pipeline(config, backend, vision, index, pool or {}, base_dir).extract(pair, method)


@dataclass
class Failure:
    pair_id: str
    stage: str
    error: str

    def to_dict(self) -> dict:
        return {"pair_id": self.pair_id, "stage": self.stage, "error": self.error}


@dataclass
class BatchResult:
    results: list = field(default_factory=list)
    failures: list[Failure] = field(default_factory=list)


def _failure(pair_id: str, exc: Exception, default_stage: str) -> Failure:
    stage = getattr(exc, "stage", default_stage)
    cause = getattr(exc, "cause", exc)
    return Failure(pair_id, stage, f"{type(cause).__name__}: {cause}")


def map_items(fn: Callable, items: Sequence, workers: int, stage: str, key: Callable = lambda p: p.id) -> BatchResult:
    """Run ``fn`` over items on a bounded pool; results keep input order.

    Per-item failures are recorded against ``key(item)`` instead of raised.
    """

    def guarded(item):
        try:
            return fn(item), None
        except (GatewayError, ValueError, RuntimeError) as exc:
            log.warning("%s failed for %s: %s", stage, key(item), exc)
            return None, _failure(key(item), exc, stage)

    if workers <= 1:
        outcomes = [guarded(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(guarded, items))
    batch = BatchResult()
    for result, failure in outcomes:
        if failure is None:
            batch.results.append(result)
        else:
            batch.failures.append(failure)
    return batch


def run_batch(dataset: Iterable[PostClaimPair], method: Method, pipeline: Pipeline) -> BatchResult:
    return map_items(lambda p: pipeline.extract(p, method), list(dataset), pipeline.config.workers, "extraction")


def build_pipeline(dataset: Dataset, config: ExtractionConfig, backend: Backend, vision: Optional[VisionClient] = None,
                   pool: Optional[Dataset] = None) -> Pipeline:
    """Bind a pipeline whose demonstrations come from the train split of ``pool`` (default: ``dataset``)."""
    pool = pool if pool is not None else dataset
    train = [p for p in pool.pairs if p.split == "train"]
    index = index_pairs(train) if train else None
    return Pipeline(config, backend, vision, index, {p.id: p for p in train}, dataset.base_dir, pool.base_dir)


def write_jsonl(records: Iterable, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict() if hasattr(r, "to_dict") else r, ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_extractions(path) -> list[ExtractedClaims]:
    return [ExtractedClaims.from_dict(d) for d in read_jsonl(path)]
