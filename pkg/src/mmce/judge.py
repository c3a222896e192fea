"""LLM-as-judge scoring: reference alignment, entailment, decontextualization.

Only the reference prompt asks for JSON.  The entailment and
decontextualization prompts leave the reply format open, so label parsing
accepts a bare label, a JSON object carrying one, or the first label
mentioned in free text.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Optional, Sequence

from . import templates
from .dataset import PostClaimPair
from .extraction import BatchResult, ExtractedClaims, load_images, map_items
from .gateway import Backend, ChatRequest, GatewayError, ImagePart, TextPart
from .parsing import ParseError, loads_object, loads_reply

IMAGE_PLACEHOLDER = "(attached below)"
SCORE_RANGE = range(1, 5)


class Entailment(str, enum.Enum):
    ENTAILED = "entailed"
    PARTIALLY_ENTAILED = "partially_entailed"
    NOT_ENTAILED = "not_entailed"


class Decontext(str, enum.Enum):
    FULLY = "fully_decontextualized"
    PARTIALLY = "partially_decontextualized"
    NOT = "not_decontextualized"


# best first; used for strict/lenient counting and as an ordinal encoding
LABEL_ORDER = {
    Entailment: (Entailment.ENTAILED, Entailment.PARTIALLY_ENTAILED, Entailment.NOT_ENTAILED),
    Decontext: (Decontext.FULLY, Decontext.PARTIALLY, Decontext.NOT),
}


def label_rank(label) -> int:
    """3 for the top category, 1 for the bottom one."""
    order = LABEL_ORDER[type(label)]
    return len(order) - order.index(label)


class JudgeError(RuntimeError):
    def __init__(self, metric: str, cause: Exception):
        super().__init__(f"{metric} judge failed: {cause}")
        self.stage = f"judge:{metric}"
        self.metric = metric
        self.cause = cause


@dataclass(frozen=True)
class ReferenceScore:
    score: int
    reasoning: str = ""

    def __post_init__(self):
        if isinstance(self.score, bool) or self.score not in SCORE_RANGE:
            raise ValueError(f"reference score must be an integer in 1..4, got {self.score!r}")


def parse_reference(raw: str) -> ReferenceScore:
    obj = loads_object(raw)
    score = obj.get("score")
    if isinstance(score, str) and score.strip().isdigit():
        score = int(score.strip())
    if isinstance(score, float) and score.is_integer():
        score = int(score)
    if isinstance(score, bool) or not isinstance(score, int):
        raise ParseError(f"score is not an integer: {score!r}", raw)
    if score not in SCORE_RANGE:
        raise ParseError(f"score {score} outside 1..4", raw)
    reasoning = obj.get("reasoning", "")
    return ReferenceScore(score, reasoning if isinstance(reasoning, str) else str(reasoning))


def _normalize(text: str) -> str:
    text = text.strip().strip("`*\"'.:;!()[]{} \n\t").lower()
    return re.sub(r"[\s-]+", "_", text)


def _label_pattern(enum_cls) -> re.Pattern:
    values = sorted((m.value for m in enum_cls), key=len, reverse=True)
    alternation = "|".join(v.replace("_", r"[\s_-]+") for v in values)
    return re.compile(rf"(?<![a-z])({alternation})(?![a-z])")


_PATTERNS = {cls: _label_pattern(cls) for cls in (Entailment, Decontext)}
_LABEL_KEYS = ("label", "classification", "category", "result", "answer", "verdict")


def parse_label(raw: str, enum_cls):
    """Map a reply onto one member of ``enum_cls`` (case/punctuation-insensitive)."""
    if not isinstance(raw, str):
        raise ParseError(f"reply is not text: {type(raw).__name__}")
    by_value = {m.value: m for m in enum_cls}
    direct = _normalize(raw)
    if direct in by_value:
        return by_value[direct]
    try:
        obj = loads_reply(raw)
    except ParseError:
        obj = None
    if isinstance(obj, dict):
        candidates = [obj[k] for k in _LABEL_KEYS if k in obj] + list(obj.values())
        for value in candidates:
            if isinstance(value, str) and _normalize(value) in by_value:
                return by_value[_normalize(value)]
    elif isinstance(obj, str) and _normalize(obj) in by_value:
        return by_value[_normalize(obj)]
    match = _PATTERNS[enum_cls].search(raw.lower())
    if match:
        return by_value[_normalize(match.group(1))]
    raise ParseError(f"no {enum_cls.__name__.lower()} label in reply", raw)


def reference_request(generated: str, reference: str, model_id: str) -> ChatRequest:
    prompt = templates.render(templates.REFERENCE, generated_claim=generated, reference_claim=reference)
    return ChatRequest(model_id, (TextPart(prompt),))


def entailment_request(generated: str, pair: PostClaimPair, images: Sequence[ImagePart], model_id: str) -> ChatRequest:
    prompt = templates.render(templates.ENTAILMENT, generated_claim=generated, post_text=pair.post_text,
                              post_images=IMAGE_PLACEHOLDER)
    return ChatRequest(model_id, (TextPart(prompt), *images))


def decontext_request(generated: str, model_id: str) -> ChatRequest:
    prompt = templates.render(templates.DECONTEXTUALIZATION, generated_claim=generated)
    return ChatRequest(model_id, (TextPart(prompt),))


def _require(text: str, what: str):
    if not text or not text.strip():
        raise ValueError(f"{what} must be non-empty")


def judge_reference(generated: str, reference: str, backend: Backend, model_id: str) -> ReferenceScore:
    _require(generated, "generated claim")
    _require(reference, "reference claim")
    return parse_reference(backend.complete(reference_request(generated, reference, model_id)).text)


def judge_entailment(generated: str, pair: PostClaimPair, images: Sequence[ImagePart], backend: Backend, model_id: str) -> Entailment:
    _require(generated, "generated claim")
    return parse_label(backend.complete(entailment_request(generated, pair, images, model_id)).text, Entailment)


def judge_decontext(generated: str, backend: Backend, model_id: str) -> Decontext:
    _require(generated, "generated claim")
    return parse_label(backend.complete(decontext_request(generated, model_id)).text, Decontext)


def select_best(scores: Sequence[int]) -> int:
    """Index of the highest score; the earliest wins a tie."""
    if not scores:
        raise ValueError("no scores to select from")
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best


@dataclass(frozen=True)
class ClaimEvaluation:
    pair_id: str
    claim: str
    reference: ReferenceScore
    entailment: Entailment
    decontext: Decontext
    judge_model_id: str
    candidate_scores: tuple[int, ...] = ()
    selected_index: int = 0
    method: Optional[str] = None
    model_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "method": self.method,
            "model_id": self.model_id,
            "claim": self.claim,
            "selected_index": self.selected_index,
            "candidate_scores": list(self.candidate_scores),
            "reference": {"score": self.reference.score, "reasoning": self.reference.reasoning},
            "entailment": self.entailment.value,
            "decontext": self.decontext.value,
            "judge_model_id": self.judge_model_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClaimEvaluation":
        return cls(
            pair_id=d["pair_id"],
            claim=d["claim"],
            reference=ReferenceScore(d["reference"]["score"], d["reference"].get("reasoning", "")),
            entailment=Entailment(d["entailment"]),
            decontext=Decontext(d["decontext"]),
            judge_model_id=d["judge_model_id"],
            candidate_scores=tuple(d.get("candidate_scores", ())),
            selected_index=d.get("selected_index", 0),
            method=d.get("method"),
            model_id=d.get("model_id"),
        )


def evaluate_claims(result: ExtractedClaims, pair: PostClaimPair, backend: Backend, judge_model_id: str,
                    images: Optional[Sequence[ImagePart]] = None, base_dir=None) -> ClaimEvaluation:
    """Score every candidate against the gold claim, then judge the best one.

    Entailment and decontextualization are only asked of the selected claim.
    """
    if not result.claims:
        raise ValueError("no claims to evaluate")
    try:
        scored = [judge_reference(c, pair.gold_claim, backend, judge_model_id) for c in result.claims]
    except (GatewayError, ParseError) as exc:
        raise JudgeError("reference", exc) from exc
    best = select_best([s.score for s in scored])
    claim = result.claims[best]
    if images is None:
        images = [im for im in load_images(pair.image_refs, base_dir) if isinstance(im, ImagePart)]
    try:
        entailment = judge_entailment(claim, pair, images, backend, judge_model_id)
    except (GatewayError, ParseError) as exc:
        raise JudgeError("entailment", exc) from exc
    try:
        decontext = judge_decontext(claim, backend, judge_model_id)
    except (GatewayError, ParseError) as exc:
        raise JudgeError("decontext", exc) from exc
    return ClaimEvaluation(pair.id, claim, scored[best], entailment, decontext, judge_model_id,
                           tuple(s.score for s in scored), best, result.method.value, result.model_id)


def judge_batch(results: Sequence[ExtractedClaims], pairs: dict, backend: Backend, judge_model_id: str,
                workers: int = 4, base_dir=None) -> BatchResult:
    """Evaluate extraction results; output order follows ``results``."""
    return map_items(lambda r: evaluate_claims(r, pairs[r.pair_id], backend, judge_model_id, base_dir=base_dir),
                     list(results), workers, "judge", key=lambda r: r.pair_id)
