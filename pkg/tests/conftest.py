import json
import shutil
from pathlib import Path

import pytest

from mmce.dataset import PostClaimPair, load_dataset
from mmce.gateway import Backend, ChatRequest
from mmce.judge import ClaimEvaluation, Decontext, Entailment, ReferenceScore
from mmce.vision import VisionClient

MINI = Path(__file__).parent / "fixtures" / "mini"
MINI_DATASET = MINI / "dataset.jsonl"
MINI_STORE = MINI / "store"
MODEL_A = "sim/extractor-a"
MODEL_B = "sim/extractor-b"
JUDGE = "sim/judge"


def make_pair(pid="x1", text="The mayor opened a bridge in Lyon.", images=("a.png",), split="train", **kw):
    fields = dict(
        id=pid, post_text=text, original_language="en", platform="X",
        source_url=f"https://example.org/{pid}", image_refs=tuple(images),
        gold_claim=kw.pop("gold", "The mayor of Lyon opened a bridge."), split=split,
    )
    fields.update(kw)
    return PostClaimPair(**fields)


def make_eval(score=3, ent=Entailment.ENTAILED, dec=Decontext.FULLY, pid="x1"):
    return ClaimEvaluation(pid, "claim", ReferenceScore(score, ""), ent, dec, "judge")


class ScriptedTransport:
    """Replies chosen by a function of the request; records every call."""

    def __init__(self, reply):
        self.reply = reply
        self.requests: list[ChatRequest] = []

    def __call__(self, request):
        self.requests.append(request)
        out = self.reply(request) if callable(self.reply) else self.reply
        if isinstance(out, Exception):
            raise out
        return out


@pytest.fixture
def mini_dataset():
    return load_dataset(MINI_DATASET)


@pytest.fixture
def replay_backend():
    return Backend(MINI_STORE, "replay")


@pytest.fixture
def replay_vision():
    return VisionClient(MINI_STORE, "replay")


@pytest.fixture
def mini_copy(tmp_path):
    """A private copy of the mini corpus (dataset, images, store)."""
    dst = tmp_path / "mini"
    shutil.copytree(MINI, dst)
    return dst


def write_jsonl(path: Path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


# ------------------------------------------------ acceptance summary lines

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "setup" and report.skipped:
        _CRITERIA[number] = ("SKIP", title)
    elif report.when == "call":
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        _CRITERIA[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}")
