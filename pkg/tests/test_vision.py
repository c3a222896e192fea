import json

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmce.gateway import FixtureStore, ImageAccessError, ImagePart, MissingFixtureError, TransientError
from mmce.simulate import SimulatedVision, tiny_png
from mmce.vision import (
    AzureVisionTransport,
    Caption,
    VisionClient,
    VisionServiceError,
    VisualSemantics,
    analyze_post_images,
    parse_analysis,
    render_visual_block,
    vision_cache_key,
)

from conftest import ScriptedTransport, make_pair

IMG = ImagePart(tiny_png((9, 9, 9)), "image/png")

BODY = {
    "modelVersion": "2023-10-01",
    "denseCaptionsResult": {"values": [
        {"text": "a man holding a sign", "confidence": 0.82, "boundingBox": {"x": 0, "y": 0, "w": 4, "h": 4}},
        {"text": "a red sign", "confidence": 0.71},
    ]},
    "readResult": {"blocks": [{"lines": [{"text": "STOP THE"}, {"text": "TOLL"}]}]},
    "tagsResult": {"values": [{"name": "person", "confidence": 0.99}, {"name": "sign", "confidence": 0.9},
                              {"name": "person", "confidence": 0.5}]},
}


def test_parse_analysis_maps_all_features():
    sem = parse_analysis(BODY)
    assert [c.text for c in sem.dense_captions] == ["a man holding a sign", "a red sign"]
    assert sem.dense_captions[0].confidence == 0.82
    assert sem.ocr_text == "STOP THE\nTOLL"
    assert sem.tags == ("person", "sign")  # deduplicated, order kept


def test_parse_analysis_tolerates_missing_sections():
    assert parse_analysis({}) == VisualSemantics()


def test_caption_confidence_bounds():
    with pytest.raises(ValueError):
        Caption("x", 1.5)
    with pytest.raises(ValueError):
        VisualSemantics(tags=("  ",))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.text(min_size=1).filter(str.strip), st.one_of(st.none(), st.floats(0, 1))), max_size=4),
       st.text(), st.lists(st.text(min_size=1).filter(str.strip), max_size=5))
def test_semantics_roundtrip(captions, ocr, tags):
    sem = VisualSemantics(tuple(Caption(t, c) for t, c in captions), ocr, tuple(tags))
    assert VisualSemantics.from_dict(json.loads(json.dumps(sem.to_dict()))) == sem


def test_render_visual_block_layout():
    block = render_visual_block([parse_analysis(BODY), VisualSemantics(tags=("sky",))])
    assert block == (
        "# VISION API OUTPUT\n## Image 1\nDense captions:\n- a man holding a sign\n- a red sign\n"
        "OCR text:\nSTOP THE\nTOLL\nTags: person, sign\n## Image 2\nTags: sky"
    )
    assert render_visual_block([]) == ""


def test_client_caches_and_replays(tmp_path):
    t = ScriptedTransport(lambda im: json.dumps(BODY))
    t.features, t.api_version = ("denseCaptions", "read", "tags"), "2024-02-01"
    live = VisionClient(tmp_path, "live", lambda im: t(im))
    first = live.analyze(IMG)
    live.analyze(IMG)
    assert len(t.requests) == 1
    assert VisionClient(tmp_path, "replay").analyze(IMG) == first
    key, request = vision_cache_key(IMG)
    assert FixtureStore(tmp_path).get(key)["request"] == request


def test_replay_miss(tmp_path):
    with pytest.raises(MissingFixtureError):
        VisionClient(tmp_path, "replay").analyze(IMG)


def test_unreadable_cached_body(tmp_path):
    key, request = vision_cache_key(IMG)
    FixtureStore(tmp_path).put(key, request, "<html>oops</html>")
    with pytest.raises(VisionServiceError):
        VisionClient(tmp_path, "replay").analyze(IMG)


def test_service_failure_wrapped(tmp_path):
    client = VisionClient(tmp_path, "live", ScriptedTransport(TransientError("503")), sleep=lambda s: None)
    with pytest.raises(VisionServiceError):
        client.analyze(IMG)


def test_post_with_one_bad_image_warns(tmp_path):
    (tmp_path / "ok.png").write_bytes(IMG.data)
    pair = make_pair(images=("ok.png", "gone.png"))
    client = VisionClient(tmp_path / "store", "live", SimulatedVision())
    out = analyze_post_images(pair, client, tmp_path)
    assert len(out.semantics) == 1
    assert len(out.warnings) == 1 and "gone.png" in out.warnings[0]


def test_post_with_no_readable_images_raises(tmp_path):
    client = VisionClient(tmp_path / "store", "live", SimulatedVision())
    with pytest.raises(ImageAccessError):
        analyze_post_images(make_pair(images=("a.png", "b.png")), client, tmp_path)


def test_azure_transport_request_shape():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["key"] = request.headers["ocp-apim-subscription-key"]
        seen["body"] = request.content
        return httpx.Response(200, json=BODY)

    t = AzureVisionTransport("https://res.example/", "k", client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert json.loads(t(IMG)) == BODY
    assert seen["url"].startswith("https://res.example/computervision/imageanalysis:analyze?")
    assert "features=denseCaptions%2Cread%2Ctags" in seen["url"] and "api-version=2024-02-01" in seen["url"]
    assert seen["key"] == "k" and seen["body"] == IMG.data
