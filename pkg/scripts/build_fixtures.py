"""Regenerate the offline replay fixtures under tests/fixtures/mini.

Writes a 10-pair dataset, tiny PNG images, and a fixture store seeded by
running every method for two simulated extractor models (plus the judge)
through the real pipeline with the deterministic stand-ins from
``mmce.simulate``.  Re-running it produces the same files.

    python3 scripts/build_fixtures.py [--out tests/fixtures/mini]
"""
from __future__ import annotations

import argparse
import shutil
import tempfile
from pathlib import Path

from mmce.dataset import Dataset, PostClaimPair, dump_dataset
from mmce.experiments import BenchmarkSpec, run_benchmark
from mmce.extraction import Method
from mmce.gateway import Backend
from mmce.simulate import SimulatedModel, SimulatedVision, tiny_png
from mmce.vision import VisionClient

MODELS = ("sim/extractor-a", "sim/extractor-b")
JUDGE = "sim/judge"

# id, platform, split, intent_critical, post_date, n_images, text, gold claim
POSTS = [
    ("p01", "X", "train", False, "2025-01-12", 1,
     "Flood water reached the second floor of the central library in Valencia this morning. Volunteers are moving books.",
     "Flood water reached the second floor of the central library in Valencia."),
    ("p02", "Facebook", "train", True, "2025-02-03", 2,
     "Sure, the new bridge is 'perfectly safe'. Look at these cracks that appeared one week after opening!",
     "Cracks appeared in the new bridge one week after it opened."),
    ("p03", "X", "train", False, "2025-02-20", 1,
     "The health ministry confirmed 40 new measles cases in the capital. Vaccination clinics open on Saturday.",
     "The health ministry confirmed 40 new measles cases in the capital."),
    ("p04", "Instagram", "train", False, "2025-03-05", 1,
     "This photo shows the crowd at yesterday's climate march in Berlin. Organisers counted over 100000 people.",
     "Over 100000 people attended the climate march in Berlin."),
    ("p05", "X", "train", True, "2025-03-18", 2,
     "Funny how the price of bread tripled while the supermarket chain posted record profits. Coincidence?",
     "The price of bread tripled while the supermarket chain posted record profits."),
    ("p06", "Telegram", "train", False, "2025-04-01", 1,
     "Breaking: the airport in Lisbon closed all runways after a power outage. Flights are diverted to Porto.",
     "Lisbon airport closed all runways after a power outage."),
    ("p07", "X", "dev", False, "2025-04-22", 1,
     "The city council voted to ban cars from the old town starting in June. Residents are furious.",
     "The city council voted to ban cars from the old town starting in June."),
    ("p08", "Facebook", "dev", True, "2025-05-09", 1,
     "They told us the vaccine was tested. This chart shows the trial lasted only two weeks.",
     "The vaccine trial lasted only two weeks."),
    ("p09", "X", "dev", False, None, 1,
     "Satellite images show the glacier lost a third of its area since 2000. Scientists warn of faster melting.",
     "The glacier lost a third of its area since 2000."),
    ("p10", "Instagram", "dev", False, "2026-01-15", 2,
     "The president met the striking farmers at the border crossing today. Talks will continue next week.",
     "The president met the striking farmers at the border crossing."),
]


def build_dataset(root: Path) -> Path:
    images = root / "images"
    images.mkdir(parents=True, exist_ok=True)
    pairs = []
    for n, (pid, platform, split, critical, date, n_images, text, gold) in enumerate(POSTS):
        refs = []
        for i in range(n_images):
            ref = f"images/{pid}_{i}.png"
            (root / ref).write_bytes(tiny_png(((37 * n) % 256, (91 * i + 40) % 256, (13 * n + 7 * i) % 256)))
            refs.append(ref)
        if pid == "p10":
            refs.append("images/p10_missing.png")  # exercises the unreadable-image warning path
        pairs.append(PostClaimPair.from_dict({
            "id": pid, "post_text": text, "original_language": "en" if n % 4 else "en, es",
            "platform": platform, "source_url": f"https://example.org/posts/{pid}",
            "image_refs": refs, "gold_claim": gold, "split": split,
            "intent_critical": critical, "post_date": date,
        }))
    path = root / "dataset.jsonl"
    dump_dataset(Dataset(pairs, root), path)
    return path


def seed_store(dataset: Path, store: Path) -> int:
    backend = Backend(store, "live", SimulatedModel(), sleep=lambda s: None)
    vision = VisionClient(store, "live", SimulatedVision(), sleep=lambda s: None)
    with tempfile.TemporaryDirectory() as tmp:
        spec = BenchmarkSpec(dataset, tuple(Method), MODELS, JUDGE, Path(tmp), workers=1)
        run_benchmark(spec, backend, vision)
    return len(backend.store.keys())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "mini")
    args = ap.parse_args(argv)
    if args.out.exists():
        shutil.rmtree(args.out)
    args.out.mkdir(parents=True)
    dataset = build_dataset(args.out)
    keys = seed_store(dataset, args.out / "store")
    print(f"wrote {dataset} and {keys} fixtures")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
