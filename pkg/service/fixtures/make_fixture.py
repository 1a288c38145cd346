"""Deterministically (re)build the bundled two-class fixture dataset.

Each image quantizes a noisy copy of its class word's embedding, so the
toy model separates the classes imperfectly and the exact template
wording moves train accuracy around.

Run from the service directory: python fixtures/make_fixture.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from clip_score_service.embedder import TOY_DIM, encode_embedding_as_image, word_vector

DATASET_ID = "fixturecls"
CLASS_NAMES = ("heron", "bulldozer", "lighthouse", "mandolin")
SHOTS = 16
FOLDS = (0, 1, 2)
TEST_PER_CLASS = 16
CLASS_SIGNAL = 1.0
NOISE_SCALE = 0.5
SEED = 20240811


def noisy_class_vector(rng: np.random.Generator, class_name: str) -> np.ndarray:
    vec = CLASS_SIGNAL * word_vector(class_name) + NOISE_SCALE * rng.standard_normal(TOY_DIM)
    return vec / np.linalg.norm(vec)


def main() -> None:
    rng = np.random.default_rng(SEED)
    out_dir = Path(__file__).resolve().parent / DATASET_ID
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    def write_group(prefix: str, per_class: int) -> list[dict]:
        records = []
        for label, class_name in enumerate(CLASS_NAMES):
            for i in range(per_class):
                name = f"{prefix}_{class_name}_{i:02d}.png"
                encode_embedding_as_image(noisy_class_vector(rng, class_name),
                                          images_dir / name)
                records.append({"path": f"images/{name}", "label": label})
        return records

    manifest = {
        "dataset_id": DATASET_ID,
        "class_names": list(CLASS_NAMES),
        "shots": SHOTS,
        "folds": {str(f): write_group(f"f{f}", SHOTS) for f in FOLDS},
        "test": write_group("test", TEST_PER_CLASS),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                           encoding="utf-8")
    total = len(CLASS_NAMES) * (SHOTS * len(FOLDS) + TEST_PER_CLASS)
    print(f"wrote {total} images and manifest.json under {out_dir}")


if __name__ == "__main__":
    main()
