#!/usr/bin/env python3
"""Recompute a template's accuracy without the service app.

Plain single-file reimplementation of the scoring path (manifest parsing,
prompt rendering, nearest-prompt classification) used to cross-check the
service bit-for-bit. Only the embedding model itself is shared.

Usage:
  python scripts/offline_score.py --manifest fixtures/fixturecls/manifest.json \
      --template "a photo of a {}" --fold 0 --split train
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from clip_score_service.embedder import load_embedder


def main(argv=None) -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--manifest", type=Path, required=True)
    parser.add_argument("--template", required=True)
    parser.add_argument("--fold", type=int, required=True)
    parser.add_argument("--split", choices=["train", "test"], default="train")
    parser.add_argument("--model", default="toy")
    args = parser.parse_args(argv)

    data = json.loads(args.manifest.read_text(encoding="utf-8"))
    base = args.manifest.parent
    records = data["folds"][str(args.fold)] if args.split == "train" else data["test"]

    embedder = load_embedder(args.model)
    prompts = [args.template.replace("{}", name) for name in data["class_names"]]
    text = embedder.embed_texts(prompts)

    correct = 0
    for record in records:
        image = embedder.embed_images([base / record["path"]])[0]
        similarities = [float(image @ text[c]) for c in range(len(prompts))]
        predicted = max(range(len(prompts)), key=lambda c: similarities[c])
        correct += int(predicted == int(record["label"]))

    accuracy = correct / len(records)
    print(json.dumps({
        "accuracy": accuracy,
        "num_images": len(records),
        "num_classes": len(data["class_names"]),
    }))


if __name__ == "__main__":
    main()
