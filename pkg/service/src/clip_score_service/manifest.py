"""Dataset manifests: class names plus per-fold few-shot image lists."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class LabeledImage:
    path: Path
    label: int


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    class_names: tuple[str, ...]
    shots: int
    folds: dict[int, tuple[LabeledImage, ...]]
    test: tuple[LabeledImage, ...]

    def images_for(self, fold: int, split: str) -> tuple[LabeledImage, ...]:
        if fold not in self.folds:
            raise KeyError(fold)
        return self.folds[fold] if split == "train" else self.test


def _labeled(records, base_dir: Path, n_classes: int) -> tuple[LabeledImage, ...]:
    images = []
    for record in records:
        label = int(record["label"])
        if not 0 <= label < n_classes:
            raise ManifestError(f"label {label} out of range")
        path = base_dir / record["path"]
        if not path.exists():
            raise ManifestError(f"missing image file {path}")
        images.append(LabeledImage(path=path, label=label))
    return tuple(images)


def load_manifest(path: Path) -> DatasetManifest:
    """Read one manifest.json; every fold must hold exactly shots images
    per class."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    base_dir = path.parent
    class_names = tuple(data["class_names"])
    if not class_names or len(set(class_names)) != len(class_names):
        raise ManifestError(f"{path}: class_names must be non-empty and unique")
    shots = int(data["shots"])
    folds: dict[int, tuple[LabeledImage, ...]] = {}
    for fold_key, records in data["folds"].items():
        images = _labeled(records, base_dir, len(class_names))
        counts = Counter(img.label for img in images)
        for label in range(len(class_names)):
            if counts.get(label, 0) != shots:
                raise ManifestError(
                    f"{path}: fold {fold_key} has {counts.get(label, 0)} images for class "
                    f"{class_names[label]!r}, expected exactly {shots}"
                )
        folds[int(fold_key)] = images
    test = _labeled(data.get("test", []), base_dir, len(class_names))
    return DatasetManifest(
        dataset_id=data["dataset_id"],
        class_names=class_names,
        shots=shots,
        folds=folds,
        test=test,
    )


def load_manifest_dir(manifest_dir: Path) -> dict[str, DatasetManifest]:
    """Load every */manifest.json under the directory, keyed by dataset id."""
    manifest_dir = Path(manifest_dir)
    manifests: dict[str, DatasetManifest] = {}
    for path in sorted(manifest_dir.glob("*/manifest.json")):
        manifest = load_manifest(path)
        if manifest.dataset_id in manifests:
            raise ManifestError(f"duplicate dataset id {manifest.dataset_id!r}")
        manifests[manifest.dataset_id] = manifest
    direct = manifest_dir / "manifest.json"
    if direct.exists():
        manifest = load_manifest(direct)
        manifests.setdefault(manifest.dataset_id, manifest)
    if not manifests:
        raise ManifestError(f"no manifest.json found under {manifest_dir}")
    return manifests
