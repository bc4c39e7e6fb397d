"""Dataset manifests: shapes, labels, categories and train/test splits."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Missing files or out-of-range labels behind a manifest."""


@dataclass(frozen=True)
class ShapeEntry:
    shape_id: str
    category: str
    mesh_path: str     # relative to the manifest directory
    label_path: str
    split: str         # train | test


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    label_names: tuple
    shapes: tuple

    @property
    def num_labels(self) -> int:
        return len(self.label_names)

    def of_split(self, split: str):
        return [s for s in self.shapes if s.split == split]

    def mesh_file(self, entry: ShapeEntry) -> Path:
        return self.root / entry.mesh_path

    def label_file(self, entry: ShapeEntry) -> Path:
        return self.root / entry.label_path


def save_manifest(path, label_names, shapes) -> None:
    data = {
        "label_names": list(label_names),
        "shapes": [
            {"id": s.shape_id, "category": s.category, "mesh": s.mesh_path,
             "labels": s.label_path, "split": s.split}
            for s in shapes],
    }
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    shapes = tuple(
        ShapeEntry(shape_id=d["id"], category=d["category"],
                   mesh_path=d["mesh"], label_path=d["labels"],
                   split=d["split"])
        for d in data["shapes"])
    manifest = DatasetManifest(root=path.parent,
                               label_names=tuple(data["label_names"]),
                               shapes=shapes)
    for entry in shapes:
        for f in (manifest.mesh_file(entry), manifest.label_file(entry)):
            if not f.exists():
                raise DatasetError(f"manifest references missing file {f}")
        if entry.split not in ("train", "test"):
            raise DatasetError(f"{entry.shape_id}: bad split {entry.split!r}")
    return manifest


def validate_labels(manifest: DatasetManifest) -> None:
    """Check that every label file stays within [0, L-1]."""
    from .mesh import load_face_labels
    for entry in manifest.shapes:
        labels = load_face_labels(manifest.label_file(entry))
        if labels.size and (labels.min() < 0
                            or labels.max() >= manifest.num_labels):
            raise DatasetError(
                f"{entry.shape_id}: labels outside "
                f"[0, {manifest.num_labels - 1}]")


def split_shapes(count: int, test_fraction: float, rng) -> list:
    """Seeded random split into train/test halves of the requested size."""
    n_test = int(round(count * test_fraction))
    order = rng.permutation(count)
    test_set = set(order[:n_test].tolist())
    return ["test" if i in test_set else "train" for i in range(count)]
