"""Directory-of-PPM datasets: ``root/<class>/<name>.ppm``."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from .ppm import read_ppm


@dataclass
class DatasetManifest:
    root: str
    class_names: list
    counts: list
    image_size: tuple  # (3, H, W)
    source: str = "directory-of-PPM"
    files: tuple = ()

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def list_dataset(root) -> DatasetManifest:
    """Scan ``root`` without decoding pixels; sample order is path-sorted."""
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root!r} is not a directory")
    names = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not names:
        raise DataError(f"no class directories under {root!r}")
    files, counts = [], []
    for name in names:
        ppms = sorted(f for f in os.listdir(os.path.join(root, name)) if f.endswith(".ppm"))
        counts.append(len(ppms))
        files.extend(os.path.join(root, name, f) for f in ppms)
    return DatasetManifest(root, names, counts, (), files=tuple(files))


def load_dataset(root):
    """Decode every image; returns (manifest, images [M,3,H,W] float32 in [0,1], labels)."""
    manifest = list_dataset(root)
    images, labels = [], []
    first = None
    label_of = {n: i for i, n in enumerate(manifest.class_names)}
    for path in manifest.files:
        img = read_ppm(path)
        if first is None:
            first = (path, img.shape)
        elif img.shape != first[1]:
            raise DataError(
                f"mixed image sizes: {first[0]} is {first[1][1]}x{first[1][2]} but {path} is {img.shape[1]}x{img.shape[2]}"
            )
        images.append(img)
        labels.append(label_of[os.path.basename(os.path.dirname(path))])
    if not images:
        raise DataError(f"no .ppm files under {root!r}")
    manifest.image_size = tuple(first[1])
    return manifest, np.stack(images), np.asarray(labels, dtype=np.int64)


def load_planted(root):
    """Planted-patch split written by ``write_planted_dataset``: images and grid indices."""
    root = os.fspath(root)
    paths, grids = [], []
    with open(os.path.join(root, "planted.tsv"), encoding="utf-8") as f:
        for line in f:
            rel, g = line.rstrip("\n").split("\t")
            paths.append(os.path.join(root, rel))
            grids.append(int(g))
    return np.stack([read_ppm(p) for p in paths]), np.asarray(grids, dtype=np.int64)
