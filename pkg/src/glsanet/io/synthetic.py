"""Synthetic stand-ins for the statue datasets.

Class images: a smooth textured background plus one bright class-specific
glyph placed in a class-characteristic quadrant.  Planted-patch images: a
textured background with a single bright square inside one grid cell,
whose index is the ground-truth salient grid.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .ppm import atomic_write, encode_ppm

GLYPHS = ("plus", "ring", "cross", "hbars", "vbars", "diamond", "corner", "dot")


def glyph_mask(kind: str, size: int) -> np.ndarray:
    s = size
    yy, xx = np.mgrid[0:s, 0:s]
    c = (s - 1) / 2
    t = max(1, s // 5)
    if kind == "plus":
        m = (np.abs(yy - c) < t) | (np.abs(xx - c) < t)
    elif kind == "ring":
        m = (yy < t) | (yy >= s - t) | (xx < t) | (xx >= s - t)
    elif kind == "cross":
        m = (np.abs(yy - xx) < t) | (np.abs(yy + xx - (s - 1)) < t)
    elif kind == "hbars":
        m = (yy // t) % 2 == 0
    elif kind == "vbars":
        m = (xx // t) % 2 == 0
    elif kind == "diamond":
        m = np.abs(yy - c) + np.abs(xx - c) <= c
    elif kind == "corner":
        m = (yy < t) | (xx < t)
    elif kind == "dot":
        m = (yy - c) ** 2 + (xx - c) ** 2 <= (s / 3) ** 2
    else:
        raise ValueError(f"unknown glyph {kind!r}")
    return m.astype(np.float32)


def textured_background(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.uniform(0.1, 0.5, size=(3, 4, 4))
    rep = -(-size // 4)
    smooth = np.kron(coarse, np.ones((rep, rep)))[:, :size, :size]
    noise = rng.normal(0.0, 0.05, size=(3, size, size))
    return np.clip(smooth + noise, 0.0, 1.0).astype(np.float32)


def _paint(img: np.ndarray, mask: np.ndarray, y: int, x: int, color: np.ndarray):
    s = mask.shape[0]
    region = img[:, y:y + s, x:x + s]
    img[:, y:y + s, x:x + s] = region * (1 - mask) + color[:, None, None] * mask


def class_image(rng: np.random.Generator, label: int, size: int) -> np.ndarray:
    img = textured_background(rng, size)
    g = max(5, size // 6)
    half = size // 2
    qy, qx = divmod(label % 4, 2)
    y = qy * half + int(rng.integers(0, half - g + 1))
    x = qx * half + int(rng.integers(0, half - g + 1))
    color = rng.uniform(0.8, 1.0, size=3).astype(np.float32)
    _paint(img, glyph_mask(GLYPHS[label % len(GLYPHS)], g), y, x, color)
    return img


def class_dataset(counts, size: int, seed: int):
    """In-memory images [M,3,size,size] float32 and labels, class-major order."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label, n in enumerate(counts):
        for _ in range(int(n)):
            images.append(class_image(rng, label, size))
            labels.append(label)
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def planted_image(rng: np.random.Generator, size: int, n: int):
    img = textured_background(rng, size)
    cell = size // n
    grid = int(rng.integers(0, n * n))
    r, c = divmod(grid, n)
    side = max(2, (3 * cell) // 4)
    y = r * cell + int(rng.integers(0, cell - side + 1))
    x = c * cell + int(rng.integers(0, cell - side + 1))
    color = rng.uniform(0.85, 1.0, size=3).astype(np.float32)
    _paint(img, np.ones((side, side), np.float32), y, x, color)
    return img, grid


def planted_dataset(count: int, size: int, n: int, seed: int):
    """``count`` planted images [count,3,size,size] and their salient grid indices."""
    rng = np.random.default_rng(seed)
    pairs = [planted_image(rng, size, n) for _ in range(count)]
    return np.stack([p[0] for p in pairs]), np.asarray([p[1] for p in pairs], dtype=np.int64)


def one_hot_targets(grid_indices, n: int) -> np.ndarray:
    t = np.zeros((len(grid_indices), n * n), dtype=np.float32)
    t[np.arange(len(grid_indices)), grid_indices] = 1
    return t


def class_names(k: int) -> list[str]:
    width = len(str(max(k - 1, 0)))
    return [f"class{i:0{width}d}" for i in range(k)]


@dataclass
class GeneratedSplit:
    root: str
    counts: list


def write_class_dataset(root, counts, size: int, seed: int) -> GeneratedSplit:
    images, labels = class_dataset(counts, size, seed)
    names = class_names(len(counts))
    seen = [0] * len(counts)
    for img, lab in zip(images, labels):
        path = os.path.join(root, names[lab], f"{seen[lab]:05d}.ppm")
        seen[lab] += 1
        atomic_write(path, encode_ppm(img))
    return GeneratedSplit(os.fspath(root), [int(c) for c in counts])


def write_planted_dataset(root, count: int, size: int, n: int, seed: int) -> GeneratedSplit:
    """Images go to ``root/planted/``; ``root/planted.tsv`` maps file -> grid index."""
    images, grids = planted_dataset(count, size, n, seed)
    lines = []
    for i, (img, g) in enumerate(zip(images, grids)):
        name = f"{i:05d}.ppm"
        atomic_write(os.path.join(root, "planted", name), encode_ppm(img))
        lines.append(f"planted/{name}\t{int(g)}\n")
    atomic_write(os.path.join(root, "planted.tsv"), "".join(lines).encode("utf-8"))
    return GeneratedSplit(os.fspath(root), [int(count)])
