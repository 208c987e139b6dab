"""Grid partitioning, per-grid objectiveness targets and salient patch sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .saliency import extract_batch
from .tensor import Tensor


@dataclass(frozen=True)
class GridSpec:
    N: int = 4
    S_n: int = 6
    S_w: int = 16
    S_h: int = 16
    tau: float = 0.5

    def validate(self, height: int | None = None, width: int | None = None):
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if not 1 <= self.S_n <= self.N * self.N:
            raise ConfigError(f"S_n must lie in [1, N^2={self.N * self.N}], got {self.S_n}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.S_w < 1 or self.S_h < 1:
            raise ConfigError("patch size must be positive")
        if height is not None and width is not None:
            check_divisible(height, width, self.N)
            if self.S_w > width or self.S_h > height:
                raise ConfigError(f"patch {self.S_h}x{self.S_w} larger than image {height}x{width}")
        return self

    @property
    def num_grids(self) -> int:
        return self.N * self.N


def check_divisible(height: int, width: int, n: int):
    if n < 1 or height % n or width % n:
        raise ConfigError(f"N={n} does not divide image shape {height}x{width}")


@dataclass
class GridPartition:
    entities: list  # N^2 arrays [C, D_h/N, D_w/N], row-major grid order
    offsets: list  # (row, col) pixel origin per entity
    N: int

    def reassemble(self) -> np.ndarray:
        c, gh, gw = self.entities[0].shape
        out = np.zeros((c, gh * self.N, gw * self.N), dtype=self.entities[0].dtype)
        for e, (y, x) in zip(self.entities, self.offsets):
            out[:, y:y + gh, x:x + gw] = e
        return out

    @property
    def feature_maps(self) -> int:
        return sum(e.shape[0] for e in self.entities)


@dataclass
class ObjectivenessTargets:
    values: np.ndarray  # N^2 of {0, 1}
    source_scores: np.ndarray


@dataclass
class PatchSet:
    patches: list  # S_n arrays [C, S_h, S_w]
    grid_indices: list
    offsets: list  # (row, col) of each crop
    scores: list


def _image_array(image) -> np.ndarray:
    return image.data if isinstance(image, Tensor) else np.asarray(image)


def partition(image, n: int) -> GridPartition:
    img = _image_array(image)
    _, h, w = img.shape
    check_divisible(h, w, n)
    gh, gw = h // n, w // n
    entities, offsets = [], []
    for r in range(n):
        for c in range(n):
            entities.append(img[:, r * gh:(r + 1) * gh, c * gw:(c + 1) * gw].copy())
            offsets.append((r * gh, c * gw))
    return GridPartition(entities, offsets, n)


def partition_tensor(images: Tensor, n: int) -> Tensor:
    """Differentiable batched partition: [B,C,H,W] -> [B*N^2, C, H/N, W/N].

    Entity order inside each image is row-major, matching :func:`partition`.
    """
    b, c, h, w = images.shape
    check_divisible(h, w, n)
    gh, gw = h // n, w // n
    x = T.reshape(images, (b, c, n, gh, n, gw))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    return T.reshape(x, (b * n * n, c, gh, gw))


def grid_objectiveness(smap, n: int) -> np.ndarray:
    """Mean saliency inside each grid cell, row-major."""
    v = smap.values if hasattr(smap, "values") else np.asarray(smap)
    h, w = v.shape
    check_divisible(h, w, n)
    return v.reshape(n, h // n, n, w // n).mean(axis=(1, 3)).reshape(-1)


def thresh_targets(scores, tau: float) -> ObjectivenessTargets:
    s = np.asarray(scores, dtype=np.float64)
    return ObjectivenessTargets(values=(s > tau).astype(np.uint8), source_scores=s.copy())


def rank_grids(scores) -> list[int]:
    """Grid indices by descending score, ties by ascending index."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    return sorted(range(len(s)), key=lambda i: (-s[i], i))


def patch_offset(grid_index: int, spec: GridSpec, height: int, width: int) -> tuple[int, int]:
    """Top-left of an S_h x S_w crop centred on the grid cell, clamped inside the image."""
    gh, gw = height // spec.N, width // spec.N
    r, c = divmod(grid_index, spec.N)
    y = r * gh + gh // 2 - spec.S_h // 2
    x = c * gw + gw // 2 - spec.S_w // 2
    y = min(max(y, 0), height - spec.S_h)
    x = min(max(x, 0), width - spec.S_w)
    return y, x


def select_offsets(scores, spec: GridSpec, height: int, width: int):
    s = np.asarray(scores).reshape(-1)
    if spec.S_n > spec.num_grids:
        raise ConfigError(f"S_n={spec.S_n} exceeds N^2={spec.num_grids}")
    if s.size != spec.num_grids:
        raise ConfigError(f"expected {spec.num_grids} grid scores, got {s.size}")
    chosen = rank_grids(s)[:spec.S_n]
    return chosen, [patch_offset(i, spec, height, width) for i in chosen]


def sample_patches(image, scores, spec: GridSpec) -> PatchSet:
    img = _image_array(image)
    _, h, w = img.shape
    spec.validate(h, w)
    chosen, offsets = select_offsets(scores, spec, h, w)
    s = np.asarray(scores).reshape(-1)
    patches = [img[:, y:y + spec.S_h, x:x + spec.S_w].copy() for y, x in offsets]
    return PatchSet(patches, chosen, offsets, [float(s[i]) for i in chosen])


def normalize_scores(scores, mode: str = "max") -> np.ndarray:
    """Rescale one image's grid scores so the most salient grid is 1 (``mode="max"``)."""
    s = np.asarray(scores, dtype=np.float64)
    if mode == "none":
        return s
    if mode != "max":
        raise ConfigError(f"unknown target_norm {mode!r}")
    top = s.max(initial=0.0)
    return s / top if top > 0 else s


def build_glsa_dataset(pretrained: Callable[[Tensor], Tensor], images, n: int, tau: float,
                       xo_mode: str = "argmax", reduce: str = "max", target_norm: str = "max"):
    """Saliency-derived objectiveness targets for each image.

    ``pretrained`` maps a [B,3,H,W] batch to per-class scores [B,K].  Grid
    scores are divided by the image's largest grid score before
    thresholding unless ``target_norm="none"``: pixel-normalized saliency
    is sparse, so raw grid means rarely approach a threshold like 0.5.
    Returns a list of ``(image, ObjectivenessTargets)``.
    """
    images = np.asarray(images)
    if images.ndim != 4:
        raise ConfigError(f"expected a stack of images [B,3,H,W], got {images.shape}")
    check_divisible(images.shape[2], images.shape[3], n)
    maps = extract_batch(pretrained, images, reduce=reduce, xo_mode=xo_mode)
    return [(img, thresh_targets(normalize_scores(grid_objectiveness(m, n), target_norm), tau))
            for img, m in zip(images, maps)]
