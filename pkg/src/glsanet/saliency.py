"""Vanilla-gradient saliency: d(class score)/d(image), collapsed to one channel."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import BoundsError
from .tensor import Tensor

ScoreFn = Callable[[Tensor], Tensor]


@dataclass
class SaliencyMap:
    values: np.ndarray  # [H, W] in [0, 1]
    source_class: int
    raw_max: float

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _argmax_lowest(scores: np.ndarray) -> int:
    # np.argmax already returns the first maximal index
    return int(np.argmax(scores))


def input_gradient(model: ScoreFn, image, class_index=None, xo_mode: str = "argmax"):
    """Gradient of a class score w.r.t. the input image.

    ``model`` maps a [3,H,W] (or batched [B,3,H,W]) tensor to class scores
    [K] (or [B,K]).  Without ``class_index`` the argmax class is used.
    ``xo_mode="mean-positive"`` differentiates the mean of all positive
    class scores instead.  Model parameters are never written to.

    Returns ``(grad, classes)`` where ``grad`` matches the image shape.
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    x = Tensor(data.astype(np.float32) if data.dtype not in (np.float32, np.float64) else data.copy(), requires_grad=True)
    batched = x.ndim == 4
    with T.Tape() as tape:
        scores = model(x)
        s2 = scores.data if batched else scores.data[None]
        k = s2.shape[-1]
        if class_index is None:
            classes = np.array([_argmax_lowest(row) for row in s2])
        else:
            classes = np.broadcast_to(np.asarray(class_index, dtype=np.int64), (s2.shape[0],)).copy()
            if classes.min() < 0 or classes.max() >= k:
                raise BoundsError(f"class_index {class_index} out of range for {k} classes")
        if xo_mode == "argmax":
            idx = (np.arange(len(classes)), classes) if batched else (int(classes[0]),)
            target = T.sum(T.index(scores, idx))
        elif xo_mode == "mean-positive":
            pos = (s2 > 0).astype(scores.dtype)
            cnt = np.maximum(pos.sum(axis=-1, keepdims=True), 1)
            w = pos / cnt
            target = T.sum(T.mul(scores, Tensor(w if batched else w[0], dtype=scores.dtype)))
        else:
            raise ValueError(f"unknown xo_mode {xo_mode!r}")
    if target.requires_grad:
        tape.backward(target, inputs=[x])
    grad = x.grad if x.grad is not None else np.zeros_like(x.data)
    return grad, (classes if batched else int(classes[0]))


def saliency_map(grad, source_class: int = -1, reduce: str = "max") -> SaliencyMap:
    """Channel-collapse |grad| (max, or mean with ``reduce="mean"``) and min-max normalize."""
    g = np.abs(np.asarray(grad.data if isinstance(grad, Tensor) else grad, dtype=np.float64))
    if g.ndim != 3:
        raise ValueError(f"saliency_map expects [C,H,W], got {g.shape}")
    v = g.max(axis=0) if reduce == "max" else g.mean(axis=0)
    raw_max = float(v.max())
    lo = float(v.min())
    if raw_max > lo:
        v = (v - lo) / (raw_max - lo)
    elif raw_max > 0:
        # constant nonzero field
        v = np.ones_like(v)
    else:
        v = np.zeros_like(v)
    return SaliencyMap(values=v, source_class=int(source_class), raw_max=raw_max)


def extract(model: ScoreFn, image, class_index=None, reduce: str = "max", xo_mode: str = "argmax") -> SaliencyMap:
    grad, cls = input_gradient(model, image, class_index, xo_mode=xo_mode)
    return saliency_map(grad, cls, reduce)


def extract_batch(model: ScoreFn, images: np.ndarray, reduce: str = "max", xo_mode: str = "argmax",
                  batch_size: int = 32) -> list[SaliencyMap]:
    """Saliency maps for a stack of images; the model must treat samples independently."""
    out = []
    for start in range(0, len(images), batch_size):
        chunk = np.asarray(images[start:start + batch_size])
        grads, classes = input_gradient(model, chunk, xo_mode=xo_mode)
        out.extend(saliency_map(g, c, reduce) for g, c in zip(grads, classes))
    return out
