"""Dual-branch classifier: a global backbone over the whole image, a local
backbone over GLSA-sampled patches, concatenated embeddings and a linear
head.  Also the single-branch and no-GLSA (DBN) baselines, training,
evaluation and closed-form MUL-ADD accounting.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError
from .glsa import GLSAConfig, glsa_forward, predict_scores
from .grid import GridSpec, select_offsets
from .params import ParamSet, kaiming_init, sgd_step
from .tensor import Tensor

VARIANTS = ("single", "dbn", "dbn-glsa")
_GRAY = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass(frozen=True)
class BackboneConfig:
    """Small residual network: stem conv, then stages of basic blocks."""

    widths: tuple = (16, 32, 64)
    blocks: tuple = (1, 1, 1)
    strides: tuple = (1, 2, 2)
    stem_stride: int = 2
    input_shift: float = 0.5

    @property
    def embed_dim(self) -> int:
        return self.widths[-1]

    def validate(self):
        if not (len(self.widths) == len(self.blocks) == len(self.strides)) or not self.widths:
            raise ConfigError("backbone widths/blocks/strides must have equal, non-zero length")
        if min(self.widths) < 1 or min(self.blocks) < 1 or min(self.strides) < 1 or self.stem_stride < 1:
            raise ConfigError("backbone widths, blocks and strides must be positive")
        return self


def _block_plan(cfg: BackboneConfig):
    """(name, c_in, c_out, stride) per basic block, in forward order."""
    plan = []
    c_in = cfg.widths[0]
    for si, (w, nb, s) in enumerate(zip(cfg.widths, cfg.blocks, cfg.strides)):
        for bi in range(nb):
            plan.append((f"stage{si}.block{bi}", c_in, w, s if bi == 0 else 1))
            c_in = w
    return plan


def add_backbone_params(p: ParamSet, prefix: str, cfg: BackboneConfig, in_channels: int = 3):
    p.add(f"{prefix}stem.weight", (cfg.widths[0], in_channels, 3, 3))
    p.add(f"{prefix}stem.bias", (cfg.widths[0],))
    for name, c_in, c_out, stride in _block_plan(cfg):
        b = f"{prefix}{name}"
        p.add(f"{b}.conv1.weight", (c_out, c_in, 3, 3))
        p.add(f"{b}.conv1.bias", (c_out,))
        p.add(f"{b}.conv2.weight", (c_out, c_out, 3, 3))
        p.add(f"{b}.conv2.bias", (c_out,))
        if stride != 1 or c_in != c_out:
            p.add(f"{b}.shortcut.weight", (c_out, c_in, 1, 1))
            p.add(f"{b}.shortcut.bias", (c_out,))


def backbone_forward(x: Tensor, params: ParamSet, prefix: str, cfg: BackboneConfig) -> Tensor:
    """[B,C,H,W] -> [B,E] embeddings (global average pooled)."""
    if cfg.input_shift:
        x = T.add(x, -cfg.input_shift)
    x = T.relu(T.conv2d(x, params[f"{prefix}stem.weight"], params[f"{prefix}stem.bias"], cfg.stem_stride, 1))
    for name, c_in, c_out, stride in _block_plan(cfg):
        b = f"{prefix}{name}"
        y = T.relu(T.conv2d(x, params[f"{b}.conv1.weight"], params[f"{b}.conv1.bias"], stride, 1))
        y = T.conv2d(y, params[f"{b}.conv2.weight"], params[f"{b}.conv2.bias"], 1, 1)
        if f"{b}.shortcut.weight" in params:
            x = T.conv2d(x, params[f"{b}.shortcut.weight"], params[f"{b}.shortcut.bias"], stride, 0)
        x = T.relu(T.add(y, x))
    return T.global_avg_pool(x)


def _conv_cost(c_out, c_in, k, h, w, stride, pad):
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    return c_out * c_in * k * k * ho * wo, ho, wo


def backbone_cost(cfg: BackboneConfig, in_channels: int, h: int, w: int) -> int:
    """Closed-form MUL-ADDs of one backbone forward on a single input."""
    total, h, w = _conv_cost(cfg.widths[0], in_channels, 3, h, w, cfg.stem_stride, 1)
    for _, c_in, c_out, stride in _block_plan(cfg):
        c1, ho, wo = _conv_cost(c_out, c_in, 3, h, w, stride, 1)
        c2, _, _ = _conv_cost(c_out, c_out, 3, ho, wo, 1, 1)
        total += c1 + c2
        if stride != 1 or c_in != c_out:
            total += _conv_cost(c_out, c_in, 1, h, w, stride, 0)[0]
        h, w = ho, wo
    return total


def glsa_cost(cfg: GLSAConfig, h: int, w: int) -> int:
    """Closed-form MUL-ADDs of one GLSA forward on a single image."""
    gh, gw = h // cfg.N, w // cfg.N
    ents = cfg.num_entities
    total = 0
    c_in = cfg.in_channels
    for _ in range(cfg.conv_depth):
        total += ents * c_in * 9 * gh * gw  # depthwise 3x3, pad 1
        total += ents * cfg.embed_dim * c_in * gh * gw  # pointwise
        c_in = cfg.embed_dim
    per_head = 3 * ents * cfg.head_dim * cfg.embed_dim
    per_head += 2 * cfg.num_groups * cfg.proximity * cfg.proximity * cfg.head_dim
    total += cfg.heads * per_head
    total += ents * cfg.embed_dim  # objectiveness head
    return total


@dataclass
class DualBranchModel:
    variant: str
    num_classes: int
    params: ParamSet
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    glsa: GLSAConfig | None = None
    local_aggregation: str = "share-and-mean"

    @property
    def has_local(self) -> bool:
        return self.variant != "single"

    @property
    def local_in_channels(self) -> int:
        if self.variant == "dbn-glsa" and self.local_aggregation == "stack-channels":
            return self.grid.S_n
        return 3

    @property
    def head_in(self) -> int:
        return self.backbone.embed_dim * (2 if self.has_local else 1)

    def trainable(self) -> ParamSet:
        out = ParamSet(rng_seed=self.params.rng_seed)
        for k, v in self.params.items():
            if v.requires_grad:
                out[k] = v
        return out

    def frozen(self) -> ParamSet:
        out = ParamSet(rng_seed=self.params.rng_seed)
        for k, v in self.params.items():
            if not v.requires_grad:
                out[k] = v
        return out


def build_model(variant: str, num_classes: int, seed: int = 0, backbone: BackboneConfig | None = None,
                grid: GridSpec | None = None, glsa_cfg: GLSAConfig | None = None,
                glsa_params: ParamSet | None = None, local_aggregation: str = "share-and-mean") -> DualBranchModel:
    """Kaiming-initialized model of one of the three variants.

    ``dbn-glsa`` needs trained GLSA parameters; they are attached frozen.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if local_aggregation not in ("share-and-mean", "stack-channels"):
        raise ConfigError(f"unknown local_aggregation {local_aggregation!r}")
    backbone = (backbone or BackboneConfig()).validate()
    grid = grid or GridSpec()
    model = DualBranchModel(variant, num_classes, ParamSet(rng_seed=seed), backbone, grid,
                            glsa_cfg, local_aggregation)
    p = model.params
    add_backbone_params(p, "global.", backbone, 3)
    if model.has_local:
        add_backbone_params(p, "local.", backbone, model.local_in_channels)
    p.add("head.weight", (num_classes, model.head_in))
    p.add("head.bias", (num_classes,))
    kaiming_init(p, seed)
    if variant == "dbn-glsa":
        if glsa_params is None or glsa_cfg is None:
            raise ConfigError("dbn-glsa needs a GLSA config and trained GLSA parameters")
        glsa_cfg.validate()
        for k, v in glsa_params.items():
            t = Tensor(v.data.astype(np.float32), requires_grad=False, name=k)
            p[k if k.startswith("glsa.") else "glsa." + k] = t
    return model


def baseline_variants(num_classes: int, seed: int, glsa_cfg: GLSAConfig, glsa_params: ParamSet,
                      backbone: BackboneConfig | None = None, grid: GridSpec | None = None,
                      local_aggregation: str = "share-and-mean") -> dict:
    return {
        v: build_model(v, num_classes, seed, backbone, grid, glsa_cfg,
                       glsa_params if v == "dbn-glsa" else None, local_aggregation)
        for v in VARIANTS
    }


# ---------------------------------------------------------------- forward


def _as_batch(images) -> tuple[Tensor, bool]:
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
    if x.ndim == 3:
        return T.reshape(x, (1,) + x.shape), True
    return x, False


def patch_offsets(images: np.ndarray, model: DualBranchModel) -> np.ndarray:
    """[B, S_n, 2] crop origins chosen from frozen GLSA scores."""
    imgs = np.asarray(images)
    if imgs.ndim == 3:
        imgs = imgs[None]
    scores = predict_scores(imgs, model.glsa, model.params)
    _, _, h, w = imgs.shape
    return np.asarray([select_offsets(s, model.grid, h, w)[1] for s in scores], dtype=np.int64).reshape(len(imgs), -1, 2)


def _check_input(x: Tensor, model: DualBranchModel, size: tuple | None):
    if size is not None and tuple(x.shape[1:]) != tuple(size):
        raise DimensionError(f"image shape {tuple(x.shape[1:])} does not match configured input {tuple(size)}")


def forward_global(images, model: DualBranchModel, input_size: tuple | None = None) -> Tensor:
    x, squeeze = _as_batch(images)
    _check_input(x, model, input_size)
    tape = T.active_tape()
    with tape.scope("global") if tape else contextlib.nullcontext():
        e = backbone_forward(x, model.params, "global.", model.backbone)
    return T.reshape(e, (e.shape[-1],)) if squeeze else e


def _gather_patches(x: Tensor, offsets: np.ndarray, grid: GridSpec) -> Tensor:
    b, c = x.shape[:2]
    crops = []
    for i in range(b):
        for y, xo in offsets[i]:
            crops.append(T.crop(x, (i, 0, int(y), int(xo)), (1, c, grid.S_h, grid.S_w)))
    return T.concat(crops, axis=0)


def forward_local(images, model: DualBranchModel, offsets: np.ndarray | None = None) -> Tensor:
    """Local-branch embedding [B,E] (or [E] for a single image).

    DBN feeds the full image; DBN-GLSA runs the frozen GLSA, samples S_n
    patches per image and mean-pools their shared-backbone embeddings.
    ``offsets`` may carry precomputed crop origins (GLSA is frozen, so they
    only depend on the image).
    """
    if not model.has_local:
        raise ConfigError("single-branch model has no local branch")
    x, squeeze = _as_batch(images)
    tape = T.active_tape()
    b = x.shape[0]
    if model.variant == "dbn":
        with tape.scope("local") if tape else contextlib.nullcontext():
            e = backbone_forward(x, model.params, "local.", model.backbone)
    else:
        if offsets is None:
            with tape.scope("glsa") if tape else contextlib.nullcontext():
                scores = glsa_forward(x.detach(), model.glsa, model.params)
            offsets = np.asarray(
                [select_offsets(s, model.grid, x.shape[2], x.shape[3])[1] for s in scores.data],
                dtype=np.int64,
            ).reshape(b, -1, 2)
        sn = model.grid.S_n
        patches = _gather_patches(x, offsets, model.grid)  # [B*S_n, 3, S_h, S_w]
        with tape.scope("local") if tape else contextlib.nullcontext():
            if model.local_aggregation == "share-and-mean":
                e = backbone_forward(patches, model.params, "local.", model.backbone)
                e = T.mean(T.reshape(e, (b, sn, e.shape[-1])), axes=1)
            else:
                gray = T.sum(T.mul(patches, Tensor(_GRAY.reshape(1, 3, 1, 1).astype(patches.dtype))), axes=1)
                stacked = T.reshape(gray, (b, sn, model.grid.S_h, model.grid.S_w))
                e = backbone_forward(stacked, model.params, "local.", model.backbone)
    return T.reshape(e, (e.shape[-1],)) if squeeze else e


def logits(images, model: DualBranchModel, offsets: np.ndarray | None = None) -> Tensor:
    """Pre-softmax class scores; head input is [X_local, X_global] in that order."""
    x, squeeze = _as_batch(images)
    g = forward_global(x, model)
    if model.has_local:
        feat = T.concat([forward_local(x, model, offsets), g], axis=-1)
    else:
        feat = g
    tape = T.active_tape()
    with tape.scope("head") if tape else contextlib.nullcontext():
        z = T.linear(feat, model.params["head.weight"], model.params["head.bias"])
    return T.reshape(z, (z.shape[-1],)) if squeeze else z


def classify(images, model: DualBranchModel) -> Tensor:
    """Softmax class probabilities."""
    return T.softmax(logits(images, model))


def predict(images: np.ndarray, model: DualBranchModel, batch_size: int = 64,
            offsets: np.ndarray | None = None) -> np.ndarray:
    preds = []
    for s in range(0, len(images), batch_size):
        off = None if offsets is None else offsets[s:s + batch_size]
        z = logits(Tensor(np.asarray(images[s:s + batch_size], dtype=np.float32)), model, off).data
        preds.append(np.argmax(z, axis=-1))
    return np.concatenate(preds) if preds else np.zeros(0, np.int64)


def score_fn(model: DualBranchModel):
    """Callable image -> logits, for saliency extraction."""
    return lambda x: logits(x, model)


# ---------------------------------------------------------------- training / evaluation


def _check_labels(labels: np.ndarray, k: int):
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        i = int(bad[0])
        raise DataError(f"sample {i} has label {int(labels[i])}, outside 0..{k - 1}")


def train_classifier(model: DualBranchModel, images: np.ndarray, labels: np.ndarray, epochs: int = 10,
                     lr: float = 0.02, momentum: float = 0.9, batch_size: int = 16, seed: int = 0, log=None,
                     on_epoch=None, cosine: bool = True):
    """Cross-entropy SGD over the trainable parameters; GLSA stays frozen.

    Returns ``(model, history)``; history holds per-epoch mean loss and
    running train accuracy (percent).
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ConfigError("train_classifier needs a non-empty dataset")
    _check_labels(labels, model.num_classes)
    trainable = model.trainable()
    offsets = patch_offsets(images, model) if model.variant == "dbn-glsa" else None
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(images))
        total, correct = 0.0, 0
        lr_e = lr * 0.5 * (1 + np.cos(np.pi * epoch / epochs)) if cosine else lr
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            off = None if offsets is None else offsets[idx]
            with T.Tape() as tape:
                z = logits(Tensor(images[idx]), model, off)
                loss = T.cross_entropy(z, labels[idx])
            tape.backward(loss)
            sgd_step(trainable, lr_e, momentum)
            total += float(loss.data) * len(idx)
            correct += int((np.argmax(z.data, axis=-1) == labels[idx]).sum())
        history.append({"loss": total / len(images), "accuracy": 100.0 * correct / len(images)})
        if log is not None:
            log(f"{model.variant} epoch {epoch + 1}/{epochs} loss {history[-1]['loss']:.4f} "
                f"acc {history[-1]['accuracy']:.1f}")
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model, history


@dataclass
class EvalReport:
    per_class_top1: list
    top1: float
    mul_add: int
    ntp_bytes: int
    tp_bytes: int
    per_class_counts: list = field(default_factory=list)
    mul_add_breakdown: dict = field(default_factory=dict)


def measure_mul_add(model: DualBranchModel, image: np.ndarray):
    """MUL-ADD counter for one single-image forward pass."""
    with T.counting() as counter:
        logits(Tensor(np.asarray(image, dtype=np.float32)[None]), model)
    return counter


def closed_form_mul_add(model: DualBranchModel, h: int, w: int) -> dict:
    """Per-scope analytic MUL-ADDs for one image; keys mirror the counter scopes."""
    out = {"global": backbone_cost(model.backbone, 3, h, w)}
    if model.variant == "dbn":
        out["local"] = backbone_cost(model.backbone, 3, h, w)
    elif model.variant == "dbn-glsa":
        g = model.grid
        if model.local_aggregation == "share-and-mean":
            out["local"] = g.S_n * backbone_cost(model.backbone, 3, g.S_h, g.S_w)
        else:
            out["local"] = backbone_cost(model.backbone, g.S_n, g.S_h, g.S_w)
        out["glsa"] = glsa_cost(model.glsa, h, w)
    out["head"] = model.num_classes * model.head_in
    out["total"] = sum(out.values())
    return out


def evaluate(model: DualBranchModel, images: np.ndarray, labels: np.ndarray, batch_size: int = 64) -> EvalReport:
    """Per-class and overall top-1 (percent), MUL-ADD of one forward, parameter bytes."""
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ConfigError("evaluate needs a non-empty dataset")
    _check_labels(labels, model.num_classes)
    preds = predict(images, model, batch_size)
    per_class, counts = [], []
    for k in range(model.num_classes):
        mask = labels == k
        counts.append(int(mask.sum()))
        per_class.append(float(100.0 * (preds[mask] == k).mean()) if mask.any() else None)
    counter = measure_mul_add(model, images[0])
    return EvalReport(
        per_class_top1=per_class,
        top1=float(100.0 * (preds == labels).mean()),
        mul_add=counter.total,
        ntp_bytes=model.params.nbytes(trainable=False),
        tp_bytes=model.params.nbytes(trainable=True),
        per_class_counts=counts,
        mul_add_breakdown=counter.as_dict(),
    )
