"""Grid-wise Local Self-Attention (GLSA).

Each grid cell ("entity") of the image is embedded independently by a
shared stack of depthwise-separable convolutions and pooled to a C-vector
token.  Tokens are split into groups of ``proximity`` consecutive entities
and multi-head self-attention runs inside each group only.  A linear
head + sigmoid turns each token into a per-grid objectiveness score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .grid import GridPartition, check_divisible, partition_tensor
from .params import ParamSet, kaiming_init, sgd_step
from .tensor import Tensor


@dataclass(frozen=True)
class GLSAConfig:
    N: int = 4
    embed_dim: int = 32
    proximity: int = 4
    heads: int = 4
    head_dim: int = 8
    conv_depth: int = 2
    in_channels: int = 3
    grouping: str = "row-major"
    # subtracted from pixels before the conv stack; [0,1] inputs train poorly
    input_shift: float = 0.5

    @property
    def num_entities(self) -> int:
        return self.N * self.N

    @property
    def num_groups(self) -> int:
        return self.num_entities // self.proximity

    def validate(self):
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if self.proximity < 1 or self.num_entities % self.proximity:
            raise ConfigError(f"proximity {self.proximity} does not divide N^2 = {self.num_entities}")
        if self.heads * self.head_dim != self.embed_dim:
            raise ConfigError(
                f"heads*head_dim must equal embed_dim: {self.heads}*{self.head_dim} != {self.embed_dim}"
            )
        if self.conv_depth < 1:
            raise ConfigError("conv_depth must be >= 1")
        if self.grouping not in ("row-major", "2d-block"):
            raise ConfigError(f"unknown grouping {self.grouping!r}")
        if self.grouping == "2d-block":
            side = math.isqrt(self.proximity)
            if side * side != self.proximity or self.N % side:
                raise ConfigError(f"2d-block grouping needs a square proximity whose side divides N, got {self.proximity}")
        return self


def init_params(cfg: GLSAConfig, seed: int = 0, prefix: str = "glsa.") -> ParamSet:
    cfg.validate()
    p = ParamSet(rng_seed=seed)
    c_in = cfg.in_channels
    for layer in range(cfg.conv_depth):
        p.add(f"{prefix}embed.{layer}.dw.weight", (c_in, 3, 3))
        p.add(f"{prefix}embed.{layer}.dw.bias", (c_in,))
        p.add(f"{prefix}embed.{layer}.pw.weight", (cfg.embed_dim, c_in, 1, 1))
        p.add(f"{prefix}embed.{layer}.pw.bias", (cfg.embed_dim,))
        c_in = cfg.embed_dim
    for h in range(cfg.heads):
        for proj in ("wq", "wk", "wv"):
            # stored [d, C] (out x in) so fan-in is C
            p.add(f"{prefix}attn.head{h}.{proj}", (cfg.head_dim, cfg.embed_dim))
    p.add(f"{prefix}head.weight", (1, cfg.embed_dim))
    p.add(f"{prefix}head.bias", (1,))
    return kaiming_init(p, seed)


def group_order(cfg: GLSAConfig) -> np.ndarray:
    """Entity permutation that makes each group contiguous."""
    n = cfg.num_entities
    if cfg.grouping == "row-major":
        return np.arange(n)
    side = math.isqrt(cfg.proximity)
    order = []
    for br in range(0, cfg.N, side):
        for bc in range(0, cfg.N, side):
            for r in range(br, br + side):
                for c in range(bc, bc + side):
                    order.append(r * cfg.N + c)
    return np.asarray(order)


def groups(cfg: GLSAConfig) -> list[list[int]]:
    order = group_order(cfg)
    return [order[g * cfg.proximity:(g + 1) * cfg.proximity].tolist() for g in range(cfg.num_groups)]


def embed_entities(entities: Tensor, cfg: GLSAConfig, params: ParamSet, prefix: str = "glsa.") -> Tensor:
    """[M, C_in, h, w] entity stack -> [M, embed_dim] tokens."""
    if entities.shape[-1] < 3 or entities.shape[-2] < 3:
        raise ConfigError(f"grid cells of {entities.shape[-2]}x{entities.shape[-1]} are smaller than the 3x3 depthwise kernel")
    x = entities
    for layer in range(cfg.conv_depth):
        pre = f"{prefix}embed.{layer}"
        x = T.depthwise_conv2d(x, params[f"{pre}.dw.weight"], params[f"{pre}.dw.bias"], stride=1, padding=1)
        x = T.relu(x)
        x = T.conv2d(x, params[f"{pre}.pw.weight"], params[f"{pre}.pw.bias"])
    return T.global_avg_pool(x)


def entity_embed(part: GridPartition, params: ParamSet, cfg: GLSAConfig) -> Tensor:
    ents = Tensor(np.stack(part.entities))
    return embed_entities(ents, cfg, params)


def grouped_attention(tokens: Tensor, cfg: GLSAConfig, params: ParamSet, prefix: str = "glsa.",
                      return_weights: bool = False):
    """Proximity-grouped multi-head self-attention over [N^2, C] or [B, N^2, C] tokens.

    With ``return_weights`` also returns the softmax weights, shaped
    [heads, B, groups, proximity, proximity].
    """
    cfg.validate()
    squeeze = tokens.ndim == 2
    x = T.reshape(tokens, (1,) + tokens.shape) if squeeze else tokens
    b, n, c = x.shape
    if n != cfg.num_entities or c != cfg.embed_dim:
        raise ConfigError(f"tokens {tokens.shape} do not match N^2={cfg.num_entities}, C={cfg.embed_dim}")
    order = group_order(cfg)
    permuted = cfg.grouping != "row-major"
    if permuted:
        x = T.index(x, (slice(None), order))
    f = T.reshape(x, (b, cfg.num_groups, cfg.proximity, c))
    scale = 1.0 / math.sqrt(cfg.head_dim)
    heads, weights = [], []
    for h in range(cfg.heads):
        q = T.linear(f, params[f"{prefix}attn.head{h}.wq"])
        k = T.linear(f, params[f"{prefix}attn.head{h}.wk"])
        v = T.linear(f, params[f"{prefix}attn.head{h}.wv"])
        a = T.softmax(T.scale(T.matmul(q, T.swap_last(k)), scale))
        weights.append(a.data)
        heads.append(T.matmul(a, v))
    out = T.concat(heads, axis=-1) if len(heads) > 1 else heads[0]
    out = T.reshape(out, (b, n, c))
    if permuted:
        out = T.index(out, (slice(None), np.argsort(order)))
    if squeeze:
        out = T.reshape(out, (n, c))
    if return_weights:
        return out, np.stack(weights)
    return out


def glsa_tokens(images: Tensor, cfg: GLSAConfig, params: ParamSet, prefix: str = "glsa.") -> Tensor:
    """Attention output tokens before the objectiveness head: [B, N^2, C]."""
    b, _, h, w = images.shape
    check_divisible(h, w, cfg.N)
    if cfg.input_shift:
        images = T.add(images, -cfg.input_shift)
    ents = partition_tensor(images, cfg.N)
    tok = embed_entities(ents, cfg, params, prefix)
    tok = T.reshape(tok, (b, cfg.num_entities, cfg.embed_dim))
    return grouped_attention(tok, cfg, params, prefix)


def glsa_forward(image, cfg: GLSAConfig, params: ParamSet, prefix: str = "glsa.") -> Tensor:
    """Per-grid objectiveness in (0, 1): [N^2] for one image, [B, N^2] for a batch."""
    x = image if isinstance(image, Tensor) else Tensor(np.asarray(image))
    squeeze = x.ndim == 3
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    tok = glsa_tokens(x, cfg, params, prefix)
    logits = T.linear(tok, params[f"{prefix}head.weight"], params[f"{prefix}head.bias"])
    scores = T.sigmoid(T.reshape(logits, logits.shape[:-1]))
    if squeeze:
        scores = T.reshape(scores, (cfg.num_entities,))
    return scores


def predict_scores(images: np.ndarray, cfg: GLSAConfig, params: ParamSet, batch_size: int = 64) -> np.ndarray:
    """Forward-only scores for a stack of images, [B, N^2]."""
    out = []
    for s in range(0, len(images), batch_size):
        out.append(glsa_forward(Tensor(np.asarray(images[s:s + batch_size])), cfg, params).data)
    return np.concatenate(out) if out else np.zeros((0, cfg.num_entities), np.float32)


def glsa_train(params: ParamSet, cfg: GLSAConfig, dataset, epochs: int = 10, lr: float = 0.05,
               momentum: float = 0.9, batch_size: int = 16, seed: int = 0, log=None):
    """Minimize mean BCE between GLSA scores and binary grid targets with SGD.

    ``dataset`` is a sequence of ``(image, targets)`` pairs where targets is
    an ObjectivenessTargets or an array of N^2 zeros/ones.  Returns
    ``(params, history)`` with one mean loss per epoch.
    """
    if len(dataset) == 0:
        raise ConfigError("glsa_train needs a non-empty dataset")
    images = np.stack([np.asarray(img, dtype=np.float32) for img, _ in dataset])
    targets = np.stack([np.asarray(getattr(t, "values", t), dtype=np.float32).reshape(-1) for _, t in dataset])
    if targets.shape[1] != cfg.num_entities:
        raise ConfigError(f"targets have {targets.shape[1]} entries, expected N^2={cfg.num_entities}")
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(images))
        total = 0.0
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            with T.Tape() as tape:
                scores = glsa_forward(Tensor(images[idx]), cfg, params)
                loss = T.bce(scores, targets[idx])
            tape.backward(loss)
            sgd_step(params, lr, momentum)
            total += float(loss.data) * len(idx)
        history.append(total / len(images))
        if log is not None:
            log(f"glsa epoch {epoch + 1}/{epochs} loss {history[-1]:.4f}")
    return params, history
