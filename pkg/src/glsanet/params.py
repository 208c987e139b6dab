"""Named parameter sets, seeded Kaiming initialization and SGD with momentum."""

from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from .errors import ContractError
from .tensor import Tensor

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class SplitMix64:
    """splitmix64 state stream; ``uniform``/``normal`` draw in stream order."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            z = (z ^ (z >> np.uint64(30))) * _MIX1
            z = (z ^ (z >> np.uint64(27))) * _MIX2
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * int(_GAMMA)) & _MASK64
        return z

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in [0, 1) from the top 53 bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller; each pair of uniforms yields two values."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)
        return z[:n]


def is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1] == "bias"


def fan_in(shape: tuple) -> int:
    """conv [C_out,C_in,K_h,K_w] -> C_in*K_h*K_w; depthwise [C,K_h,K_w] -> K_h*K_w; linear [D_out,D_in] -> D_in."""
    if len(shape) == 1:
        return int(shape[0])
    return int(np.prod(shape[1:]))


class ParamSet:
    """Mapping from dotted parameter path to :class:`Tensor`.

    Iteration is lexicographic by name.  Momentum buffers live in
    ``velocity`` so they persist across :func:`sgd_step` calls.
    """

    def __init__(self, tensors: dict | None = None, rng_seed: int = 0):
        self._t: dict[str, Tensor] = {}
        self.rng_seed = int(rng_seed) & _MASK64
        self.velocity: dict[str, np.ndarray] = {}
        for name, value in (tensors or {}).items():
            self[name] = value

    def __setitem__(self, name: str, value):
        if not isinstance(value, Tensor):
            value = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True)
        self._t[name] = value

    def add(self, name: str, shape, requires_grad: bool = True) -> Tensor:
        if name in self._t:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.zeros(shape, dtype=np.float32), requires_grad=requires_grad, name=name)
        self._t[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._t[name]

    def __contains__(self, name: str) -> bool:
        return name in self._t

    def __len__(self) -> int:
        return len(self._t)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._t))

    def names(self) -> list[str]:
        return sorted(self._t)

    def items(self):
        return [(k, self._t[k]) for k in sorted(self._t)]

    def subset(self, prefix: str) -> "ParamSet":
        """Tensors whose name starts with ``prefix`` (shared, not copied)."""
        out = ParamSet(rng_seed=self.rng_seed)
        out._t = {k: v for k, v in self._t.items() if k.startswith(prefix)}
        return out

    def update(self, other: "ParamSet"):
        for k, v in other.items():
            self._t[k] = v

    def set_requires_grad(self, flag: bool, prefix: str = ""):
        for k, v in self._t.items():
            if k.startswith(prefix):
                v.requires_grad = flag

    def copy(self, dtype=None) -> "ParamSet":
        out = ParamSet(rng_seed=self.rng_seed)
        for k, v in self._t.items():
            out._t[k] = Tensor(v.data.copy(), requires_grad=v.requires_grad, dtype=dtype or v.dtype, name=k)
        return out

    def zero_grad(self):
        for v in self._t.values():
            v.grad = None

    def nbytes(self, trainable: bool | None = None) -> int:
        return int(sum(v.data.nbytes for v in self._t.values() if trainable is None or v.requires_grad == trainable))

    def digest(self) -> str:
        """sha256 over names, shapes and raw bytes; equal iff byte-identical."""
        h = hashlib.sha256()
        for k, v in self.items():
            h.update(k.encode())
            h.update(str(v.shape).encode())
            h.update(np.ascontiguousarray(v.data).tobytes())
        return h.hexdigest()


def kaiming_init(params: ParamSet, rng_seed: int | None = None) -> ParamSet:
    """Fill weights with N(0, sqrt(2/fan_in)), biases with zeros.

    One splitmix64 stream seeded with ``rng_seed`` is consumed in
    lexicographic parameter order, so equal seeds give bit-identical sets.
    """
    if rng_seed is not None:
        params.rng_seed = int(rng_seed) & _MASK64
    rng = SplitMix64(params.rng_seed)
    for name, t in params.items():
        if is_bias(name):
            t.data[...] = 0
            continue
        std = np.sqrt(2.0 / fan_in(t.shape))
        t.data[...] = (rng.normal(t.data.size) * std).reshape(t.shape).astype(t.dtype)
    return params


def sgd_step(params: ParamSet, lr: float, momentum: float = 0.9) -> ParamSet:
    """v <- momentum*v + grad; p <- p - lr*v; then clear grads.

    Parameters with ``requires_grad`` false are skipped (frozen).
    """
    for name, t in params.items():
        if not t.requires_grad:
            continue
        if t.grad is None:
            raise ContractError(f"parameter {name!r} requires grad but has none; run backward first")
    for name, t in params.items():
        if not t.requires_grad:
            continue
        v = params.velocity.get(name)
        v = t.grad.astype(t.dtype) if v is None else momentum * v + t.grad
        params.velocity[name] = v
        t.data -= (lr * v).astype(t.dtype)
        t.grad = None
    return params
