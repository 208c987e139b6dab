"""Random-shape gradient cases shared by the unit and acceptance suites.

Each builder takes an rng and returns ``(f, tensors)``: a closure producing a
scalar loss from float64 ``tensors``.  A fixed random projection turns
non-scalar outputs into a scalar so every output element contributes.
"""

import numpy as np

from glsanet import tensor as T
from glsanet.glsa import GLSAConfig, glsa_forward, init_params
from glsanet.gradcheck import check_gradients
from glsanet.tensor import Tensor, shadow64


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _project(rng, out_shape):
    w = Tensor(rng.normal(size=out_shape))
    return lambda y: T.sum(T.mul(y, w))


def _dims(rng, lo, hi, n):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=n))


def _away_from_zero(rng, shape, gap=0.05):
    a = rng.normal(size=shape)
    return np.where(np.abs(a) < gap, np.sign(a + 1e-12) * gap, a)


def case_add(rng):
    s = _dims(rng, 1, 4, 2)
    a, b = _t(rng.normal(size=s)), _t(rng.normal(size=s[1:]))
    p = _project(rng, s)
    return lambda: p(T.add(a, b)), [a, b]


def case_mul(rng):
    s = _dims(rng, 1, 4, 2)
    a, b = _t(rng.normal(size=s)), _t(rng.normal(size=s))
    p = _project(rng, s)
    return lambda: p(T.mul(a, b)), [a, b]


def case_scale_neg(rng):
    s = _dims(rng, 1, 5, 2)
    a = _t(rng.normal(size=s))
    c = float(rng.normal())
    p = _project(rng, s)
    return lambda: p(T.neg(T.scale(a, c))), [a]


def case_relu(rng):
    s = _dims(rng, 1, 5, 2)
    a = _t(_away_from_zero(rng, s))
    p = _project(rng, s)
    return lambda: p(T.relu(a)), [a]


def case_sigmoid(rng):
    s = _dims(rng, 1, 5, 2)
    a = _t(rng.normal(size=s) * 3)
    p = _project(rng, s)
    return lambda: p(T.sigmoid(a)), [a]


def case_softmax(rng):
    s = _dims(rng, 1, 4, 2)
    a = _t(rng.normal(size=s) * 2)
    p = _project(rng, s)
    return lambda: p(T.softmax(a)), [a]


def case_log_softmax(rng):
    s = _dims(rng, 1, 4, 2)
    a = _t(rng.normal(size=s))
    p = _project(rng, s)
    return lambda: p(T.log_softmax(a)), [a]


def case_sum_mean(rng):
    s = _dims(rng, 1, 4, 3)
    a = _t(rng.normal(size=s))
    ax = int(rng.integers(0, 3))
    out = tuple(d for i, d in enumerate(s) if i != ax)
    p = _project(rng, out)
    return lambda: T.add(p(T.mean(a, axes=ax)), T.scale(T.sum(T.mul(a, a)), 0.1)), [a]


def case_global_avg_pool(rng):
    c, h, w = _dims(rng, 1, 4, 3)
    a = _t(rng.normal(size=(c, h, w)))
    p = _project(rng, (c,))
    return lambda: p(T.global_avg_pool(a)), [a]


def case_reshape_transpose(rng):
    s = _dims(rng, 1, 4, 3)
    a = _t(rng.normal(size=s))
    p = _project(rng, (s[2], s[0] * s[1]))
    return lambda: p(T.reshape(T.transpose(a, (2, 0, 1)), (s[2], s[0] * s[1]))), [a]


def case_concat_stack(rng):
    r, c1, c2 = _dims(rng, 1, 4, 3)
    a, b = _t(rng.normal(size=(r, c1))), _t(rng.normal(size=(r, c2)))
    d = _t(rng.normal(size=(r, c1)))
    p1 = _project(rng, (r, c1 + c2))
    p2 = _project(rng, (2, r, c1))
    return lambda: T.add(p1(T.concat([a, b], axis=1)), p2(T.stack([a, d]))), [a, b, d]


def case_crop(rng):
    c, h, w = _dims(rng, 1, 3, 1) + _dims(rng, 3, 6, 2)
    a = _t(rng.normal(size=(c, h, w)))
    sh, sw = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
    oy, ox = int(rng.integers(0, h - sh + 1)), int(rng.integers(0, w - sw + 1))
    p = _project(rng, (c, sh, sw))
    return lambda: p(T.crop(a, (0, oy, ox), (c, sh, sw))), [a]


def case_index(rng):
    n, m = _dims(rng, 2, 5, 2)
    a = _t(rng.normal(size=(n, m)))
    idx = rng.integers(0, n, size=n + 2)  # repeats exercise the scatter-add
    p = _project(rng, (n + 2, m))
    return lambda: p(T.index(a, idx)), [a]


def case_linear(rng):
    b, d_in, d_out = _dims(rng, 1, 5, 3)
    x, w, bias = _t(rng.normal(size=(b, d_in))), _t(rng.normal(size=(d_out, d_in))), _t(rng.normal(size=d_out))
    p = _project(rng, (b, d_out))
    return lambda: p(T.linear(x, w, bias)), [x, w, bias]


def case_matmul(rng):
    g, m, k, n = _dims(rng, 1, 4, 4)
    a, b = _t(rng.normal(size=(g, m, k))), _t(rng.normal(size=(g, k, n)))
    p = _project(rng, (g, m, n))
    return lambda: p(T.matmul(a, b)), [a, b]


def case_conv2d(rng):
    c_in, c_out = _dims(rng, 1, 3, 2)
    h, w = _dims(rng, 3, 6, 2)
    k = int(rng.integers(1, 4))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x = _t(rng.normal(size=(c_in, h, w)))
    kern = _t(rng.normal(size=(c_out, c_in, k, k)))
    bias = _t(rng.normal(size=c_out))
    ho, wo = (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1
    p = _project(rng, (c_out, ho, wo))
    return lambda: p(T.conv2d(x, kern, bias, stride, pad)), [x, kern, bias]


def case_depthwise(rng):
    c = int(rng.integers(1, 4))
    h, w = _dims(rng, 3, 6, 2)
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x = _t(rng.normal(size=(2, c, h, w)))
    kern = _t(rng.normal(size=(c, 3, 3)))
    bias = _t(rng.normal(size=c))
    ho, wo = (h + 2 * pad - 3) // stride + 1, (w + 2 * pad - 3) // stride + 1
    p = _project(rng, (2, c, ho, wo))
    return lambda: p(T.depthwise_conv2d(x, kern, bias, stride, pad)), [x, kern, bias]


def case_bce(rng):
    s = _dims(rng, 1, 6, 1)
    pred = _t(rng.uniform(0.05, 0.95, size=s))
    target = (rng.random(s) > 0.5).astype(np.float64)
    return lambda: T.bce(pred, target), [pred]


def case_cross_entropy(rng):
    b, k = _dims(rng, 1, 4, 1) + _dims(rng, 2, 5, 1)
    z = _t(rng.normal(size=(b, k)))
    labels = rng.integers(0, k, size=b)
    return lambda: T.cross_entropy(z, labels), [z]


def case_conv_relu_linear(rng):
    """The three-layer net of the backward examples, on a 1x8x8 input."""
    x = Tensor(rng.normal(size=(1, 8, 8)))
    k = _t(rng.normal(size=(2, 1, 3, 3)) * 0.5)
    kb = _t(rng.normal(size=2) * 0.1)
    w = _t(rng.normal(size=(3, 2 * 6 * 6)) * 0.1)
    wb = _t(rng.normal(size=3) * 0.1)
    label = int(rng.integers(0, 3))

    def f():
        h = T.relu(T.conv2d(x, k, kb))
        return T.cross_entropy(T.linear(T.reshape(h, (72,)), w, wb), [label])

    return f, [k, kb, w, wb]


CORE_CASES = {
    "add": case_add,
    "mul": case_mul,
    "scale/neg": case_scale_neg,
    "relu": case_relu,
    "sigmoid": case_sigmoid,
    "softmax": case_softmax,
    "log_softmax": case_log_softmax,
    "sum/mean": case_sum_mean,
    "global_avg_pool": case_global_avg_pool,
    "reshape/transpose": case_reshape_transpose,
    "concat/stack": case_concat_stack,
    "crop": case_crop,
    "index": case_index,
    "linear": case_linear,
    "matmul": case_matmul,
    "conv2d": case_conv2d,
    "depthwise_conv2d": case_depthwise,
    "bce": case_bce,
    "cross_entropy": case_cross_entropy,
    "conv-relu-linear net": case_conv_relu_linear,
}


def worst_error(builder, n_shapes: int = 20, seed: int = 0, step: float = 1e-6) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    with shadow64():
        for _ in range(n_shapes):
            f, tensors = builder(rng)
            worst = max(worst, check_gradients(f, tensors, step))
    return worst


def glsa_loss_case(rng, grouping="row-major", proximity=4):
    """BCE of the full GLSA forward on a 3x16x16 input with N=4."""
    cfg = GLSAConfig(N=4, embed_dim=8, proximity=proximity, heads=2, head_dim=4, conv_depth=2, grouping=grouping)
    with shadow64():
        params = init_params(cfg, int(rng.integers(0, 2**31))).copy(np.float64)
        img = Tensor(rng.random((3, 16, 16)))
        target = (rng.random(16) > 0.6).astype(np.float64)
    tensors = [params[n] for n in params.names()]
    return (lambda: T.bce(glsa_forward(img, cfg, params), target)), tensors


def glsa_worst_error(n_shapes: int = 3, seed: int = 0) -> float:
    """Cycles through grouping and proximity settings across cases."""
    rng = np.random.default_rng(seed)
    settings = [("row-major", 4), ("2d-block", 4), ("row-major", 8), ("row-major", 16), ("row-major", 2)]
    worst = 0.0
    with shadow64():
        for i in range(n_shapes):
            grouping, proximity = settings[i % len(settings)]
            f, tensors = glsa_loss_case(rng, grouping, proximity)
            worst = max(worst, check_gradients(f, tensors, 1e-6))
    return worst
