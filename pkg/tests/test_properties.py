import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from glsanet import tensor as T
from glsanet.grid import GridSpec, grid_objectiveness, partition, sample_patches, thresh_targets
from glsanet.io.checkpoint import decode_checkpoint, encode_checkpoint
from glsanet.params import ParamSet
from glsanet.saliency import saliency_map
from glsanet.tensor import Tensor

finite = st.floats(-50, 50, allow_nan=False, width=64)
unit = st.floats(0, 1, allow_nan=False, width=64)


@st.composite
def image_and_n(draw):
    n = draw(st.integers(1, 4))
    gh, gw = draw(st.integers(1, 4)), draw(st.integers(1, 4))
    img = draw(arrays(np.float64, (3, n * gh, n * gw), elements=unit))
    return img, n


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_rows(x):
    y = T.softmax(Tensor(x)).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
    assert ((y >= 0) & (y <= 1)).all()


@given(arrays(np.float64, (3, 4, 5), elements=finite), st.floats(0.01, 100))
def test_saliency_sign_and_scale(g, s):
    a = saliency_map(g)
    np.testing.assert_array_equal(a.values, saliency_map(-g).values)
    np.testing.assert_allclose(saliency_map(s * g).values, a.values, atol=1e-9)
    assert a.values.min() >= 0 and a.values.max() <= 1
    if np.abs(g).max() > 0:
        assert a.values.max() == 1


@given(image_and_n())
def test_partition_round_trip(case):
    img, n = case
    p = partition(img, n)
    assert len(p.entities) == n * n
    np.testing.assert_array_equal(p.reassemble(), img)


@given(image_and_n())
def test_grid_mean_preserved(case):
    img, n = case
    assert abs(grid_objectiveness(img[0], n).mean() - img[0].mean()) < 1e-6


@given(st.lists(unit, min_size=1, max_size=16), unit)
def test_thresh_strict(scores, tau):
    t = thresh_targets(scores, tau)
    assert all((v == 1) == (s > tau) for v, s in zip(t.values, scores))


@st.composite
def patch_case(draw):
    n = draw(st.integers(1, 4))
    size = n * draw(st.integers(1, 5))
    spec = GridSpec(N=n, S_n=draw(st.integers(1, n * n)), S_w=draw(st.integers(1, size)),
                    S_h=draw(st.integers(1, size)))
    scores = draw(st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0]), min_size=n * n, max_size=n * n))
    return np.zeros((3, size, size)), np.asarray(scores), spec


@given(patch_case(), st.randoms())
def test_patches_in_bounds_and_tie_stable(case, rnd):
    img, scores, spec = case
    ps = sample_patches(img, scores, spec)
    _, h, w = img.shape
    for (y, x), p in zip(ps.offsets, ps.patches):
        assert 0 <= y and y + spec.S_h <= h and 0 <= x and x + spec.S_w <= w
        assert p.shape == (3, spec.S_h, spec.S_w)
    assert ps.scores == sorted(ps.scores, reverse=True)
    # shuffling which grids hold which equal values leaves the chosen set's scores unchanged
    again = sample_patches(img, scores.copy(), spec)
    assert again.grid_indices == ps.grid_indices
    vals = list(scores)
    rnd.shuffle(vals)
    shuffled = sample_patches(img, np.asarray(vals), spec)
    assert sorted(shuffled.scores) == sorted(ps.scores)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_checkpoint_round_trip_random_sets(seed):
    rng = np.random.default_rng(seed)
    p = ParamSet()
    for i in range(100):
        rank = int(rng.integers(0, 5))
        shape = tuple(int(d) for d in rng.integers(1, 4, size=rank))
        p[f"p{i}"] = Tensor(rng.normal(size=shape).astype(np.float32))
    buf = encode_checkpoint(p)
    q = decode_checkpoint(buf)
    assert all(q[k].data.tobytes() == p[k].data.tobytes() and q[k].shape == p[k].shape for k in p.names())
    assert encode_checkpoint(q) == buf


@settings(deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 7), st.integers(1, 2), st.integers(0, 1))
def test_counter_additivity(c_in, c_out, hw, stride, pad):
    x = Tensor(np.ones((c_in, hw, hw)))
    k = Tensor(np.ones((c_out, c_in, 3, 3)))
    dk = Tensor(np.ones((c_out, 3, 3)))
    with T.counting() as a:
        y = T.conv2d(x, k, stride=stride, padding=pad)
    with T.counting() as b:
        T.depthwise_conv2d(y, dk, padding=1)
    with T.counting() as both:
        T.depthwise_conv2d(T.conv2d(x, k, stride=stride, padding=pad), dk, padding=1)
    assert both.total == a.total + b.total == sum(both.breakdown.values())
