import numpy as np
import pytest

from slotnet.diffnet import tensor as T
from slotnet.diffnet.gradcheck import check
from slotnet.diffnet.tensor import Tensor

import suites

SEEDS = range(20)
TOL = 1e-6


_proj = suites._proj
_away_from_zero = suites._away_from_zero


@pytest.mark.parametrize("name", sorted(suites.PRIMITIVES))
def test_primitive_gradients(name):
    err = suites.primitive_errors(SEEDS, only=name)[name]
    assert err < TOL, f"{name}: rel err {err:.2e}"


def test_relu_and_maxpool_gradients():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = _away_from_zero(rng, (2, 4, 4, 3))
        assert check(lambda a: _proj(T.relu(a), seed), [x]) < TOL
        assert check(lambda a: _proj(T.maxpool2(a), seed), [x]) < TOL


def test_gather_patches_gradient():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        fmap = rng.standard_normal((2, 4, 4, 2))
        rows, cols = rng.integers(-2, 6, 5), rng.integers(-2, 6, 5)
        bidx = rng.integers(0, 2, 5)
        err = check(lambda m: _proj(T.gather_patches(m, bidx, rows, cols, 3), seed), [fmap])
        assert err < TOL


def test_conv_identity_and_zero_kernel():
    x = Tensor(np.arange(3.0).reshape(1, 1, 1, 3), requires_grad=True)
    eye = np.eye(3).reshape(1, 1, 3, 3)
    np.testing.assert_array_equal(T.conv2d(x, eye).data, x.data)
    y = T.conv2d(x, Tensor(np.zeros((1, 1, 3, 3))))
    assert not y.data.any()
    T.tsum(y).backward()
    assert not x.grad.any()


def test_activation_ranges():
    x = Tensor(np.linspace(-50, 50, 101))
    assert T.sigmoid(Tensor(np.zeros(1))).data[0] == 0.5
    t = T.tanh(x).data
    assert t.min() >= -1 and t.max() <= 1
    s = T.softmax(Tensor(np.random.default_rng(0).standard_normal((5, 3)) * 30), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-9)


def test_maxpool_forward_and_odd_size():
    x = np.arange(16.0).reshape(1, 4, 4, 1)
    np.testing.assert_array_equal(T.maxpool2(Tensor(x)).data[0, :, :, 0], [[5, 7], [13, 15]])
    with pytest.raises(ValueError):
        T.maxpool2(Tensor(np.zeros((1, 3, 4, 1))))


def test_maxpool_tie_routes_to_one_cell():
    x = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
    T.tsum(T.maxpool2(x)).backward()
    assert x.grad.sum() == 1.0 and x.grad[0, 0, 0, 0] == 1.0


def test_shared_leaf_accumulates():
    a = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    T.tsum(a * a + a).backward()
    np.testing.assert_array_equal(a.grad, [5.0, 7.0])


def test_scalar_ops_keep_float32():
    a = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    assert (1.0 - a).dtype == np.float32
    assert (a * 2.0).dtype == np.float32


def test_log_clamp_has_no_gradient_below_eps():
    a = Tensor(np.array([0.0, 0.5]), requires_grad=True)
    out = T.log(a, 1e-12)
    assert np.isfinite(out.data).all()
    T.tsum(out).backward()
    assert a.grad[0] == 0.0 and a.grad[1] == pytest.approx(2.0)


def test_gather_patches_padding_gets_no_gradient():
    fmap = Tensor(np.random.default_rng(1).standard_normal((1, 4, 4, 2)), requires_grad=True)
    p = T.gather_patches(fmap, [0], [0], [0], 5)
    assert not p.data[0, :2].any() and not p.data[0, :, :2].any()
    T.tsum(p).backward()
    # only the 3x3 in-bounds block receives gradient
    assert fmap.grad.sum() == pytest.approx(9 * 2)
    assert not fmap.grad[0, 3:].any() and not fmap.grad[0, :, 3:].any()
