import numpy as np
import pytest

from gossipmask import (ModelArch, conv2d, desk_arch, finite_diff_check,
                        flatten, forward, grad_z, identity_masks, init_params,
                        linear, loss_and_grad_v, maxpool2d, relu, shape_chain)
from gossipmask.nn import _maxpool_backward, _maxpool_forward


def small_arch():
    return ModelArch((conv2d(2, 3, 3, padding=1), relu(), maxpool2d(2, 2),
                      flatten(), linear(27, 4)), (2, 6, 6), 4)


def random_masks(arch, rng, density=0.6):
    return {idx: (rng.random(shape) < density).astype(np.float64)
            for idx, shape in arch.param_shapes().items()}


# ------------------------------------------------------------- arch specs

def test_shape_chain_desk():
    arch = desk_arch((3, 16, 16), 4)
    chain = shape_chain(arch.layers, arch.input_shape)
    assert chain[0] == (3, 16, 16)
    assert chain[-1] == (4,)


def test_arch_rejects_incompatible_layers():
    with pytest.raises(ValueError):
        ModelArch((conv2d(3, 4, 3), flatten(), linear(10, 2)), (2, 6, 6), 2)
    with pytest.raises(ValueError):
        ModelArch((flatten(), linear(8, 3)), (2, 2, 2), 4)  # 3 != 4 classes


def test_param_shapes():
    arch = small_arch()
    assert arch.param_shapes() == {0: (3, 2, 3, 3), 4: (4, 27)}
    assert arch.param_count() == 3 * 2 * 9 + 4 * 27


# ------------------------------------------------------------ init_params

def test_init_params_deterministic():
    arch = small_arch()
    a = init_params(arch, 7)
    b = init_params(arch, 7)
    for idx in a:
        assert np.array_equal(a[idx], b[idx])


def test_init_params_in_range():
    arch = small_arch()
    for t in init_params(arch, 7).values():
        assert t.min() >= -1.0 and t.max() <= 1.0


def test_init_params_seed_matters():
    arch = small_arch()
    a = init_params(arch, 7)
    b = init_params(arch, 8)
    assert any(not np.array_equal(a[idx], b[idx]) for idx in a)


# ---------------------------------------------------------------- forward

def test_identity_mask_is_bitwise_noop():
    arch = small_arch()
    rng = np.random.default_rng(0)
    w = init_params(arch, 3)
    x = rng.random((4, 2, 6, 6))
    masked, _ = forward(arch, w, identity_masks(arch), x)
    unmasked, _ = forward(arch, w, None, x)
    assert np.array_equal(masked, unmasked)


def test_zero_mask_zero_logits():
    arch = small_arch()
    w = init_params(arch, 3)
    zeros = {idx: np.zeros(s) for idx, s in arch.param_shapes().items()}
    logits, _ = forward(arch, w, zeros, np.random.default_rng(1).random((3, 2, 6, 6)))
    assert np.array_equal(logits, np.zeros((3, 4)))


def test_hand_convolution():
    arch = ModelArch((conv2d(1, 1, 1), flatten()), (1, 1, 1), 1)
    logits, _ = forward(arch, {0: np.full((1, 1, 1, 1), 2.0)},
                        {0: np.ones((1, 1, 1, 1))}, np.full((1, 1, 1, 1), 3.0))
    assert logits[0, 0] == pytest.approx(6.0, abs=0)


def test_forward_shape_mismatch():
    arch = small_arch()
    w = init_params(arch, 3)
    with pytest.raises(ValueError):
        forward(arch, w, None, np.zeros((2, 2, 5, 5)))
    bad_mask = identity_masks(arch)
    bad_mask[0] = np.ones((3, 2, 2, 2))
    with pytest.raises(ValueError):
        forward(arch, w, bad_mask, np.zeros((2, 2, 6, 6)))


def test_forward_deterministic():
    arch = small_arch()
    rng = np.random.default_rng(5)
    w = init_params(arch, 5)
    m = random_masks(arch, rng)
    x = rng.random((3, 2, 6, 6))
    a, _ = forward(arch, w, m, x)
    b, _ = forward(arch, w, m, x)
    assert np.array_equal(a, b)


# ------------------------------------------------------------------- loss

def test_uniform_logits_loss_is_log_classes():
    arch = small_arch()
    w = init_params(arch, 3)
    zeros = {idx: np.zeros(s) for idx, s in arch.param_shapes().items()}
    x = np.random.default_rng(2).random((6, 2, 6, 6))
    loss, _ = loss_and_grad_v(arch, w, zeros, x, np.arange(6) % 4)
    assert loss == pytest.approx(np.log(4), abs=1e-12)


def test_empty_batch_rejected():
    arch = small_arch()
    w = init_params(arch, 3)
    with pytest.raises(ValueError):
        loss_and_grad_v(arch, w, None, np.zeros((0, 2, 6, 6)), np.zeros(0, int))


def test_labels_out_of_range_rejected():
    arch = small_arch()
    w = init_params(arch, 3)
    x = np.zeros((2, 2, 6, 6))
    with pytest.raises(ValueError):
        loss_and_grad_v(arch, w, None, x, np.array([0, 4]))


def test_duplicated_batch_same_loss_and_grad():
    arch = small_arch()
    rng = np.random.default_rng(9)
    w = init_params(arch, 9)
    m = random_masks(arch, rng)
    x = rng.random((5, 2, 6, 6))
    y = rng.integers(0, 4, 5)
    loss1, g1 = loss_and_grad_v(arch, w, m, x, y)
    loss2, g2 = loss_and_grad_v(arch, w, m, np.concatenate([x, x]),
                                np.concatenate([y, y]))
    assert loss1 == pytest.approx(loss2, rel=1e-12)
    for idx in g1:
        np.testing.assert_allclose(g1[idx], g2[idx], rtol=0, atol=1e-14)


def test_grad_matches_finite_differences_two_layer_net():
    arch = small_arch()
    rng = np.random.default_rng(4)
    w = init_params(arch, 4)
    m = random_masks(arch, rng)
    x = rng.random((4, 2, 6, 6))
    y = rng.integers(0, 4, 4)
    v = {idx: w[idx] * m[idx] for idx in w}
    for idx in v:
        def fn(t, idx=idx):
            probe = dict(v)
            probe[idx] = t
            loss, grads = loss_and_grad_v(arch, probe, None, x, y)
            return loss, grads[idx]
        err = finite_diff_check(fn, v[idx], 1e-5, num_coords=30, seed=idx)
        assert err < 1e-5


# ----------------------------------------------------------------- grad_z

def test_grad_z_hand_example():
    out = grad_z(np.array([2.0, -3.0]), np.array([0.5, 1.0]),
                 np.array([0.1, -0.2]))
    np.testing.assert_array_equal(out, [1.0, 3.0])


def test_grad_z_zero_score_gives_zero():
    out = grad_z(np.array([1.0, 2.0]), np.array([1.0, 1.0]), np.zeros(2))
    assert not out.any()


def test_grad_z_zero_weight_gives_zero():
    out = grad_z(np.array([1.0, 2.0]), np.zeros(2), np.array([0.5, -0.5]))
    assert not out.any()


def test_grad_z_shape_mismatch():
    with pytest.raises(ValueError):
        grad_z(np.zeros(2), np.zeros(3), np.zeros(3))


# ------------------------------------------------------ finite differences

def test_finite_diff_quadratic():
    def fn(x):
        return (x ** 2).sum(), 2 * x
    assert finite_diff_check(fn, np.array([1.0, 2.0]), 1e-6) < 1e-6


def test_finite_diff_linear_is_exact():
    c = np.array([3.0, -1.0, 0.5])

    def fn(x):
        return (c * x).sum(), c
    assert finite_diff_check(fn, np.array([0.2, 0.4, -0.1]), 1e-4) < 1e-9


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda x: ((x ** 2).sum(), 2 * x), np.ones(2), 0.0)


def test_finite_diff_masked_cnn_loss():
    arch = small_arch()
    rng = np.random.default_rng(12)
    w = init_params(arch, 12)
    m = random_masks(arch, rng)
    x = rng.random((3, 2, 6, 6))
    y = rng.integers(0, 4, 3)
    v = {idx: w[idx] * m[idx] for idx in w}

    def fn(t):
        probe = dict(v)
        probe[0] = t
        loss, grads = loss_and_grad_v(arch, probe, None, x, y)
        return loss, grads[0]
    assert finite_diff_check(fn, v[0], 1e-5, num_coords=25) < 1e-5


# ------------------------------------------------------- gradient routing

def test_maxpool_routes_to_argmax_only():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    out, cache = _maxpool_forward(x, (2, 2), 2)
    np.testing.assert_array_equal(out[0, 0], [[5.0, 7.0], [13.0, 15.0]])
    gx = _maxpool_backward(np.ones_like(out), cache)
    expected = np.zeros((1, 1, 4, 4))
    expected[0, 0, 1, 1] = expected[0, 0, 1, 3] = 1.0
    expected[0, 0, 3, 1] = expected[0, 0, 3, 3] = 1.0
    np.testing.assert_array_equal(gx, expected)
    # inactive paths receive exactly zero
    assert np.abs(gx[expected == 0]).sum() == 0.0


def test_maxpool_tie_breaks_to_lowest_flat_index():
    x = np.full((1, 1, 2, 2), 3.0)
    out, cache = _maxpool_forward(x, (2, 2), 2)
    gx = _maxpool_backward(np.ones_like(out), cache)
    expected = np.zeros((1, 1, 2, 2))
    expected[0, 0, 0, 0] = 1.0
    np.testing.assert_array_equal(gx, expected)


def test_maxpool_overlapping_windows_accumulate():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 5.0  # center wins every 2x2/1 window... use stride 2 window 3
    out, cache = _maxpool_forward(x, (3, 3), 2)
    gx = _maxpool_backward(np.ones_like(out), cache)
    assert gx[0, 0, 1, 1] == 1.0


def test_relu_blocks_inactive_gradient():
    arch = ModelArch((flatten(), linear(2, 2), relu(), linear(2, 2)), (2,), 2)
    w = {1: np.array([[1.0, 0.0], [-1.0, 0.0]]), 3: np.eye(2)}
    x = np.array([[1.0, 5.0]])
    # second hidden unit is negative, so nothing may flow through row 1
    _, g = loss_and_grad_v(arch, w, None, x, np.array([0]))
    assert np.abs(g[1][1]).sum() == 0.0
    assert np.abs(g[3][:, 1]).sum() == 0.0
