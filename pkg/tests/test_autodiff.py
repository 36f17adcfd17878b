import numpy as np
import pytest

from triplane_mimic import autodiff as ad
from triplane_mimic import gradcheck


def test_softplus_at_zero():
    assert ad.softplus(ad.Tensor(0.0)).item() == pytest.approx(np.log(2.0), rel=1e-12)


def test_add_values():
    out = ad.Tensor([1.0, 2.0]) + ad.Tensor([3.0, 4.0])
    assert np.allclose(out.data, [4.0, 6.0])


def test_mul_grad_product_rule():
    a = ad.Tensor(3.0, requires_grad=True)
    b = ad.Tensor(5.0, requires_grad=True)
    (a * b).backward()
    assert a.grad == pytest.approx(5.0)
    assert b.grad == pytest.approx(3.0)


def test_elementwise_shape_mismatch_names_shapes():
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        ad.add(ad.Tensor([1.0, 2.0]), ad.Tensor([1.0, 2.0, 3.0]))


def test_div_by_zero_errors():
    with pytest.raises(ZeroDivisionError):
        ad.div(ad.Tensor([1.0]), ad.Tensor([0.0]))


def test_matmul_identity():
    m = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(ad.Tensor(np.eye(2)), m)
    assert np.array_equal(out.data, m.data)


def test_matmul_values():
    out = ad.matmul(ad.Tensor([[1.0, 2.0]]), ad.Tensor([[3.0], [4.0]]))
    assert out.data.shape == (1, 1)
    assert out.item() == pytest.approx(11.0)


def test_matmul_grad_vs_finite_differences():
    rng = np.random.default_rng(1)
    b = ad.Tensor(rng.standard_normal((5, 3)))
    err = gradcheck.check_scalar_fn(
        lambda x: ad.reduce_sum(ad.square(ad.matmul(x, b))),
        rng.standard_normal((4, 5)))
    assert err < 1e-6


def test_matmul_dim_mismatch():
    with pytest.raises(ValueError, match="inner dims"):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 2))))


def test_mean_value():
    assert ad.reduce_mean(ad.Tensor([2.0, 4.0, 6.0]), 0).item() == pytest.approx(4.0)


def test_sum_backward_broadcasts_ones():
    x = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ad.reduce_sum(x).backward()
    assert np.array_equal(x.grad, np.ones(3))


def test_mean_constant_invariance():
    plane = ad.Tensor(np.full((4, 4), 2.5))
    pooled = ad.reduce_mean(plane, 0, keepdims=True)
    repeated = ad.broadcast_to(pooled, (4, 4))
    assert np.allclose(repeated.data, 2.5)


def test_axis_out_of_range():
    with pytest.raises(ValueError, match="axis"):
        ad.reduce_sum(ad.Tensor(np.ones((2, 2))), 5)


def test_concat_shape():
    out = ad.concat([ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 5)))], 1)
    assert out.shape == (2, 8)


def test_concat_extent_mismatch():
    with pytest.raises(ValueError, match="concat"):
        ad.concat([ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((3, 3)))], 1)


def test_permute_roundtrip():
    x = np.arange(24.0).reshape(2, 3, 4)
    out = ad.permute(ad.permute(ad.Tensor(x), (2, 0, 1)), (1, 2, 0))
    assert np.array_equal(out.data, x)


def test_concat_backward_splits_upstream():
    a = ad.Tensor(np.ones((2, 3)), requires_grad=True)
    b = ad.Tensor(np.ones((2, 5)), requires_grad=True)
    out = ad.concat([a, b], 1)
    up = np.arange(16.0).reshape(2, 8)
    ad.reduce_sum(out * ad.Tensor(up)).backward()
    assert np.array_equal(a.grad, up[:, :3])
    assert np.array_equal(b.grad, up[:, 3:])


def test_backward_of_constants_is_empty():
    loss = ad.reduce_sum(ad.Tensor([1.0, 2.0]))
    assert ad.backward(loss) == {}


def test_backward_nonscalar_root_errors():
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.Tensor([1.0, 2.0], requires_grad=True))


def test_backward_determinism():
    rng = np.random.default_rng(2)
    x = ad.Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    loss = ad.reduce_sum(ad.square(ad.sigmoid(ad.matmul(x, x))))
    g1 = ad.grad_of(loss, [x])[0].data
    g2 = ad.grad_of(loss, [x])[0].data
    assert np.array_equal(g1, g2)


def test_detach_blocks_gradient():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    y = ad.Tensor([3.0, 4.0], requires_grad=True)
    gmap = ad.backward(ad.reduce_sum(x.detach() * y))
    assert x not in gmap
    assert np.array_equal(gmap[y].data, x.data)


def test_detach_values_bitwise_equal():
    x = ad.Tensor(np.random.default_rng(3).standard_normal(7))
    assert np.array_equal(x.detach().data, x.data)


def test_stop_gradient_through_loss():
    # teacher-style tensor under sg receives zero gradient
    teacher = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    student = ad.Tensor([1.5, 1.5, 1.5], requires_grad=True)
    diff = student - teacher.detach()
    ad.reduce_sum(ad.square(diff)).backward()
    assert teacher.grad is None
    assert student.grad is not None


@pytest.mark.parametrize("seed", range(20))
def test_all_ops_finite_differences(seed):
    results = gradcheck.op_suite(seed)
    worst = max(err for _, err in results)
    assert worst < 1e-5, results


def test_gradcheck_self_test_sign_flip():
    results = gradcheck.op_suite(0, sign_flip=True)
    assert max(err for _, err in results) > 1e-2


def test_backward_linearity():
    rng = np.random.default_rng(4)
    x = ad.Tensor(rng.standard_normal((3, 3)), requires_grad=True)

    def l1(t):
        return ad.reduce_sum(ad.square(t))

    def l2(t):
        return ad.reduce_sum(ad.exp(t * ad.Tensor(np.full((3, 3), 0.3))))

    alpha, beta = 0.7, -1.3
    g_combined = ad.grad_of(alpha * l1(x) + beta * l2(x), [x])[0].data
    g1 = ad.grad_of(l1(x), [x])[0].data
    g2 = ad.grad_of(l2(x), [x])[0].data
    assert np.max(np.abs(g_combined - (alpha * g1 + beta * g2))) < 1e-12


def test_max_ties_route_to_lowest_index():
    x = ad.Tensor([[1.0, 3.0, 3.0]], requires_grad=True)
    ad.reduce_sum(ad.reduce_max(x, 1)).backward()
    assert np.array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_second_order_gradient():
    # d/dx of (dy/dx) for y = x^3: second derivative 6x
    x = ad.Tensor(2.0, requires_grad=True)
    y = ad.square(x) * x
    (gx,) = ad.grad_of(y, [x], create_graph=True)
    (ggx,) = ad.grad_of(gx, [x])
    assert ggx.item() == pytest.approx(12.0, rel=1e-10)


def test_float32_option():
    x = ad.Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    out = ad.reduce_sum(ad.square(x * 2.0))
    assert out.dtype == np.float32
    out.backward()
    assert x.grad.dtype == np.float32
