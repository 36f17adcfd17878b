import numpy as np
import pytest

from triplane_mimic import autodiff as ad
from triplane_mimic import gradcheck
from triplane_mimic.aware3d import (Aware3DParams, aware3d_align, aware3d_block,
                                    axis_pool_repeat)
from triplane_mimic.convops import conv2d
from triplane_mimic.triplane import StyleCode, TriPlane


def test_pool_constant_plane():
    plane = ad.Tensor(np.full((2, 4, 4), 3.25))
    out = axis_pool_repeat(plane, 0, "rows")
    assert np.allclose(out.data, 3.25)


def test_pool_row_mean():
    data = np.zeros((1, 2, 2))
    data[0, 1, :] = 2.0
    out = axis_pool_repeat(ad.Tensor(data), 0, "cols")
    # pooling the row axis averages [0, 2] -> all ones
    assert np.allclose(out.data, 1.0)


def test_pool_idempotent():
    # survivor kept on its own axis: repeated pooling is a fixed point
    rng = np.random.default_rng(0)
    plane = ad.Tensor(rng.standard_normal((3, 5, 5)))
    once = axis_pool_repeat(plane, 1, "rows")
    twice = axis_pool_repeat(once, 1, "rows")
    assert np.max(np.abs(once.data - twice.data)) < 1e-12


def test_align_shape_and_zero():
    tp = TriPlane.zeros(4, 8)
    out = aware3d_align(tp, "xy")
    assert out.shape == (12, 8, 8)
    assert np.array_equal(out.data, np.zeros((12, 8, 8)))


def column_members_oracle(target, j, i, r):
    """All 3D texel coordinates in the axis column behind target texel (j, i).

    With storage P_xy[c,y,x], P_yz[c,z,y], P_zx[c,x,z]:  for target xy the
    texel (j=y, i=x) covers the column {(x, y, z) : z free}, etc.
    """
    if target == "xy":
        return {(i, j, z) for z in range(r)}
    if target == "yz":
        return {(x, i, j) for x in range(r)}
    return {(j, y, i) for y in range(r)}


@pytest.mark.parametrize("target", ["xy", "yz", "zx"])
def test_alignment_brute_force_oracle(target):
    """A hot texel must show up exactly in the aligned channels of target
    texels whose 3D column contains it, with weight 1/R (mean pooling)."""
    r = 4
    for src_plane in ("xy", "yz", "zx"):
        for j0 in range(r):
            for i0 in range(r):
                tp = TriPlane.zeros(1, r)
                getattr(tp, f"p_{src_plane}").data[0, j0, i0] = 1.0
                stack = aware3d_align(tp, target).data   # (3, r, r)
                # 3D texels covered by the hot source texel's own column
                src_members = column_members_oracle(src_plane, j0, i0, r)
                for j in range(r):
                    for i in range(r):
                        tgt_members = column_members_oracle(target, j, i, r)
                        overlap = len(src_members & tgt_members)
                        got = stack[:, j, i]
                        if src_plane == target:
                            expect = 1.0 if (j, i) == (j0, i0) else 0.0
                            assert got[0] == expect
                            assert np.all(got[1:] == 0.0)
                        else:
                            # aux channel value is 1/R iff the columns meet
                            assert got[0] == 0.0
                            nz = got[np.nonzero(got)]
                            if overlap:
                                assert len(nz) == 1 and nz[0] == pytest.approx(1.0 / r)
                            else:
                                assert len(nz) == 0


def test_block_shape_preserved_and_finite():
    rng = np.random.default_rng(1)
    tp = TriPlane.random(4, 8, rng)
    style = StyleCode(ad.Tensor(rng.standard_normal(5)))
    params = Aware3DParams.init(4, 5, rng)
    out = aware3d_block(tp, style, params)
    for plane in out.planes:
        assert plane.shape == (4, 8, 8)
        assert np.all(np.isfinite(plane.data))


def test_block_zero_kernels_zero_output():
    rng = np.random.default_rng(2)
    tp = TriPlane.random(4, 8, rng)
    style = StyleCode(ad.Tensor(rng.standard_normal(5)))
    params = Aware3DParams.init(4, 5, rng)
    for conv in (params.conv_xy, params.conv_yz, params.conv_zx):
        conv.kernel.data[:] = 0.0
    out = aware3d_block(tp, style, params)
    for plane in out.planes:
        assert np.array_equal(plane.data, np.zeros_like(plane.data))


def test_cross_plane_sensitivity_vs_plain_conv():
    """Perturbing P_yz must change the xy output of the 3D-aware block; a
    plain per-plane conv control must not."""
    rng = np.random.default_rng(3)
    tp = TriPlane.random(4, 8, rng)
    style = StyleCode(ad.Tensor(rng.standard_normal(5)))
    params = Aware3DParams.init(4, 5, rng)

    base = aware3d_block(tp, style, params).p_xy.data.copy()
    tp.p_yz.data[0, 3, 3] += 0.5
    bumped = aware3d_block(tp, style, params).p_xy.data
    assert np.max(np.abs(bumped - base)) > 1e-9

    # control: plain 2D conv on the xy plane alone sees no change
    kernel = ad.Tensor(rng.standard_normal((4, 4, 3, 3)))
    plain_base = conv2d(tp.p_xy, kernel).data.copy()
    tp.p_yz.data[0, 3, 3] += 0.5
    plain_bumped = conv2d(tp.p_xy, kernel).data
    assert np.array_equal(plain_base, plain_bumped)


@pytest.mark.parametrize("src", ["p_xy", "p_yz", "p_zx"])
def test_jacobian_nonzero_for_every_input_plane(src):
    rng = np.random.default_rng(4)
    tp = TriPlane.random(3, 4, rng)
    style = StyleCode(ad.Tensor(rng.standard_normal(4)))
    params = Aware3DParams.init(3, 4, rng)
    plane = getattr(tp, src)
    plane.requires_grad = True
    out = aware3d_block(tp, style, params)
    loss = ad.reduce_sum(ad.square(out.p_xy)) + ad.reduce_sum(ad.square(out.p_yz))
    (g,) = ad.grad_of(loss, [plane])
    assert np.any(g.data != 0)


def test_block_gradient_vs_finite_differences():
    rng = np.random.default_rng(5)
    tp = TriPlane.random(2, 4, rng)
    style = StyleCode(ad.Tensor(rng.standard_normal(3)))
    params = Aware3DParams.init(2, 3, rng)
    probe = ad.Tensor(rng.standard_normal((2, 4, 4)))

    def build(leaf):
        tp2 = TriPlane(leaf, tp.p_yz, tp.p_zx)
        return ad.reduce_sum(aware3d_block(tp2, style, params).p_yz * probe)

    assert gradcheck.check_scalar_fn(build, tp.p_xy.data, h=1e-5) < 1e-5
