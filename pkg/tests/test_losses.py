"""Imitation and adversarial loss checks."""

import numpy as np
import pytest

from triplane_mimic import autodiff as ad
from triplane_mimic.gradcheck import finite_diff_grad, max_rel_error
from triplane_mimic.losses import (DiscriminatorParams, LossConfig, disc_score,
                                   imitation_loss, l1_loss, nonsat_disc_loss,
                                   nonsat_gen_loss, perceptual_proxy,
                                   r1_penalty)


def _img(seed, side=16):
    return ad.Tensor(np.random.default_rng(seed).random((side, side, 3)))


# ------------------------------------------------------------- imitation


def test_l1_zero_on_identical():
    a = _img(0)
    assert l1_loss(a, ad.Tensor(a.data.copy())).data.item() == 0.0


def test_l1_matches_numpy():
    a, b = _img(1), _img(2)
    want = np.abs(a.data - b.data).mean()
    assert np.isclose(l1_loss(a, b).data.item(), want, atol=1e-15)


def test_l1_shape_mismatch():
    with pytest.raises(ValueError):
        l1_loss(_img(0, 8), _img(0, 16))


def test_perceptual_pseudometric():
    a, b = _img(3), _img(4)
    d_ab = perceptual_proxy(a, b).data.item()
    d_ba = perceptual_proxy(b, a).data.item()
    assert d_ab > 0
    assert np.isclose(d_ab, d_ba, atol=1e-14)
    assert perceptual_proxy(a, ad.Tensor(a.data.copy())).data.item() == 0.0


def test_perceptual_prefers_brightness_shift_over_checkerboard():
    # equal per-pixel L1 budget: a flat offset should cost less than
    # high-frequency structure because of the edge-strength channels
    base = ad.Tensor(np.full((16, 16, 3), 0.5))
    flat = ad.Tensor(base.data + 0.1)
    yy, xx = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
    checker = ad.Tensor(base.data + 0.1 * np.where((yy + xx) % 2 == 0, 1.0,
                                                   -1.0)[..., None])
    d_flat = perceptual_proxy(base, flat).data.item()
    d_check = perceptual_proxy(base, checker).data.item()
    assert d_check > 1.2 * d_flat


def test_perceptual_gradient_matches_finite_difference():
    rng = np.random.default_rng(5)
    a0 = rng.random((8, 8, 3))
    b = ad.Tensor(rng.random((8, 8, 3)))

    def run(v):
        a = ad.Tensor(v.reshape(8, 8, 3), requires_grad=True)
        return perceptual_proxy(a, b, levels=2), a

    loss, leaf = run(a0.ravel())
    analytic = ad.backward(loss)[leaf].data.ravel()
    with ad.no_grad():
        numeric = finite_diff_grad(lambda v: run(v)[0].data.item(), a0.ravel(),
                                   h=1e-6)
    assert max_rel_error(analytic, numeric) < 1e-4


def test_imitation_loss_weights():
    a, b = _img(6), _img(7)
    cfg = LossConfig(lambda_l1=2.0, lambda_perc=0.0)
    assert np.isclose(imitation_loss(a, b, cfg).data.item(),
                      2.0 * l1_loss(a, b).data.item(), atol=1e-14)
    cfg2 = LossConfig(lambda_l1=0.0, lambda_perc=3.0)
    assert np.isclose(imitation_loss(a, b, cfg2).data.item(),
                      3.0 * perceptual_proxy(a, b).data.item(), atol=1e-14)


# ----------------------------------------------------------- adversarial


def test_softplus_score_identity():
    # f(u) - f(-u) = u underpins the pairing of the two adversarial losses
    u = np.linspace(-8, 8, 33)
    f = ad.softplus(ad.Tensor(u)).data
    fm = ad.softplus(ad.Tensor(-u)).data
    assert np.allclose(f - fm, u, atol=1e-12)


def test_gen_loss_decreases_with_score():
    lo = nonsat_gen_loss([ad.Tensor(np.array(-2.0))]).data.item()
    hi = nonsat_gen_loss([ad.Tensor(np.array(2.0))]).data.item()
    assert lo > hi
    # exact values of the softplus objective
    assert np.isclose(lo, np.log1p(np.exp(2.0)), atol=1e-12)


def test_disc_loss_rewards_separation():
    good = nonsat_disc_loss([ad.Tensor(np.array(3.0))],
                            [ad.Tensor(np.array(-3.0))]).data.item()
    bad = nonsat_disc_loss([ad.Tensor(np.array(-3.0))],
                           [ad.Tensor(np.array(3.0))]).data.item()
    assert good < bad


def test_gen_loss_gradient_is_neg_sigmoid():
    s = ad.Tensor(np.array(0.7), requires_grad=True)
    g = ad.backward(nonsat_gen_loss([s]))[s].data
    assert np.isclose(g, -1.0 / (1.0 + np.exp(0.7)), atol=1e-12)


# --------------------------------------------------------- discriminator


def _small_disc(seed=0):
    return DiscriminatorParams.init(patch=8, widths=(4, 8), hidden=8, seed=seed)


def test_disc_score_scalar_and_deterministic():
    d = _small_disc()
    img = _img(8, 8)
    s1 = disc_score(d, img)
    s2 = disc_score(d, img)
    assert s1.shape == ()
    assert s1.data.item() == s2.data.item()


def test_disc_rejects_wrong_patch_size():
    with pytest.raises(ValueError):
        disc_score(_small_disc(), _img(0, 16))
    with pytest.raises(ValueError):
        DiscriminatorParams.init(patch=10, widths=(4, 8))


def test_disc_parameter_count():
    d = _small_disc()
    assert len(d.parameters()) == 2 * 2 + 4


def test_disc_gradient_matches_finite_difference():
    d = _small_disc(seed=2)
    img = _img(9, 8)
    k0 = d.kernels[0]
    base = k0.data.copy()

    def run(v):
        k0.data = v.reshape(base.shape)
        return disc_score(d, img)

    analytic = ad.backward(run(base.ravel()))[k0].data.ravel()
    with ad.no_grad():
        numeric = finite_diff_grad(lambda v: run(v).data.item(), base.ravel(),
                                   h=1e-6)
    k0.data = base
    assert max_rel_error(analytic, numeric) < 1e-4


# ------------------------------------------------------------------- R1


def test_r1_value_matches_finite_difference_gradient():
    d = _small_disc(seed=3)
    img = np.random.default_rng(10).random((8, 8, 3))
    lam = 0.7
    val = r1_penalty(d, [img], lam).data.item()
    with ad.no_grad():
        g = finite_diff_grad(
            lambda v: disc_score(d, ad.Tensor(v.reshape(8, 8, 3))).data.item(),
            img.ravel(), h=1e-6)
    assert abs(val - lam * np.sum(g * g)) < 1e-3 * max(val, 1e-12)


def test_r1_nonnegative_and_averages():
    d = _small_disc(seed=4)
    rng = np.random.default_rng(11)
    imgs = [rng.random((8, 8, 3)) for _ in range(3)]
    vals = [r1_penalty(d, [im], 1.0).data.item() for im in imgs]
    both = r1_penalty(d, imgs, 1.0).data.item()
    assert all(v >= 0 for v in vals)
    assert np.isclose(both, np.mean(vals), atol=1e-12)


def test_r1_parameter_gradient_matches_finite_difference():
    # double-backward: d(R1)/d(critic weights) against finite differences
    d = _small_disc(seed=5)
    img = np.random.default_rng(12).random((8, 8, 3))
    w = d.w2
    base = w.data.copy()

    def run(v):
        w.data = v.reshape(base.shape)
        return r1_penalty(d, [img], 1.0)

    analytic = ad.backward(run(base.ravel()))[w].data.ravel()
    # note: no no_grad here -- the penalty itself needs the tape
    numeric = finite_diff_grad(lambda v: run(v).data.item(), base.ravel(),
                               h=1e-5)
    w.data = base
    assert max_rel_error(analytic, numeric) < 1e-3
