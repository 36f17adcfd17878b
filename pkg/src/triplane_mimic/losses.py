"""Imitation and adversarial objectives.

The imitation term pulls rendered patches toward teacher patches with an L1
plus a multi-scale structure proxy (pyramid of blurred images and their
gradient-magnitude maps).  The adversarial term is the non-saturating GAN
loss with an R1 gradient penalty on real patches; the penalty is computed
by differentiating through the discriminator's own backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .convops import blur_downsample2, conv2d

GRAD_MAG_EPS = 1e-8


@dataclass
class LossConfig:
    lambda_l1: float = 1.0
    lambda_perc: float = 1.0
    lambda_adv: float = 0.1
    lambda_r1: float = 1.0
    pyramid_levels: int = 3


def l1_loss(a, b):
    """Mean absolute error between two equally-shaped tensors."""
    if a.shape != b.shape:
        raise ValueError(f"l1_loss: shapes {a.shape} vs {b.shape}")
    return ad.reduce_mean(ad.absolute(a - b))


def _grad_magnitude(img):
    """(H, W, C) -> (H-1, W-1, C) finite-difference gradient magnitude."""
    dx = img[1:, 1:, :] - img[1:, :-1, :]
    dy = img[1:, 1:, :] - img[:-1, 1:, :]
    return ad.sqrt(ad.square(dx) + ad.square(dy) + GRAD_MAG_EPS)


def perceptual_proxy(a, b, levels=3):
    """Multi-scale L1 over blurred pyramids and their edge-strength maps.

    Zero iff the images agree at every scale; symmetric in its arguments.
    """
    if a.shape != b.shape:
        raise ValueError(f"perceptual_proxy: shapes {a.shape} vs {b.shape}")
    total = None
    for lvl in range(levels):
        term = (ad.reduce_mean(ad.absolute(a - b))
                + ad.reduce_mean(ad.absolute(_grad_magnitude(a)
                                             - _grad_magnitude(b))))
        total = term if total is None else total + term
        if lvl + 1 < levels:
            if a.shape[0] < 4 or a.shape[1] < 4:
                break
            a = blur_downsample2(a)
            b = blur_downsample2(b)
    return total * (1.0 / levels)


def imitation_loss(student, teacher, cfg: LossConfig):
    """Weighted L1 + structure proxy between a rendered and a target patch."""
    loss = l1_loss(student, teacher) * cfg.lambda_l1
    if cfg.lambda_perc:
        loss = loss + perceptual_proxy(student, teacher,
                                       cfg.pyramid_levels) * cfg.lambda_perc
    return loss


# ------------------------------------------------------------ discriminator


@dataclass
class DiscriminatorParams:
    """Small patch critic: three stride-2 convs, then two dense layers."""

    kernels: list       # [(C_out, C_in, 3, 3) tensors]
    biases: list        # [(C_out,) tensors]
    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor
    patch: int = 64

    @classmethod
    def init(cls, patch=64, widths=(16, 32, 64), hidden=64, seed=0,
             dtype=np.float64):
        if patch % (2 ** len(widths)) != 0:
            raise ValueError(f"patch {patch} not divisible by {2 ** len(widths)}")
        rng = np.random.default_rng(seed)

        def t(shape, fan_in):
            a = rng.standard_normal(shape) / np.sqrt(fan_in)
            return ad.Tensor(a.astype(dtype), requires_grad=True)

        kernels, biases = [], []
        c_in = 3
        for c_out in widths:
            kernels.append(t((c_out, c_in, 3, 3), c_in * 9))
            biases.append(ad.Tensor(np.zeros(c_out, dtype=dtype),
                                    requires_grad=True))
            c_in = c_out
        side = patch // (2 ** len(widths))
        flat = c_in * side * side
        return cls(kernels=kernels, biases=biases,
                   w1=t((hidden, flat), flat),
                   b1=ad.Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
                   w2=t((1, hidden), hidden),
                   b2=ad.Tensor(np.zeros(1, dtype=dtype), requires_grad=True),
                   patch=patch)

    def parameters(self):
        return (list(self.kernels) + list(self.biases)
                + [self.w1, self.b1, self.w2, self.b2])


def disc_score(params: DiscriminatorParams, img):
    """Scalar realism score for one (P, P, 3) patch."""
    if img.shape != (params.patch, params.patch, 3):
        raise ValueError(f"disc_score: expected ({params.patch},{params.patch},3), "
                         f"got {img.shape}")
    x = ad.permute(img, (2, 0, 1))
    for k, b in zip(params.kernels, params.biases):
        x = conv2d(x, k, stride=2)
        c = x.shape[0]
        x = x + ad.broadcast_to(ad.reshape(b, (c, 1, 1)), x.shape)
        x = ad.leaky_relu(x, 0.2)
    flat = ad.reshape(x, (int(np.prod(x.shape)), 1))
    h = ad.leaky_relu(ad.matmul(params.w1, flat)
                      + ad.reshape(params.b1, (-1, 1)), 0.2)
    out = ad.matmul(params.w2, h) + ad.reshape(params.b2, (1, 1))
    return ad.reshape(out, ())


def nonsat_gen_loss(fake_scores):
    """Generator side of the saturating-free GAN objective."""
    total = None
    for s in fake_scores:
        term = ad.softplus(ad.neg(s))
        total = term if total is None else total + term
    return total * (1.0 / len(fake_scores))


def nonsat_disc_loss(real_scores, fake_scores):
    """Critic side: push real scores up, fake scores down."""
    total = None
    for s in real_scores:
        term = ad.softplus(ad.neg(s))
        total = term if total is None else total + term
    for s in fake_scores:
        total = total + ad.softplus(s)
    return total * (1.0 / max(len(real_scores), 1))


def r1_penalty(params: DiscriminatorParams, real_images, lam):
    """lam * mean over patches of || d score / d pixels ||^2.

    real_images are plain arrays; the gradient graph is kept so the penalty
    itself is differentiable in the critic parameters.
    """
    total = None
    for img in real_images:
        x = ad.Tensor(np.asarray(img, dtype=np.float64), requires_grad=True)
        score = disc_score(params, x)
        g = ad.grad_of(score, [x], create_graph=True)[0]
        term = ad.reduce_sum(ad.square(g))
        total = term if total is None else total + term
    return total * (lam / len(real_images))
