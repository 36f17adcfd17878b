"""Tri-plane field representation and coarse+residual composition.

Plane storage convention (fixed across the whole toolkit):

    P_xy[c, y, x]   P_yz[c, z, y]   P_zx[c, x, z]

i.e. each plane is (C, R, R) with the *second* named coordinate as rows and
the first as columns.  Features live on the unit cube [-1, 1]^3; texel
centers sit at (i + 0.5) / R mapped to [-1, 1], and lookups outside the
cube clamp to the boundary texels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .convops import conv2d, upsample_nearest


@dataclass
class TriPlane:
    """Three axis-aligned (C, R, R) feature planes."""

    p_xy: ad.Tensor
    p_yz: ad.Tensor
    p_zx: ad.Tensor

    def __post_init__(self):
        shapes = {self.p_xy.shape, self.p_yz.shape, self.p_zx.shape}
        if len(shapes) != 1:
            raise ValueError(f"planes disagree in shape: {shapes}")
        if len(self.p_xy.shape) != 3 or self.p_xy.shape[1] != self.p_xy.shape[2]:
            raise ValueError(f"plane shape must be (C, R, R), got {self.p_xy.shape}")

    @property
    def channels(self):
        return self.p_xy.shape[0]

    @property
    def resolution(self):
        return self.p_xy.shape[1]

    @property
    def planes(self):
        return (self.p_xy, self.p_yz, self.p_zx)

    @classmethod
    def zeros(cls, channels, resolution, dtype=np.float64, requires_grad=False):
        return cls(*[ad.Tensor(np.zeros((channels, resolution, resolution), dtype=dtype),
                               requires_grad=requires_grad) for _ in range(3)])

    @classmethod
    def random(cls, channels, resolution, rng, scale=0.1, dtype=np.float64,
               requires_grad=True):
        return cls(*[ad.Tensor((scale * rng.standard_normal(
            (channels, resolution, resolution))).astype(dtype),
            requires_grad=requires_grad) for _ in range(3)])


@dataclass
class StyleCode:
    """Conditioning vector for the modulated convolutions."""

    w: ad.Tensor

    @property
    def dim(self):
        return self.w.shape[0]


def _bilinear_corners(coord, r):
    """Texel-center bilinear setup for one coordinate array in [-1, 1].

    Returns integer corner indices (i0, i1) and the i1-side weight.
    """
    u = (np.asarray(coord) + 1.0) * 0.5 * r - 0.5
    u = np.clip(u, 0.0, r - 1.0)
    i0 = np.floor(u).astype(np.intp)
    i0 = np.minimum(i0, r - 2) if r > 1 else np.zeros_like(i0)
    i1 = np.minimum(i0 + 1, r - 1)
    return i0, i1, u - i0


def _sample_plane(plane, a, b):
    """Bilinear lookup of plane P_ab at columns=a, rows=b -> (C, N)."""
    c, r, _ = plane.shape
    i0, i1, wa = _bilinear_corners(a, r)
    j0, j1, wb = _bilinear_corners(b, r)
    flat = ad.reshape(plane, (c, r * r))
    out = None
    for jj, fb in ((j0, 1.0 - wb), (j1, wb)):
        for ii, fa in ((i0, 1.0 - wa), (i1, wa)):
            wgt = (fb * fa)[None, :]
            term = ad.gather_cols(flat, jj * r + ii) * ad.broadcast_to(
                ad.Tensor(wgt.astype(str(plane.dtype))), (c, len(i0)))
            out = term if out is None else out + term
    return out


def sample_triplane(tp, points):
    """Field features at (N, 3) points: sum of the three plane projections.

    Points outside the unit cube clamp to the boundary; sample positions are
    constants on the tape (gradients flow to plane values only).
    """
    pts = points.data if isinstance(points, ad.Tensor) else np.asarray(points)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    feat = (_sample_plane(tp.p_xy, x, y)
            + _sample_plane(tp.p_yz, y, z)
            + _sample_plane(tp.p_zx, z, x))
    return ad.permute(feat, (1, 0))


def compose(coarse_f, residual_f):
    """f = f_coarse + f_residual (the detailed intermediate feature)."""
    return coarse_f + residual_f


@dataclass
class ModConvParams:
    """Style-modulated 3x3 convolution parameters."""

    kernel: ad.Tensor          # (C_out, C_in, 3, 3)
    affine_w: ad.Tensor        # (C_in, d_w)
    affine_b: ad.Tensor        # (C_in,)
    demodulate: bool = True
    eps: float = 1e-8

    @classmethod
    def init(cls, c_in, c_out, d_w, rng, dtype=np.float64, demodulate=True):
        fan_in = c_in * 9
        kernel = (rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(fan_in)).astype(dtype)
        aff_w = (rng.standard_normal((c_in, d_w)) * 0.01).astype(dtype)
        aff_b = np.ones(c_in, dtype=dtype)
        return cls(ad.Tensor(kernel, requires_grad=True),
                   ad.Tensor(aff_w, requires_grad=True),
                   ad.Tensor(aff_b, requires_grad=True),
                   demodulate=demodulate)

    def parameters(self):
        return [self.kernel, self.affine_w, self.affine_b]


def modulated_conv2d(x, p, style):
    """StyleGAN2-style modulated 3x3 convolution with reflect padding.

    x: (C_in, R, R).  The kernel is scaled per input channel by
    s = affine(style.w); with demodulation each output filter is rescaled to
    unit norm (plus eps) afterwards.
    """
    c_out, c_in, k, _ = p.kernel.shape
    if x.shape[0] != c_in:
        raise ValueError(f"modulated_conv2d: {x.shape[0]} channels vs kernel {c_in}")
    s = ad.matmul(ad.reshape(p.affine_w, (c_in, style.dim)),
                  ad.reshape(style.w, (style.dim, 1)))
    s = ad.reshape(s, (c_in,)) + p.affine_b
    kmod = p.kernel * ad.broadcast_to(ad.reshape(s, (1, c_in, 1, 1)), p.kernel.shape)
    if p.demodulate:
        norm = ad.reduce_sum(ad.square(kmod), (1, 2, 3), keepdims=True) + p.eps
        kmod = kmod * ad.broadcast_to(ad.div(1.0, ad.sqrt(norm)), kmod.shape)
    return conv2d(x, kmod)


@dataclass
class SuperResolve3DParams:
    """Residual tri-plane generator: log2(factor) upsample+modconv blocks.

    One parameter set serves all three planes (a plane is just an image to
    the convolution).
    """

    blocks: list = field(default_factory=list)   # list of ModConvParams
    factor: int = 2

    @classmethod
    def init(cls, channels, factor, d_w, rng, dtype=np.float64):
        if factor < 2 or factor & (factor - 1):
            raise ValueError(f"upsample factor must be a power of two >= 2, got {factor}")
        n = int(np.log2(factor))
        blocks = [ModConvParams.init(channels, channels, d_w, rng, dtype=dtype)
                  for _ in range(n)]
        return cls(blocks=blocks, factor=factor)

    def parameters(self):
        return [t for b in self.blocks for t in b.parameters()]


def super_resolve_3d(coarse, style, params, lrelu_alpha=0.2):
    """Residual TriPlane at factor * R_coarse from the coarse planes.

    Each block runs nearest-upsample x2 -> modulated conv -> leaky ReLU, per
    plane with shared weights.
    """
    outs = []
    for plane in coarse.planes:
        x = plane
        for block in params.blocks:
            x = upsample_nearest(x, 2)
            x = ad.leaky_relu(modulated_conv2d(x, block, style), lrelu_alpha)
        outs.append(x)
    return TriPlane(*outs)
