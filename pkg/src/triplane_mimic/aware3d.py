"""3D-aware convolution block: axis pooling, alignment, cross-plane mixing.

With the storage convention P_xy[c,y,x], P_yz[c,z,y], P_zx[c,x,z], the
auxiliary stacks are (third coordinate pooled out, survivor placed on the
axis where it lives in the target plane):

    target xy (rows=y, cols=x):  pool P_yz over z -> varies with y -> rows
                                 pool P_zx over z -> varies with x -> cols
    target yz (rows=z, cols=y):  pool P_zx over x -> varies with z -> rows
                                 pool P_xy over x -> varies with y -> cols
    target zx (rows=x, cols=z):  pool P_xy over y -> varies with x -> rows
                                 pool P_yz over y -> varies with z -> cols

Channel order of each stack is cyclic: [target, next plane, previous plane],
i.e. [P_xy, P_yr, P_rx] for the xy target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .triplane import ModConvParams, TriPlane, modulated_conv2d

# per target: (aux plane attr, spatial axis to pool, layout) in stack order
_ALIGN = {
    "xy": (("p_yz", 0, "rows"), ("p_zx", 1, "cols")),
    "yz": (("p_zx", 0, "rows"), ("p_xy", 1, "cols")),
    "zx": (("p_xy", 0, "rows"), ("p_yz", 1, "cols")),
}


def axis_pool_repeat(plane, pooled_axis, target_layout):
    """Mean over one spatial axis of a (C, R, R) plane, broadcast back.

    pooled_axis: 0 pools rows (the surviving vector indexes columns),
    1 pools columns.  target_layout: 'rows' places the survivor along the
    output rows (constant per row), 'cols' along the output columns.
    """
    c, r, _ = plane.shape
    if pooled_axis not in (0, 1):
        raise ValueError(f"pooled_axis must be 0 or 1, got {pooled_axis}")
    v = ad.reduce_mean(plane, 1 + pooled_axis)          # (C, R)
    if target_layout == "rows":
        v = ad.reshape(v, (c, r, 1))
    elif target_layout == "cols":
        v = ad.reshape(v, (c, 1, r))
    else:
        raise ValueError(f"target_layout must be 'rows' or 'cols', got {target_layout!r}")
    return ad.broadcast_to(v, (c, r, r))


def aware3d_align(tp, target):
    """(3C, R, R) channel stack of the target plane and the two aligned,
    axis-pooled auxiliary planes."""
    if target not in _ALIGN:
        raise ValueError(f"target must be one of xy/yz/zx, got {target!r}")
    parts = [getattr(tp, f"p_{target}")]
    for attr, pool_axis, layout in _ALIGN[target]:
        parts.append(axis_pool_repeat(getattr(tp, attr), pool_axis, layout))
    return ad.concat(parts, 0)


@dataclass
class Aware3DParams:
    """Three independent modulated 3C->C convolutions, one per target plane."""

    conv_xy: ModConvParams
    conv_yz: ModConvParams
    conv_zx: ModConvParams

    @classmethod
    def init(cls, channels, d_w, rng, dtype=np.float64):
        return cls(*[ModConvParams.init(3 * channels, channels, d_w, rng, dtype=dtype)
                     for _ in range(3)])

    def parameters(self):
        return (self.conv_xy.parameters() + self.conv_yz.parameters()
                + self.conv_zx.parameters())


def aware3d_block(tp, style, params, lrelu_alpha=0.2):
    """One 3D-aware refinement: per plane, align -> modulated conv -> lrelu."""
    outs = []
    for target, conv in (("xy", params.conv_xy), ("yz", params.conv_yz),
                         ("zx", params.conv_zx)):
        stacked = aware3d_align(tp, target)
        outs.append(ad.leaky_relu(modulated_conv2d(stacked, conv, style), lrelu_alpha))
    return TriPlane(*outs)
