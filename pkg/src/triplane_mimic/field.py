"""Optimizable student state: coarse planes + residual generator + decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .aware3d import Aware3DParams, aware3d_block
from .decoder import DecoderParams, decode
from .triplane import (StyleCode, SuperResolve3DParams, TriPlane, compose,
                       sample_triplane, super_resolve_3d)
from . import autodiff as ad


@dataclass
class StudentField:
    """The directly rendered 3D branch: everything gradient descent touches."""

    coarse: TriPlane
    s3d: SuperResolve3DParams
    decoder: DecoderParams
    style: StyleCode
    aware3d: Optional[Aware3DParams] = None

    def __post_init__(self):
        k = self.s3d.factor
        if k < 1:
            raise ValueError("upsample factor must be >= 1")

    @property
    def residual_resolution(self):
        return self.coarse.resolution * self.s3d.factor

    @classmethod
    def init(cls, channels=32, coarse_resolution=64, factor=2, d_w=16,
             hidden=64, depth=2, d_c=3, seed=0, dtype=np.float64,
             use_aware3d=False, plane_scale=0.1):
        rng = np.random.default_rng(seed)
        coarse = TriPlane.random(channels, coarse_resolution, rng,
                                 scale=plane_scale, dtype=dtype)
        s3d = SuperResolve3DParams.init(channels, factor, d_w, rng, dtype=dtype)
        dec = DecoderParams.init(channels, hidden, depth, d_c, rng, dtype=dtype)
        style = StyleCode(ad.Tensor((rng.standard_normal(d_w) * 0.1).astype(dtype),
                                    requires_grad=True))
        aw = Aware3DParams.init(channels, d_w, rng, dtype=dtype) if use_aware3d else None
        return cls(coarse=coarse, s3d=s3d, decoder=dec, style=style, aware3d=aw)

    def refined_coarse(self):
        """Coarse planes after the optional 3D-aware refinement stage."""
        if self.aware3d is None:
            return self.coarse
        refined = aware3d_block(self.coarse, self.style, self.aware3d)
        # residual refinement keeps the raw planes in the loop
        return TriPlane(self.coarse.p_xy + refined.p_xy,
                        self.coarse.p_yz + refined.p_yz,
                        self.coarse.p_zx + refined.p_zx)

    def residual(self, base=None):
        """Residual tri-plane from the 3D super-resolution module."""
        if base is None:
            base = self.refined_coarse()
        return super_resolve_3d(base, self.style, self.s3d)

    def query(self, points, residual=None):
        """(color (M,3), sigma (M,)) at world points; residual is optional."""
        feats = sample_triplane(self.refined_coarse(), points)
        if residual is not None:
            feats = compose(feats, sample_triplane(residual, points))
        return decode(self.decoder, feats)

    def parameters(self):
        params = list(self.coarse.planes)
        params += self.s3d.parameters()
        params += self.decoder.parameters()
        params.append(self.style.w)
        if self.aware3d is not None:
            params += self.aware3d.parameters()
        return params
