"""Analytic multiview image source with controllable per-view inconsistency.

The teacher stands in for a high-quality but imperfectly 3D-consistent image
generator: a closed-form density/albedo scene rendered densely, then
perturbed per view in a seeded, deterministic way.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .renderer import CameraPose, PatchSpec, generate_rays

FOREGROUND_ALPHA = 0.05


@dataclass
class OracleScene:
    """Closed-form density and albedo on the unit cube."""

    kind: str = "sphere"                 # sphere | blobs | box
    radius: float = 0.55
    density: float = 40.0
    edge_softness: float = 0.08
    bg_color: tuple = (1.0, 1.0, 1.0)

    def sigma(self, pts):
        x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
        if self.kind == "sphere":
            r = np.sqrt(x * x + y * y + z * z)
            occ = np.clip((self.radius - r) / self.edge_softness + 0.5, 0.0, 1.0)
            return self.density * occ
        if self.kind == "blobs":
            d1 = (x - 0.35) ** 2 + y ** 2 + z ** 2
            d2 = (x + 0.35) ** 2 + (y - 0.2) ** 2 + z ** 2
            return self.density * (np.exp(-d1 / 0.05) + np.exp(-d2 / 0.08))
        if self.kind == "box":
            a = self.radius
            inside = np.min(a - np.abs(pts), axis=-1)
            occ = np.clip(inside / self.edge_softness + 0.5, 0.0, 1.0)
            return self.density * occ
        raise ValueError(f"unknown scene kind {self.kind!r}")

    def albedo(self, pts):
        x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
        if self.kind == "blobs":
            d1 = (x - 0.35) ** 2 + y ** 2 + z ** 2
            d2 = (x + 0.35) ** 2 + (y - 0.2) ** 2 + z ** 2
            w1 = np.exp(-d1 / 0.05) / (np.exp(-d1 / 0.05) + np.exp(-d2 / 0.08) + 1e-12)
            col = np.stack([0.9 * w1 + 0.1, 0.3 * np.ones_like(w1),
                            0.9 * (1 - w1) + 0.1], axis=-1)
            return col
        # procedural stripes; smooth so the student can actually match them
        r = np.stack([0.55 + 0.35 * np.sin(6.0 * x + 2.0 * y),
                      0.55 + 0.35 * np.sin(5.0 * y + 1.0),
                      0.55 + 0.35 * np.sin(6.0 * z - 2.0 * x)], axis=-1)
        return np.clip(r, 0.0, 1.0)


@dataclass
class InconsistencySpec:
    """Per-view deterministic perturbation emulating texture flicker."""

    mode: str = "none"          # none | texture_jitter | warp
    amplitude: float = 0.0
    seed: int = 0

    def view_seed(self, cam: CameraPose) -> int:
        """Stable per-view seed from the quantized pose."""
        key = np.round(np.concatenate([cam.rotation.ravel(), cam.translation]),
                       6).tobytes()
        return (self.seed ^ zlib.crc32(key)) & 0x7FFFFFFF


def oracle_render(scene: OracleScene, cam: CameraPose, res: int, samples=256,
                  patch: PatchSpec | None = None, return_alpha=False):
    """Reference render: dense midpoint sampling of the analytic fields.

    Deterministic; returns (res, res, 3) float image in [0, 1] (or the
    requested patch), optionally with the per-pixel alpha.
    """
    patch = patch or PatchSpec.full_frame(res)
    rays = generate_rays(cam, patch)
    n = rays.count
    img = np.tile(np.asarray(scene.bg_color, dtype=np.float64), (n, 1))
    alpha = np.zeros(n)
    hit = np.flatnonzero(rays.hit)
    if len(hit):
        near, far = rays.near[hit], rays.far[hit]
        frac = (np.arange(samples) + 0.5) / samples
        t = near[:, None] + (far - near)[:, None] * frac
        delta = ((far - near) / samples)[:, None]
        pts = rays.origins[hit, None, :] + t[..., None] * rays.directions[hit, None, :]
        sig = scene.sigma(pts)
        col = scene.albedo(pts)
        tau = sig * delta
        cum = np.cumsum(tau, axis=1)
        trans = np.exp(-(cum - tau))
        w = trans * (1.0 - np.exp(-tau))
        t_end = np.exp(-cum[:, -1])
        pix = (w[..., None] * col).sum(axis=1)
        img[hit] = pix + t_end[:, None] * np.asarray(scene.bg_color)
        alpha[hit] = 1.0 - t_end
    img = img.reshape(patch.side, patch.side, 3)
    alpha = alpha.reshape(patch.side, patch.side)
    if return_alpha:
        return img, alpha
    return img


def _smooth_noise(shape, rng, sigma=2.0):
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma)
    return noise / max(np.abs(noise).max(), 1e-12)


def teacher_image(scene: OracleScene, cam: CameraPose, res: int,
                  inc: InconsistencySpec, samples=256,
                  patch: PatchSpec | None = None):
    """Oracle render plus the per-view perturbation (the pseudo-2D branch).

    With amplitude 0 (or mode 'none') this is bitwise the oracle render.
    Perturbations touch foreground pixels only; background pixels stay at
    the exact background color in every view.
    """
    img, alpha = oracle_render(scene, cam, res, samples=samples, patch=patch,
                               return_alpha=True)
    if inc.mode == "none" or inc.amplitude == 0.0:
        return img
    fg = alpha > FOREGROUND_ALPHA
    rng = np.random.default_rng(inc.view_seed(cam))
    if inc.mode == "texture_jitter":
        noise = np.stack([_smooth_noise(img.shape[:2], rng) for _ in range(3)], axis=-1)
        out = img + inc.amplitude * noise * fg[..., None]
        return np.clip(out, 0.0, 1.0)
    if inc.mode == "warp":
        h, w = img.shape[:2]
        dx = inc.amplitude * _smooth_noise((h, w), rng, sigma=4.0)
        dy = inc.amplitude * _smooth_noise((h, w), rng, sigma=4.0)
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        coords = [yy + dy, xx + dx]
        warped = np.stack([ndimage.map_coordinates(img[..., c], coords, order=1,
                                                   mode="nearest")
                           for c in range(3)], axis=-1)
        return np.clip(np.where(fg[..., None], warped, img), 0.0, 1.0)
    raise ValueError(f"unknown inconsistency mode {inc.mode!r}")
