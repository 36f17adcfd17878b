"""Camera rays, hierarchical sampling, and differentiable volume compositing.

Camera model: pinhole, camera looks down its local -z axis, +x right,
+y up; a pixel (u, v) maps to the camera-space direction
((u - cx) / focal, -(v - cy) / focal, -1).  The scene lives in the unit
cube [-1, 1]^3; rays missing the cube composite straight to background.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import autodiff as ad

IMPORTANCE_EPS = 1e-5      # uniform floor on the importance PDF
MERGE_TOL = 1e-12          # duplicate collapse / strict-sort enforcement
DEPTH_VALID_MIN_WEIGHT = 0.01


@dataclass
class CameraPose:
    """Extrinsics (world-from-camera rotation, camera position) + intrinsics."""

    rotation: np.ndarray       # (3, 3), world-from-camera
    translation: np.ndarray    # (3,), camera center in world units
    focal: float               # pixels
    principal: np.ndarray      # (2,) pixels (cx, cy)
    image_size: int            # F, pixels

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        self.principal = np.asarray(self.principal, dtype=np.float64)
        rtr = self.rotation.T @ self.rotation
        if not np.allclose(rtr, np.eye(3), atol=1e-8):
            raise ValueError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(self.rotation), 1.0, atol=1e-8):
            raise ValueError("rotation determinant must be +1")
        if self.focal <= 0:
            raise ValueError("focal length must be positive")


@dataclass
class PatchSpec:
    """Axis-aligned square pixel window inside an F x F frame."""

    u0: int
    v0: int
    side: int
    full: int

    def __post_init__(self):
        if not (0 < self.side <= self.full):
            raise ValueError(f"patch side {self.side} invalid for frame {self.full}")
        if not (0 <= self.u0 <= self.full - self.side
                and 0 <= self.v0 <= self.full - self.side):
            raise ValueError(f"patch origin ({self.u0},{self.v0}) outside frame")

    @classmethod
    def full_frame(cls, res):
        return cls(0, 0, res, res)


@dataclass
class RayBatch:
    """Per-pixel rays with optional sorted sample depths.

    depths are strictly increasing within [near, far] per ray; spacings are
    forward differences with the final spacing closed against far.
    """

    origins: np.ndarray            # (N, 3)
    directions: np.ndarray         # (N, 3) unit
    near: np.ndarray               # (N,)
    far: np.ndarray                # (N,)
    hit: np.ndarray                # (N,) bool, ray meets the unit cube
    depths: Optional[np.ndarray] = None     # (N, S)

    @property
    def count(self):
        return self.origins.shape[0]

    def spacings(self):
        if self.depths is None:
            raise ValueError("depths unset")
        d = np.diff(self.depths, axis=1)
        last = (self.far[:, None] - self.depths[:, -1:])
        return np.maximum(np.concatenate([d, last], axis=1), 0.0)

    def points(self):
        """(N, S, 3) world sample positions (constants on the tape)."""
        return (self.origins[:, None, :]
                + self.depths[..., None] * self.directions[:, None, :])


def orbit_pose(yaw, pitch, radius, image_size, focal=None):
    """Camera on a sphere of the given radius, looking at the origin.

    yaw rotates about +y (yaw=0 places the camera on +z), pitch lifts it
    toward +y.  yaw = pitch = 0 gives the identity rotation.  The default
    focal fits a ~1.2-radius ball in frame at the given distance.
    """
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    pos = radius * np.array([sy * cp, sp, cy * cp])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
    rot = ry @ rx
    if focal is None:
        focal = 0.5 * image_size * radius / 1.2
    return CameraPose(rotation=rot, translation=pos, focal=focal,
                      principal=np.array([image_size / 2.0, image_size / 2.0]),
                      image_size=image_size)


def generate_rays(cam: CameraPose, patch: PatchSpec) -> RayBatch:
    """One unit-norm ray per pixel center of the patch, row-major."""
    us = np.arange(patch.u0, patch.u0 + patch.side) + 0.5
    vs = np.arange(patch.v0, patch.v0 + patch.side) + 0.5
    vv, uu = np.meshgrid(vs, us, indexing="ij")
    dirs_cam = np.stack([(uu - cam.principal[0]) / cam.focal,
                         -(vv - cam.principal[1]) / cam.focal,
                         -np.ones_like(uu)], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ cam.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.translation, dirs.shape).copy()
    near, far, hit = _ray_aabb(origins, dirs)
    return RayBatch(origins=origins, directions=dirs, near=near, far=far, hit=hit)


def _ray_aabb(origins, dirs, lo=-1.0, hi=1.0):
    """Slab intersection with the unit cube; entry clamped to t >= 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t0 = (lo - origins) * inv
    t1 = (hi - origins) * inv
    # axis-parallel rays: +-inf slabs do the right thing under min/max
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    near = np.maximum(tmin, 0.0)
    hit = tmax > near
    return near, np.maximum(tmax, near), hit


def stratified_sample(rays: RayBatch, near, far, s1: int, rng) -> RayBatch:
    """One uniform draw per equal-width depth bin, per ray."""
    if s1 < 1:
        raise ValueError("need at least one stratified sample")
    near = np.broadcast_to(np.asarray(near, dtype=np.float64), (rays.count,))
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (rays.count,))
    if np.any(far < near):
        raise ValueError("invalid bounds: far < near")
    u = rng.random((rays.count, s1))
    frac = (np.arange(s1) + u) / s1
    depths = near[:, None] + (far - near)[:, None] * frac
    return replace(rays, near=near, far=far, depths=np.sort(depths, axis=1))


def importance_sample(depths, weights, s2: int, rng, near, far):
    """Inverse-CDF draws from the piecewise-constant PDF over coarse bins.

    Bin edges are [near, midpoints..., far]; each coarse weight (plus the
    uniform floor) owns one bin.  Returned depths are merged with the input
    depths, strictly sorted (duplicates nudged apart at 1e-12), and are
    plain arrays — never on the tape.
    """
    depths = np.asarray(depths, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("importance weights must be nonnegative")
    n, s1 = depths.shape
    near = np.broadcast_to(np.asarray(near, dtype=np.float64), (n,))
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (n,))
    mids = 0.5 * (depths[:, 1:] + depths[:, :-1])
    edges = np.concatenate([near[:, None], mids, far[:, None]], axis=1)  # (N, S1+1)
    width = np.maximum(np.diff(edges, axis=1), 0.0)
    mass = (weights + IMPORTANCE_EPS) * (width > 0)
    cdf = np.cumsum(mass, axis=1)
    total = cdf[:, -1:]
    cdf = np.concatenate([np.zeros((n, 1)), cdf / total], axis=1)        # (N, S1+1)

    u = rng.random((n, s2))
    # bin index per draw: count of cdf entries <= u, clamped into range
    idx = np.sum(u[:, :, None] >= cdf[:, None, :-1], axis=2) - 1
    idx = np.clip(idx, 0, s1 - 1)
    c0 = np.take_along_axis(cdf, idx, axis=1)
    c1 = np.take_along_axis(cdf, idx + 1, axis=1)
    e0 = np.take_along_axis(edges, idx, axis=1)
    e1 = np.take_along_axis(edges, idx + 1, axis=1)
    frac = np.where(c1 > c0, (u - c0) / np.maximum(c1 - c0, 1e-300), 0.5)
    samples = e0 + frac * (e1 - e0)

    merged = np.sort(np.concatenate([depths, samples], axis=1), axis=1)
    return _strictify(merged)


def _strictify(depths):
    """Enforce strictly increasing rows by nudging duplicates by 1e-12."""
    out = depths.copy()
    for _ in range(2):
        prev = out[:, :-1]
        nxt = out[:, 1:]
        mask = nxt - prev < MERGE_TOL
        if not mask.any():
            break
        nxt[mask] = prev[mask] + MERGE_TOL
    return out


def composite(colors, sigma, delta):
    """Volume compositing: per-sample weights T_i (1 - exp(-sigma_i delta_i)).

    colors (N,S,3) and sigma (N,S) are tape tensors; delta is constant.
    Returns (pixel (N,3), weights (N,S), end transmittance (N,)).
    """
    if isinstance(delta, ad.Tensor):
        delta = delta.data
    if np.any(delta < 0):
        raise ValueError("spacings must be nonnegative")
    n, s = sigma.shape
    if colors.shape != (n, s, 3) or delta.shape != (n, s):
        raise ValueError(f"composite: inconsistent shapes {colors.shape} "
                         f"{sigma.shape} {delta.shape}")
    tau = sigma * ad.Tensor(delta.astype(str(sigma.dtype)))
    cum = ad.cumsum(tau, 1)
    trans = ad.exp(ad.neg(cum - tau))             # T_i, exclusive accumulation
    alpha = 1.0 - ad.exp(ad.neg(tau))
    weights = trans * alpha
    t_end = ad.exp(ad.neg(cum[:, -1]))
    pixel = ad.reduce_sum(
        ad.broadcast_to(ad.reshape(weights, (n, s, 1)), (n, s, 3)) * colors, 1)
    return pixel, weights, t_end


@dataclass
class RenderOpts:
    s1: int = 48
    s2: int = 48
    bg_color: tuple = (1.0, 1.0, 1.0)
    oracle_samples: int = 256   # unused here; shared config convenience


def render_rays(field, rays, s1, s2, rng, residual=None, coarse_only=False):
    """Hierarchical render of prepared rays (all assumed to hit).

    ``field`` must expose ``query(points, residual) -> (color, sigma)``;
    the coarse weighting pass queries with ``residual=None``.
    Returns (pixel (N,3), weights (N,S), t_end (N,), fine ray batch).
    """
    coarse_rays = stratified_sample(rays, rays.near, rays.far, s1, rng)

    if coarse_only or s2 == 0:
        fine_rays = coarse_rays
    else:
        with ad.no_grad():
            pts = coarse_rays.points().reshape(-1, 3)
            color, sig = field.query(pts, residual=None)
            n = rays.count
            colors = ad.reshape(color, (n, s1, 3))
            sigma = ad.reshape(sig, (n, s1))
            _, cw, _ = composite(colors, sigma, coarse_rays.spacings())
        merged = importance_sample(coarse_rays.depths, cw.data, s2, rng,
                                   rays.near, rays.far)
        fine_rays = replace(rays, depths=merged)

    n, s = fine_rays.depths.shape
    pts = fine_rays.points().reshape(-1, 3)
    color, sig = field.query(pts, residual=None if coarse_only else residual)
    colors = ad.reshape(color, (n, s, 3))
    sigma = ad.reshape(sig, (n, s))
    pixel, weights, t_end = composite(colors, sigma, fine_rays.spacings())
    return pixel, weights, t_end, fine_rays


def render_patch(field, cam, patch, opts, rng, residual=None, coarse_only=False):
    """Differentiable patch render composited onto the background color.

    ``residual`` may be precomputed (one S3D pass shared across patches);
    pass ``coarse_only=True`` to render the coarse field with no residual.
    """
    rays = generate_rays(cam, patch)
    n = rays.count
    bg = np.asarray(opts.bg_color, dtype=np.float64)
    hit_idx = np.flatnonzero(rays.hit)
    if residual is None and not coarse_only:
        residual = field.residual()

    if len(hit_idx) == 0:
        img = np.broadcast_to(bg, (patch.side, patch.side, 3)).copy()
        return ad.Tensor(img)

    sub = RayBatch(origins=rays.origins[hit_idx], directions=rays.directions[hit_idx],
                   near=rays.near[hit_idx], far=rays.far[hit_idx],
                   hit=rays.hit[hit_idx])
    pixel, _, t_end, _ = render_rays(
        field, sub, opts.s1, opts.s2, rng,
        residual=None if coarse_only else residual, coarse_only=coarse_only)
    bg_t = ad.Tensor(np.broadcast_to(bg, pixel.shape).copy().astype(str(pixel.dtype)))
    pixel = pixel + ad.broadcast_to(ad.reshape(t_end, (len(hit_idx), 1)),
                                    pixel.shape) * bg_t

    # scatter hit pixels into the full patch; missed rays keep pure background
    full = ad.scatter_cols(ad.permute(pixel, (1, 0)), hit_idx, n)
    miss = np.zeros((3, n))
    miss[:, np.flatnonzero(~rays.hit)] = bg[:, None]
    full = full + ad.Tensor(miss.astype(str(full.dtype)))
    return ad.permute(ad.reshape(full, (3, patch.side, patch.side)), (1, 2, 0))


def render_depth(field, cam, patch, opts, rng, residual=None):
    """Expected-depth map and validity mask (numpy, not differentiable)."""
    with ad.no_grad():
        rays = generate_rays(cam, patch)
        depth = np.zeros(rays.count)
        valid = np.zeros(rays.count, dtype=bool)
        hit_idx = np.flatnonzero(rays.hit)
        if len(hit_idx):
            sub = RayBatch(origins=rays.origins[hit_idx],
                           directions=rays.directions[hit_idx],
                           near=rays.near[hit_idx], far=rays.far[hit_idx],
                           hit=rays.hit[hit_idx])
            if residual is None:
                residual = field.residual()
            _, w, _, fine = render_rays(field, sub, opts.s1, opts.s2, rng,
                                        residual=residual)
            wsum = w.data.sum(axis=1)
            d = (w.data * fine.depths).sum(axis=1) / np.maximum(wsum, 1e-12)
            depth[hit_idx] = d
            valid[hit_idx] = wsum >= DEPTH_VALID_MIN_WEIGHT
    side = patch.side
    return depth.reshape(side, side), valid.reshape(side, side)
