"""Evaluation: image metrics, multi-view consistency, and mesh extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .renderer import PatchSpec, RenderOpts, generate_rays, orbit_pose

PSNR_CAP = 99.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a, b, data_range=1.0):
    """Peak signal-to-noise ratio in dB, capped for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(10.0 * np.log10(data_range ** 2 / mse), PSNR_CAP)


def _ssim_filter(x, sigma=1.5):
    # 11-tap truncated Gaussian window, applied separably
    return ndimage.gaussian_filter(x, sigma=sigma, truncate=3.5, mode="reflect")


def ssim(a, b, data_range=1.0):
    """Mean structural similarity with the standard Gaussian window.

    Color images are averaged over channels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return float(np.mean([ssim(a[..., c], b[..., c], data_range)
                              for c in range(a.shape[2])]))
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _ssim_filter(a)
    mu_b = _ssim_filter(b)
    var_a = _ssim_filter(a * a) - mu_a * mu_a
    var_b = _ssim_filter(b * b) - mu_b * mu_b
    cov = _ssim_filter(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ------------------------------------------------------- view consistency


def yaw_sweep(n_views=60, span=0.6109, pitch=0.0, radius=2.7, res=64):
    """Ordered orbit poses sweeping yaw over [-span, span] (~±35° default)."""
    if n_views < 2:
        raise ValueError("need at least two views")
    return [orbit_pose(yaw, pitch, radius, res)
            for yaw in np.linspace(-span, span, n_views)]


def spatiotemporal_texture(images, segment, samples):
    """Bilinear samples of a fixed segment across views -> (V, samples, 3).

    ``images`` is (V, H, W, 3); ``segment`` is ((u0, v0), (u1, v1)) in pixel
    coordinates.  Smooth vertical structure in the stack means the scanline
    moves coherently with the camera.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] < 2:
        raise ValueError(f"need (V>=2, H, W, 3) images, got {images.shape}")
    (u0, v0), (u1, v1) = segment
    h, w = images.shape[1:3]
    for u, v in ((u0, v0), (u1, v1)):
        if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
            raise ValueError(f"segment endpoint ({u},{v}) outside frame")
    t = np.linspace(0.0, 1.0, samples)
    us = u0 + t * (u1 - u0)
    vs = v0 + t * (v1 - v0)
    out = np.empty((images.shape[0], samples, 3))
    for i, img in enumerate(images):
        for c in range(3):
            out[i, :, c] = ndimage.map_coordinates(img[..., c], [vs, us],
                                                   order=1, mode="nearest")
    return out


def consistency_score(stack):
    """Mean squared finite difference along the view axis (lower = steadier)."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.shape[0] < 2:
        raise ValueError("need at least two views")
    return float(np.mean(np.diff(stack, axis=0) ** 2))


# ------------------------------------------------------------------ meshes


def density_grid(field, resolution, residual=None, chunk=65536):
    """Sample the field's density on a regular grid over the unit cube."""
    centers = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    zz, yy, xx = np.meshgrid(centers, centers, centers, indexing="ij")
    pts = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    if residual is None and hasattr(field, "residual"):
        residual = field.residual()
    out = np.empty(len(pts))
    with ad.no_grad():
        for lo in range(0, len(pts), chunk):
            _, sig = field.query(pts[lo:lo + chunk], residual=residual)
            out[lo:lo + chunk] = sig.data
    return out.reshape(resolution, resolution, resolution)


@dataclass
class TriMesh:
    vertices: np.ndarray   # (V, 3) in world units
    faces: np.ndarray      # (F, 3) int

    @property
    def counts(self):
        return len(self.vertices), len(self.faces)


def marching_cubes(grid, level):
    """Isosurface of a (R, R, R) scalar grid mapped back to the unit cube.

    An empty level set yields an empty mesh.  Faces are oriented outward
    for closed surfaces (positive enclosed signed volume); zero-area
    triangles are dropped.
    """
    from skimage import measure
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3 or min(grid.shape) < 2:
        raise ValueError(f"marching_cubes: need a 3-d grid, got {grid.shape}")
    if not np.isfinite(level):
        raise ValueError("iso level must be finite")
    if not (grid.min() < level < grid.max()):
        return TriMesh(vertices=np.zeros((0, 3)),
                       faces=np.zeros((0, 3), dtype=np.int64))
    verts, faces, _, _ = measure.marching_cubes(grid, level=level)
    r = grid.shape[0]
    # grid index (i, j, k) indexes (z, y, x); voxel centers at (i + 0.5) / r
    scaled = (verts + 0.5) / r * 2.0 - 1.0
    world = scaled[:, ::-1].copy()                  # -> (x, y, z)
    faces = np.ascontiguousarray(faces.astype(np.int64))
    a = world[faces[:, 1]] - world[faces[:, 0]]
    b = world[faces[:, 2]] - world[faces[:, 0]]
    area2 = np.linalg.norm(np.cross(a, b), axis=1)
    faces = faces[area2 > 1e-12]
    mesh = TriMesh(vertices=world, faces=faces)
    if _signed_volume(mesh) < 0:
        mesh.faces = faces[:, ::-1].copy()
    return mesh


def _signed_volume(mesh):
    v = mesh.vertices
    f = mesh.faces
    if not len(f):
        return 0.0
    return float(np.einsum("ij,ij->", v[f[:, 0]],
                           np.cross(v[f[:, 1]], v[f[:, 2]])) / 6.0)


def is_watertight(mesh):
    """True iff every edge is shared by exactly two triangles."""
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def mesh_from_field(field, resolution=64, level=None):
    """Marching-cubes mesh of the student density; level defaults to half
    the grid maximum."""
    grid = density_grid(field, resolution)
    if level is None:
        level = 0.5 * grid.max()
    return marching_cubes(grid, level)
