"""Serialization: images (PNG/PFM), meshes (OBJ), metrics (CSV), checkpoints.

Checkpoint layout (binary, little-endian):

    magic   4 bytes  b"TPL1"
    version u32
    header  9 x u32: channels, coarse res, upsample factor, style dim,
                     hidden width, decoder depth, color channels,
                     aware3d flag, dtype code (4 = float32, 8 = float64)
    count   u32      number of parameter arrays
    arrays  count x [ndim u32, dims u32..., raw data]

Arrays appear in the field's canonical ``parameters()`` order, so loading
rebuilds an identically shaped student and copies values in.
"""

from __future__ import annotations

import csv
import struct

import numpy as np
from PIL import Image

CHECKPOINT_MAGIC = b"TPL1"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


# ------------------------------------------------------------------ images


def write_png(path, img):
    """Save a float image in [0, 1] (H, W, 3) or (H, W) as 8-bit PNG."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError(f"write_png: bad image rank {arr.ndim}")
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def read_png(path):
    """Load a PNG back to float64 in [0, 1]."""
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def write_pfm(path, img):
    """Portable Float Map, little-endian (negative scale), bottom-up rows."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    elif arr.ndim == 2:
        header = b"Pf"
    else:
        raise ValueError(f"write_pfm: bad shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"read_pfm: bad magic {header!r}")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        count = w * h * (3 if header == b"PF" else 1)
        fmt = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(count * 4), dtype=fmt).astype(np.float64)
    shape = (h, w, 3) if header == b"PF" else (h, w)
    return np.flipud(data.reshape(shape)).copy()


# ------------------------------------------------------------------ meshes


def write_obj(path, vertices, faces):
    """Wavefront OBJ with 1-based triangle indices."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise ValueError(f"write_obj: bad vertices {vertices.shape}")
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise ValueError(f"write_obj: bad faces {faces.shape}")
    if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise ValueError("write_obj: face index out of range")
    with open(path, "w") as f:
        for v in vertices:
            f.write(f"v {v[0]:.8g} {v[1]:.8g} {v[2]:.8g}\n")
        for a, b, c in faces + 1:
            f.write(f"f {a} {b} {c}\n")


def read_obj(path):
    verts, faces = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


# ----------------------------------------------------------------- metrics


class MetricsWriter:
    """Append-only CSV; the header is fixed on the first row."""

    def __init__(self, path, fieldnames):
        self.path = path
        self.fieldnames = list(fieldnames)
        with open(path, "w", newline="") as f:
            csv.DictWriter(f, fieldnames=self.fieldnames).writeheader()

    def write(self, row):
        if set(row) != set(self.fieldnames):
            raise ValueError(f"metrics row keys {sorted(row)} != "
                             f"{sorted(self.fieldnames)}")
        with open(self.path, "a", newline="") as f:
            csv.DictWriter(f, fieldnames=self.fieldnames).writerow(row)


def read_metrics(path):
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()}
                for row in csv.DictReader(f)]


# -------------------------------------------------------------- checkpoints


def _field_header(field):
    dec = field.decoder
    depth = len(dec.weights) - 1
    hidden = dec.weights[0].shape[1] if depth > 0 else 0
    dtype = np.dtype(str(field.coarse.p_xy.dtype))
    return (field.coarse.channels, field.coarse.resolution, field.s3d.factor,
            field.style.dim, hidden, depth, dec.d_c,
            1 if field.aware3d is not None else 0, dtype.itemsize)


def save_checkpoint(path, field):
    params = field.parameters()
    header = _field_header(field)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<9I", *header))
        f.write(struct.pack("<I", len(params)))
        dtype = _DTYPE_CODES[header[-1]]
        for p in params:
            shape = p.data.shape
            f.write(struct.pack(f"<I{len(shape)}I", len(shape), *shape))
            f.write(np.ascontiguousarray(p.data, dtype=dtype).tobytes())


def load_checkpoint(path):
    from .field import StudentField
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (channels, res, factor, d_w, hidden, depth, d_c,
         aware, dsize) = struct.unpack("<9I", f.read(36))
        if dsize not in _DTYPE_CODES:
            raise ValueError(f"bad dtype code {dsize}")
        dtype = _DTYPE_CODES[dsize]
        field = StudentField.init(channels=channels, coarse_resolution=res,
                                  factor=factor, d_w=d_w, hidden=hidden,
                                  depth=depth, d_c=d_c, dtype=dtype,
                                  use_aware3d=bool(aware))
        params = field.parameters()
        (count,) = struct.unpack("<I", f.read(4))
        if count != len(params):
            raise ValueError(f"checkpoint has {count} arrays, field wants "
                             f"{len(params)}")
        for p in params:
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            if shape != p.data.shape:
                raise ValueError(f"shape mismatch {shape} vs {p.data.shape}")
            n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            raw = np.frombuffer(f.read(n * dsize), dtype=dtype)
            p.data = raw.reshape(shape).copy()
    return field
