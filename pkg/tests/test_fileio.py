"""Round-trip checks for images, meshes, metrics, and checkpoints."""

import numpy as np
import pytest

from triplane_mimic import autodiff as ad
from triplane_mimic.field import StudentField
from triplane_mimic.fileio import (MetricsWriter, load_checkpoint, read_metrics,
                                   read_obj, read_pfm, read_png,
                                   save_checkpoint, write_obj, write_pfm,
                                   write_png)
from triplane_mimic.renderer import PatchSpec, RenderOpts, orbit_pose, render_patch


def test_png_roundtrip(tmp_path):
    img = np.random.default_rng(0).random((9, 7, 3))
    p = tmp_path / "x.png"
    write_png(p, img)
    back = read_png(p)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_png_grayscale_and_clipping(tmp_path):
    img = np.array([[-0.5, 0.0], [1.0, 2.0]])
    p = tmp_path / "g.png"
    write_png(p, img)
    back = read_png(p)
    assert np.allclose(back, [[0.0, 0.0], [1.0, 1.0]])


def test_pfm_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(1)
    for shape in [(6, 5, 3), (4, 8)]:
        img = rng.standard_normal(shape).astype(np.float32)
        p = tmp_path / "d.pfm"
        write_pfm(p, img)
        back = read_pfm(p)
        assert back.shape == img.shape
        assert np.array_equal(back.astype(np.float32), img)


def test_obj_roundtrip(tmp_path):
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    faces = np.array([[0, 1, 2]])
    p = tmp_path / "m.obj"
    write_obj(p, verts, faces)
    v, f = read_obj(p)
    assert np.allclose(v, verts)
    assert np.array_equal(f, faces)


def test_obj_rejects_bad_indices(tmp_path):
    with pytest.raises(ValueError):
        write_obj(tmp_path / "bad.obj", np.zeros((2, 3)), np.array([[0, 1, 2]]))


def test_metrics_roundtrip(tmp_path):
    p = tmp_path / "metrics.csv"
    w = MetricsWriter(p, ["step", "loss"])
    w.write({"step": 1, "loss": 0.5})
    w.write({"step": 2, "loss": 0.25})
    rows = read_metrics(p)
    assert rows == [{"step": 1.0, "loss": 0.5}, {"step": 2.0, "loss": 0.25}]
    with pytest.raises(ValueError):
        w.write({"step": 3})


def _small_field(**kw):
    args = dict(channels=4, coarse_resolution=8, factor=2, d_w=4, hidden=8,
                depth=1, seed=7)
    args.update(kw)
    return StudentField.init(**args)


def test_checkpoint_roundtrip_bitwise(tmp_path):
    for aware in (False, True):
        f = _small_field(use_aware3d=aware, seed=3 + aware)
        p = tmp_path / f"ckpt{aware}.tpl"
        save_checkpoint(p, f)
        g = load_checkpoint(p)
        pa, pb = f.parameters(), g.parameters()
        assert len(pa) == len(pb)
        for a, b in zip(pa, pb):
            assert np.array_equal(a.data, b.data)


def test_checkpoint_float32(tmp_path):
    f = _small_field(dtype=np.float32)
    p = tmp_path / "c32.tpl"
    save_checkpoint(p, f)
    g = load_checkpoint(p)
    assert str(g.coarse.p_xy.dtype) == "float32"
    assert np.array_equal(f.coarse.p_xy.data, g.coarse.p_xy.data)


def test_checkpoint_render_equivalence(tmp_path):
    f = _small_field()
    p = tmp_path / "c.tpl"
    save_checkpoint(p, f)
    g = load_checkpoint(p)
    cam = orbit_pose(0.4, 0.1, 2.7, 8)
    spec = PatchSpec.full_frame(8)
    opts = RenderOpts(s1=6, s2=4)
    with ad.no_grad():
        a = render_patch(f, cam, spec, opts, np.random.default_rng(5))
        b = render_patch(g, cam, spec, opts, np.random.default_rng(5))
    assert np.array_equal(a.data, b.data)


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "junk.tpl"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_checkpoint(p)
