"""End-to-end command-line behavior, run in-process."""

import numpy as np
import pytest

from triplane_mimic.cli import main
from triplane_mimic.field import StudentField
from triplane_mimic.fileio import save_checkpoint

TINY_FIT = ["steps=2", "frame_res=16", "patch=8", "batch=1", "s1=6", "s2=0",
            "oracle_samples=16", "channels=4", "coarse_resolution=8",
            "d_w=4", "hidden=8", "depth=1", "log_every=1", "lambda_perc=0",
            "preview_res=8"]


def _ckpt(tmp_path):
    field = StudentField.init(channels=4, coarse_resolution=8, factor=2,
                              d_w=4, hidden=8, depth=1, seed=0)
    path = tmp_path / "f.tpl"
    save_checkpoint(path, field)
    return str(path)


def _strip_wallclock(csv_path):
    lines = csv_path.read_text().splitlines()
    idx = lines[0].split(",").index("wallclock_s")
    return [",".join(c for i, c in enumerate(l.split(",")) if i != idx)
            for l in lines]


def test_print_config(capsys):
    assert main(["fit", "--print-config", "steps=42"]) == 0
    out = capsys.readouterr().out
    assert "steps=42" in out and "lr=0.0025" in out


def test_unknown_override_is_usage_error(capsys):
    assert main(["fit", "bogus_key=1"]) == 2
    assert "bogus_key" in capsys.readouterr().err


def test_missing_config_file_is_usage_error(tmp_path):
    assert main(["fit", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_fit_writes_artifacts_and_is_deterministic(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        code = main(["fit", "--seed", "3", f"out_dir={out}"] + TINY_FIT)
        assert code == 0
        assert (out / "metrics.csv").exists()
        assert (out / "ckpt_final.tpl").exists()
    assert _strip_wallclock(out_a / "metrics.csv") == \
        _strip_wallclock(out_b / "metrics.csv")


def test_render_orbit_files(tmp_path):
    ckpt = _ckpt(tmp_path)
    out = tmp_path / "renders"
    code = main(["render", f"checkpoint={ckpt}", f"out_dir={out}",
                 "render_views=3", "render_res=8", "s1=4", "s2=0"])
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["view_0000.png", "view_0001.png", "view_0002.png"]


def test_render_pfm_matches_png(tmp_path):
    from triplane_mimic.fileio import read_pfm, read_png
    ckpt = _ckpt(tmp_path)
    args = [f"checkpoint={ckpt}", "render_views=1", "render_res=8",
            "s1=4", "s2=0", "--seed", "1"]
    assert main(["render", f"out_dir={tmp_path / 'p1'}"] + args) == 0
    assert main(["render", f"out_dir={tmp_path / 'p2'}",
                 "image_format=pfm"] + args) == 0
    png = read_png(tmp_path / "p1" / "view_0000.png")
    pfm = read_pfm(tmp_path / "p2" / "view_0000.pfm")
    assert np.abs(png - pfm).max() <= 0.5 / 255 + 1e-6


def test_render_bad_checkpoint_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "junk.tpl"
    bad.write_bytes(b"NOPEl" * 10)
    assert main(["render", f"checkpoint={bad}"]) == 2
    assert main(["render", "checkpoint="]) == 2


def test_mesh_usage_error_and_empty_warning(tmp_path, capsys):
    ckpt = _ckpt(tmp_path)
    assert main(["mesh", f"checkpoint={ckpt}", "grid_resolution=1"]) == 2
    # near-transparent init has no level set at iso 1.0 -> warn, still exit 0
    out = tmp_path / "mesh_out"
    code = main(["mesh", f"checkpoint={ckpt}", f"out_dir={out}",
                 "grid_resolution=8", "iso_level=1e6"])
    assert code == 0
    assert "empty" in capsys.readouterr().err
    assert (out / "mesh.obj").exists()


def test_eval_report_rows(tmp_path):
    from triplane_mimic.fileio import read_metrics
    ckpt = _ckpt(tmp_path)
    out = tmp_path / "eval_out"
    code = main(["eval", f"checkpoint={ckpt}", f"out_dir={out}",
                 "eval_views=3", "eval_res=8", "s1=4", "s2=0",
                 "oracle_samples=16"])
    assert code == 0
    rows = read_metrics(out / "report.csv")
    assert len(rows) == 4                       # one per view plus summary
    assert [r["view"] for r in rows[:3]] == [0.0, 1.0, 2.0]
    assert rows[-1]["view"] == -1.0
    assert (out / "strip_student.png").exists()
    assert (out / "strip_teacher.png").exists()


def test_gradcheck_passes_and_lists_each_op_once(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if " ok" in l or " FAIL" in l]
    names = [l.split()[0] for l in lines]
    assert len(names) == len(set(names))
    assert {"matmul", "cumsum", "gather_cols", "softplus"} <= set(names)


def test_gradcheck_sign_flip_self_test(capsys):
    assert main(["gradcheck", "--sign-flip"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_entry_point_installed():
    import shutil
    exe = shutil.which("triplane-mimic")
    assert exe is not None
