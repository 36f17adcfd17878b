"""Command-line entry point: fit, render, mesh, eval, gradcheck.

Exit codes: 0 success, 1 failed check, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

USAGE_ERROR = 2
CHECK_FAILED = 1


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="triplane-mimic",
        description="Differentiable tri-plane fields fitted to an analytic "
                    "multiview teacher.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("fit", "optimize a student field against the teacher"),
            ("render", "render images from a checkpoint"),
            ("mesh", "extract an isosurface mesh from a checkpoint"),
            ("eval", "consistency and fidelity report for a checkpoint"),
            ("gradcheck", "finite-difference audit of every op")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--threads", type=int, help="worker thread count")
        p.add_argument("--print-config", action="store_true",
                       help="dump the effective config and exit")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="inline config overrides")
        if name == "gradcheck":
            p.add_argument("--sign-flip", action="store_true",
                           help="corrupt one gradient on purpose "
                                "(checker self-test; must fail)")
    return parser


def _load(args):
    from .config import apply_overrides, default_config, load_config
    cfg = default_config()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    return cfg


def _load_field(cfg):
    from .fileio import load_checkpoint
    path = cfg["checkpoint"]
    if not path:
        raise ValueError("config key 'checkpoint' is required")
    if not os.path.exists(path):
        raise ValueError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_fit(cfg):
    from .config import fit_config_from
    from .trainer import fit_imitation

    def progress(row):
        print(f"step {int(row['step']):6d}  loss {row['loss_total']:.5f}  "
              f"psnr {row['psnr_preview']:.2f} dB", flush=True)

    fit_imitation(fit_config_from(cfg), out_dir=cfg["out_dir"],
                  progress=progress)
    print(f"artifacts written to {cfg['out_dir']}")
    return 0


def cmd_render(cfg):
    from . import autodiff as ad
    from .fileio import write_pfm, write_png
    from .renderer import PatchSpec, RenderOpts, orbit_pose, render_patch

    field = _load_field(cfg)
    res = cfg["render_res"]
    views = cfg["render_views"]
    fmt = cfg["image_format"]
    if fmt not in ("png", "pfm"):
        raise ValueError(f"image_format must be png or pfm, got {fmt!r}")
    if views < 1:
        raise ValueError("render_views must be >= 1")
    os.makedirs(cfg["out_dir"], exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    opts = RenderOpts(s1=cfg["s1"], s2=cfg["s2"])
    yaws = (np.linspace(0.0, 2.0 * np.pi, views, endpoint=False)
            + cfg["render_yaw"])
    for i, yaw in enumerate(yaws):
        cam = orbit_pose(yaw, cfg["render_pitch"], cfg["radius"], res)
        with ad.no_grad():
            img = render_patch(field, cam, PatchSpec.full_frame(res), opts, rng)
        path = os.path.join(cfg["out_dir"], f"view_{i:04d}.{fmt}")
        (write_png if fmt == "png" else write_pfm)(path, img.data)
        print(path)
    return 0


def cmd_mesh(cfg):
    from .evalkit import density_grid, is_watertight, marching_cubes
    from .fileio import write_obj

    field = _load_field(cfg)
    g = cfg["grid_resolution"]
    if g < 2:
        raise ValueError("grid_resolution must be >= 2")
    grid = density_grid(field, g)
    iso = cfg["iso_level"]
    if iso < 0:
        iso = 0.5 * grid.max()
    mesh = marching_cubes(grid, iso)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    out = os.path.join(cfg["out_dir"], "mesh.obj")
    write_obj(out, mesh.vertices, mesh.faces)
    v, f = mesh.counts
    if f == 0:
        print("warning: empty level set, wrote an empty mesh", file=sys.stderr)
    else:
        print(f"{out}: {v} vertices, {f} faces, "
              f"watertight={is_watertight(mesh)}")
    return 0


def cmd_eval(cfg):
    from . import autodiff as ad
    from .evalkit import (consistency_score, psnr, spatiotemporal_texture,
                          ssim, yaw_sweep)
    from .fileio import MetricsWriter, write_png
    from .renderer import PatchSpec, RenderOpts, render_patch
    from .teacher import InconsistencySpec, OracleScene, teacher_image

    field = _load_field(cfg)
    res = cfg["eval_res"]
    scene = OracleScene(kind=cfg["scene_kind"])
    inc = InconsistencySpec(mode=cfg["inconsistency_mode"],
                            amplitude=cfg["epsilon"], seed=cfg["teacher_seed"])
    clean = InconsistencySpec(mode="none", amplitude=0.0)
    poses = yaw_sweep(cfg["eval_views"], span=cfg["eval_span"],
                      radius=cfg["radius"], res=res)
    rng = np.random.default_rng(cfg["seed"])
    opts = RenderOpts(s1=cfg["s1"], s2=cfg["s2"])

    os.makedirs(cfg["out_dir"], exist_ok=True)
    writer = MetricsWriter(os.path.join(cfg["out_dir"], "report.csv"),
                           ["view", "psnr", "ssim"])
    student, teacher = [], []
    for i, cam in enumerate(poses):
        with ad.no_grad():
            img = render_patch(field, cam, PatchSpec.full_frame(res), opts,
                               rng).data
        ref = teacher_image(scene, cam, res, clean,
                            samples=cfg["oracle_samples"])
        student.append(img)
        teacher.append(teacher_image(scene, cam, res, inc,
                                     samples=cfg["oracle_samples"]))
        writer.write({"view": i, "psnr": psnr(img, ref), "ssim": ssim(img, ref)})

    segment = ((0.0, res / 2.0), (res - 1.0, res / 2.0))
    strip_s = spatiotemporal_texture(np.stack(student), segment, res)
    strip_t = spatiotemporal_texture(np.stack(teacher), segment, res)
    score_s = consistency_score(strip_s)
    score_t = consistency_score(strip_t)
    ratio = score_s / score_t if score_t > 0 else (0.0 if score_s == 0 else 1.0)
    writer.write({"view": -1, "psnr": score_s, "ssim": ratio})
    write_png(os.path.join(cfg["out_dir"], "strip_student.png"), strip_s)
    write_png(os.path.join(cfg["out_dir"], "strip_teacher.png"), strip_t)
    print(f"consistency: student {score_s:.3e}  teacher {score_t:.3e}  "
          f"ratio {ratio:.3f}")
    return 0


def cmd_gradcheck(cfg, sign_flip=False):
    from .gradcheck import op_suite

    results = op_suite(seed=cfg["seed"], sign_flip=sign_flip)
    width = max(len(name) for name, _ in results)
    failed = []
    for name, err in results:
        ok = err < 1e-4
        print(f"{name:<{width}}  {err:12.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradcheck failed for: {', '.join(failed)}", file=sys.stderr)
        return CHECK_FAILED
    print(f"all {len(results)} ops within 1e-4")
    return 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code else 0
    try:
        cfg = _load(args)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    if args.print_config:
        from .config import dump_config
        print(dump_config(cfg), end="")
        return 0
    handlers = {"fit": cmd_fit, "render": cmd_render, "mesh": cmd_mesh,
                "eval": cmd_eval}
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, sign_flip=args.sign_flip)
        return handlers[args.command](cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except RuntimeError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
