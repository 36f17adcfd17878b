"""Fit a small student field to the teacher and watch the loss fall.

This is a scaled-down version of the full pipeline (a few hundred steps,
small planes, small patches) that finishes in a couple of minutes on a
laptop.  It writes metrics.csv, preview renders, and a final checkpoint
that demo 03 consumes.

Run:  python3 demos/02_quick_fit.py
"""

import os

from triplane_mimic.trainer import FitConfig, fit_imitation

out_dir = os.path.join(os.path.dirname(__file__), "out", "quick_fit")

cfg = FitConfig(
    steps=300,
    frame_res=48, patch=24, batch=1,
    s1=12, s2=12, oracle_samples=48,
    channels=8, coarse_resolution=24, factor=2, d_w=8, hidden=32, depth=2,
    dtype="float32",
    scene_kind="sphere",
    lambda_perc=1.0,
    log_every=25, preview_every=100, preview_res=48,
    seed=0,
)

res = fit_imitation(cfg, out_dir=out_dir,
                    progress=lambda r: print(
                        f"step {int(r['step']):4d}  "
                        f"loss {r['loss_total']:.4f}  "
                        f"preview psnr {r['psnr_preview']:5.2f} dB"))

first, last = res.metrics[0], res.metrics[-1]
print(f"\nloss  {first['loss_total']:.4f} -> {last['loss_total']:.4f}")
print(f"psnr  {first['psnr_preview']:.2f} -> {last['psnr_preview']:.2f} dB")
print(f"artifacts in {out_dir} (checkpoint: ckpt_final.tpl)")
