"""Fitting loop: distill the analytic teacher into the student field.

Each step samples a batch of (camera, patch) pairs, renders the student at
those patches, and descends the imitation loss (optionally plus an
adversarial critic) with Adam.  Patch rendering within a batch can run on
worker threads; gradients are reduced in batch order so results do not
depend on scheduling.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .field import StudentField
from .losses import (DiscriminatorParams, LossConfig, disc_score,
                     imitation_loss, nonsat_disc_loss, nonsat_gen_loss,
                     r1_penalty)
from .renderer import PatchSpec, RenderOpts, orbit_pose, render_patch
from .teacher import InconsistencySpec, OracleScene, teacher_image

METRIC_FIELDS = ("step", "loss_total", "loss_imit", "loss_adv", "loss_r1",
                 "psnr_preview", "wallclock_s")


def sample_view(rng, image_size, radius=2.7, pitch_range=(-0.35, 0.35),
                focal=None):
    """Random orbit camera: uniform yaw, uniform pitch in the given band."""
    yaw = rng.uniform(0.0, 2.0 * np.pi)
    pitch = rng.uniform(*pitch_range)
    return orbit_pose(yaw, pitch, radius, image_size, focal=focal)


def sample_patch(rng, frame, side):
    """Uniform patch origin inside an untruncated frame."""
    if side > frame:
        raise ValueError(f"patch {side} larger than frame {frame}")
    u0 = int(rng.integers(0, frame - side + 1))
    v0 = int(rng.integers(0, frame - side + 1))
    return PatchSpec(u0=u0, v0=v0, side=side, full=frame)


# ----------------------------------------------------------------- optimizer


class Adam:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads):
        """Apply one update from a {param: grad tensor} map (missing = 0)."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                continue
            g = g.data if isinstance(g, ad.Tensor) else g
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ------------------------------------------------------------------- config


@dataclass
class FitConfig:
    steps: int = 2000
    frame_res: int = 128
    patch: int = 64
    batch: int = 4
    lr: float = 2.5e-3
    lr_disc: float = 2e-3
    s1: int = 48
    s2: int = 48
    oracle_samples: int = 256
    radius: float = 2.7
    seed: int = 0
    threads: int = 1
    dtype: str = "float64"

    # student shape
    channels: int = 32
    coarse_resolution: int = 64
    factor: int = 2
    d_w: int = 16
    hidden: int = 64
    depth: int = 2
    use_aware3d: bool = False
    plane_scale: float = 0.1

    # teacher
    scene_kind: str = "sphere"
    scene_density: float = 40.0
    inconsistency_mode: str = "none"
    epsilon: float = 0.0
    teacher_seed: int = 0

    # objective
    lambda_l1: float = 1.0
    lambda_perc: float = 1.0
    lambda_adv: float = 0.0
    lambda_r1: float = 1.0
    imitation_enabled: bool = True

    # reporting
    log_every: int = 25
    preview_every: int = 0
    checkpoint_every: int = 0
    preview_res: int = 64

    def loss_config(self):
        return LossConfig(lambda_l1=self.lambda_l1, lambda_perc=self.lambda_perc,
                          lambda_adv=self.lambda_adv, lambda_r1=self.lambda_r1)


@dataclass
class FitResult:
    field: StudentField
    disc: object
    metrics: list = dc_field(default_factory=list)


# --------------------------------------------------------------------- loop


def _render_pair(field, scene, inc, cam, patch, cfg, residual, rng):
    target = teacher_image(scene, cam, cfg.frame_res, inc,
                           samples=cfg.oracle_samples, patch=patch)
    opts = RenderOpts(s1=cfg.s1, s2=cfg.s2)
    img = render_patch(field, cam, patch, opts, rng, residual=residual)
    return img, target


def _preview_psnr(field, scene, cfg, rng):
    from .evalkit import psnr
    cam = orbit_pose(0.6, 0.15, cfg.radius, cfg.preview_res)
    spec = PatchSpec.full_frame(cfg.preview_res)
    with ad.no_grad():
        img = render_patch(field, cam, spec, RenderOpts(s1=cfg.s1, s2=cfg.s2),
                           rng)
    ref = teacher_image(scene, cam, cfg.preview_res,
                        InconsistencySpec(mode="none", amplitude=0.0),
                        samples=cfg.oracle_samples)
    return psnr(img.data, ref), img.data


def fit_imitation(cfg: FitConfig, out_dir=None, field=None, disc=None,
                  progress=None):
    """Run the fit; returns the trained field, critic, and metric rows.

    ``out_dir`` (optional) receives metrics.csv, previews, and checkpoints.
    Raises RuntimeError if the loss goes non-finite.
    """
    dtype = np.dtype(cfg.dtype).type
    rng = np.random.default_rng(cfg.seed)
    if field is None:
        field = StudentField.init(
            channels=cfg.channels, coarse_resolution=cfg.coarse_resolution,
            factor=cfg.factor, d_w=cfg.d_w, hidden=cfg.hidden, depth=cfg.depth,
            seed=cfg.seed, dtype=dtype, use_aware3d=cfg.use_aware3d,
            plane_scale=cfg.plane_scale)
    scene = OracleScene(kind=cfg.scene_kind, density=cfg.scene_density)
    inc = InconsistencySpec(mode=cfg.inconsistency_mode, amplitude=cfg.epsilon,
                            seed=cfg.teacher_seed)
    loss_cfg = cfg.loss_config()
    adversarial = cfg.lambda_adv > 0.0
    if not cfg.imitation_enabled and not adversarial:
        raise ValueError("nothing to optimize: enable imitation or set lambda_adv")
    if adversarial and disc is None:
        disc = DiscriminatorParams.init(patch=cfg.patch, seed=cfg.seed + 1,
                                        dtype=dtype)
    opt = Adam(field.parameters(), lr=cfg.lr)
    opt_d = Adam(disc.parameters(), lr=cfg.lr_disc) if adversarial else None

    writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        from .fileio import MetricsWriter
        writer = MetricsWriter(os.path.join(out_dir, "metrics.csv"),
                               METRIC_FIELDS)

    metrics = []
    t0 = time.monotonic()
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for step in range(1, cfg.steps + 1):
            views = [(sample_view(rng, cfg.frame_res, radius=cfg.radius),
                      sample_patch(rng, cfg.frame_res, cfg.patch),
                      np.random.default_rng(rng.integers(2 ** 63)))
                     for _ in range(cfg.batch)]
            residual = field.residual()

            def work(item):
                cam, patch, r = item
                return _render_pair(field, scene, inc, cam, patch, cfg,
                                    residual, r)

            if pool is not None:
                pairs = list(pool.map(work, views))
            else:
                pairs = [work(v) for v in views]

            # critic update first, on detached student patches
            loss_adv_v = loss_r1_v = 0.0
            if adversarial:
                real = [t for _, t in pairs]
                fake_scores = [disc_score(disc, img.detach())
                               for img, _ in pairs]
                real_scores = [disc_score(disc, ad.Tensor(t.astype(cfg.dtype)))
                               for t in real]
                d_loss = nonsat_disc_loss(real_scores, fake_scores)
                r1 = r1_penalty(disc, real, cfg.lambda_r1)
                loss_r1_v = r1.data.item()
                d_total = d_loss + r1
                opt_d.step(ad.backward(d_total))
                ad.free_graph(d_total)

            # student update
            total = None
            loss_imit_v = 0.0
            for img, target in pairs:
                if cfg.imitation_enabled:
                    li = imitation_loss(img, ad.Tensor(target.astype(cfg.dtype)),
                                        loss_cfg)
                    loss_imit_v += li.data.item() / cfg.batch
                    total = li if total is None else total + li
                if adversarial:
                    ga = nonsat_gen_loss([disc_score(disc, img)]) * cfg.lambda_adv
                    loss_adv_v += ga.data.item() / cfg.batch
                    total = ga if total is None else total + ga
            total = total * (1.0 / cfg.batch)
            total_v = total.data.item()
            if not np.isfinite(total_v):
                raise RuntimeError(f"non-finite loss at step {step}")
            opt.step(ad.backward(total))
            ad.free_graph(total)

            if step % cfg.log_every == 0 or step == cfg.steps:
                ps, preview = _preview_psnr(field, scene, cfg, rng)
                row = {"step": step, "loss_total": total_v,
                       "loss_imit": loss_imit_v, "loss_adv": loss_adv_v,
                       "loss_r1": loss_r1_v, "psnr_preview": ps,
                       "wallclock_s": time.monotonic() - t0}
                metrics.append(row)
                if writer is not None:
                    writer.write(row)
                if progress is not None:
                    progress(row)
                if (out_dir is not None and cfg.preview_every
                        and step % cfg.preview_every == 0):
                    from .fileio import write_png
                    write_png(os.path.join(out_dir, f"preview_{step:06d}.png"),
                              preview)
            if (out_dir is not None and cfg.checkpoint_every
                    and step % cfg.checkpoint_every == 0):
                from .fileio import save_checkpoint
                save_checkpoint(os.path.join(out_dir, f"ckpt_{step:06d}.tpl"),
                                field)
    finally:
        if pool is not None:
            pool.shutdown()

    if out_dir is not None:
        from .fileio import save_checkpoint
        save_checkpoint(os.path.join(out_dir, "ckpt_final.tpl"), field)
    return FitResult(field=field, disc=disc, metrics=metrics)
