"""Differentiable tri-plane neural field toolkit with 3D-to-2D imitation.

A tri-plane radiance field (coarse planes + a style-modulated residual
generator and an MLP decoder) is rendered with hierarchical volume
sampling and fitted, by gradient descent over a from-scratch reverse-mode
tape, to an analytic multiview "teacher" whose views can be made slightly
inconsistent on purpose.  The evaluation kit quantifies how much 3D
consistency the fitted field restores.
"""

__version__ = "0.1.0"

from . import autodiff
from .field import StudentField
from .renderer import (CameraPose, PatchSpec, RenderOpts, orbit_pose,
                       render_depth, render_patch)
from .teacher import InconsistencySpec, OracleScene, oracle_render, teacher_image
from .trainer import FitConfig, fit_imitation

__all__ = [
    "autodiff", "StudentField", "CameraPose", "PatchSpec", "RenderOpts",
    "orbit_pose", "render_depth", "render_patch", "InconsistencySpec",
    "OracleScene", "oracle_render", "teacher_image", "FitConfig",
    "fit_imitation", "__version__",
]
