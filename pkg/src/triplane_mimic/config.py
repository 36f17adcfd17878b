"""Flat key=value run configuration shared by every CLI command.

One namespace covers fitting, rendering, meshing, and evaluation; unknown
keys are rejected by name so typos fail fast.  Types are inferred from the
defaults table.
"""

from __future__ import annotations

from dataclasses import fields as dc_fields

from .trainer import FitConfig

# command-specific keys layered on top of the fit options
_EXTRA_DEFAULTS = {
    "out_dir": "runs/latest",
    "checkpoint": "",
    "render_views": 8,
    "render_res": 64,
    "render_yaw": 0.0,
    "render_pitch": 0.15,
    "image_format": "png",          # png | pfm
    "grid_resolution": 128,
    "iso_level": -1.0,              # < 0 means half the grid maximum
    "eval_views": 60,
    "eval_span": 0.6109,            # ~ +-35 degrees of yaw
    "eval_res": 64,
}


def default_config():
    cfg = {f.name: getattr(FitConfig(), f.name) for f in dc_fields(FitConfig)}
    cfg.update(_EXTRA_DEFAULTS)
    return cfg


def _parse_value(key, text, default):
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {text!r} as "
                         f"{type(default).__name__}") from None
    return text


def set_key(cfg, key, text):
    """Assign one textual value, validating the key name and type."""
    defaults = default_config()
    if key not in defaults:
        raise ValueError(f"unknown config key {key!r}")
    cfg[key] = _parse_value(key, text, defaults[key])


def load_config(path, base=None):
    """Read a key=value file (# comments, blank lines ignored)."""
    cfg = dict(base) if base is not None else default_config()
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, "
                                 f"got {line!r}")
            key, text = line.split("=", 1)
            set_key(cfg, key.strip(), text.strip())
    return cfg


def apply_overrides(cfg, overrides):
    """Apply command-line key=value override strings in order."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        set_key(cfg, key.strip(), text.strip())
    return cfg


def dump_config(cfg):
    """Round-trippable textual form, keys sorted."""
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        lines.append(f"{key}={str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def fit_config_from(cfg):
    """Project the flat map onto the trainer's options."""
    names = {f.name for f in dc_fields(FitConfig)}
    return FitConfig(**{k: v for k, v in cfg.items() if k in names})
