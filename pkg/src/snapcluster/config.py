"""Flat key = value configuration files.

One namespace covers every pipeline stage; subcommand flags override
config values. Unknown keys and malformed values are rejected at parse
time so typos fail fast.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ValidationError


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _positive(cast):
    def parse(text):
        v = cast(text)
        if v <= 0:
            raise ValueError(f"must be positive: {text}")
        return v

    return parse


SCHEMA = {
    # preprocessing geometry
    "crop_lo": float,
    "crop_hi": float,
    "grid_x_lo": float,
    "grid_x_hi": float,
    "grid_y_lo": float,
    "grid_y_hi": float,
    "delta": _positive(float),
    "target_block_rows": _positive(int),
    "margin": _positive(float),
    # random projection
    "d": _positive(int),
    "s": str,  # "sqrt" or a number >= 1
    "eps": float,
    # clustering
    "nc": _positive(int),
    "nc_list": str,
    "repetitions": _positive(int),
    "niter": _positive(int),
    "thresh": float,
    "linkage": str,
    "threshold": float,
    "min_size": _positive(int),
    "strong_threshold": float,
    "modes": _positive(int),
    # shared
    "seed": int,
    "jobs": _positive(int),
    "var": int,
    "dtype": str,
    "in_path": str,
    "out_path": str,
    # synthetic campaigns
    "n_sims": _positive(int),
    "he_length_lo": float,
    "he_length_hi": float,
    "tip_velocity_lo": float,
    "tip_velocity_hi": float,
    "jet_radius_lo": float,
    "jet_radius_hi": float,
    "n_subdomains": _positive(int),
    "regime_count": _positive(int),
    "n_vars": _positive(int),
    "step_constant": int,
    "noise_amp": float,
    "phase_amplitude": float,
    "y_max": _positive(float),
    "air_margin": float,
    "right_margin": float,
    "binary": _bool,
}


def parse_config(path):
    """Read a key = value file into a validated dict."""
    values = {}
    for ln, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, text = line.partition("=")
        key = key.strip()
        if not eq:
            raise ValidationError(f"{path}:{ln}: expected key = value, got {raw!r}")
        if key not in SCHEMA:
            raise ValidationError(f"{path}:{ln}: unknown key {key!r}")
        try:
            values[key] = SCHEMA[key](text.strip())
        except ValueError as e:
            raise ValidationError(f"{path}:{ln}: bad value for {key!r}: {e}")
    return values


def resolve(args, cfg, name, default=None):
    """Effective setting: CLI flag beats config file beats default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)
