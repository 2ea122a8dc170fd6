"""Synthetic simulation campaigns with the structure the pipeline expects.

The generator fabricates per-timestep subdomain files for a set of
simulations whose domains differ in x-extent, whose x spacing carries a
tiny per-simulation jitter, and whose fields evolve through a known
number of temporal regimes. Fields are cheap analytic functions, not
physics: a rightward-moving sigmoid front (position linear in time and
tip velocity) plus a per-regime spatial pattern strong enough to make
the regime the dominant cluster structure. The manifest records the
ground-truth regime of every snapshot so end-to-end clustering runs can
be scored.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import ingest
from .errors import ValidationError
from .store import SimMeta

COORD_JITTER = 1e-4  # relative x-spacing jitter, per simulation


@dataclass(frozen=True)
class CampaignSpec:
    n_sims: int = 8
    he_length_range: tuple = (5.0, 14.0)
    tip_velocity_range: tuple = (0.6, 0.95)
    jet_radius_range: tuple = (0.1, 0.25)
    delta: float = 0.08
    n_subdomains: int = 2
    regime_count: int = 3
    seed: int = 0
    n_vars: int = 1
    step_constant: int = 23
    noise_amp: float = 1e-3
    phase_amplitude: float = 20.0
    y_max: float = 11.0
    air_margin: float = 12.0
    right_margin: float = 16.0
    binary: bool = True

    def __post_init__(self):
        for name in ("he_length_range", "tip_velocity_range", "jet_radius_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValidationError(f"{name} must be non-degenerate, got ({lo}, {hi})")
        if self.regime_count < 2:
            raise ValidationError("regime_count must be >= 2")
        if self.n_sims < 1 or self.n_subdomains < 1 or self.n_vars < 1:
            raise ValidationError("n_sims, n_subdomains and n_vars must be positive")
        if self.delta <= 0:
            raise ValidationError("delta must be positive")


@dataclass(frozen=True)
class SimParams:
    """Resolved geometry and inputs of one synthetic simulation."""

    sim_key: str
    he_length: float
    tip_velocity: float
    jet_radius: float
    n_steps: int
    n_x: int
    n_y: int
    x_lo: float
    delta_x: float
    delta_y: float

    @property
    def x_max(self):
        # Maximum point coordinate; alignment shifts this to x' = 0.
        return self.x_lo + (self.n_x - 0.5) * self.delta_x

    def x_coords(self):
        return self.x_lo + (np.arange(self.n_x) + 0.5) * self.delta_x

    def y_coords(self):
        return (np.arange(self.n_y) + 0.5) * self.delta_y


def step_count(he_length, tip_velocity, step_constant):
    return int(math.floor(he_length / tip_velocity)) + step_constant


def phase_of(time_step, n_steps, regime_count):
    """Ground-truth regime of a time step: equal contiguous segments."""
    return min(regime_count - 1, time_step * regime_count // n_steps)


def _sim_rng(spec, sim_index, stream):
    # stream 0: parameter draws, stream 1: field noise. Separate streams
    # keep the noise independent of how many parameters are drawn.
    return np.random.Generator(np.random.Philox(key=[spec.seed, 2 * sim_index + stream]))


def sim_params(spec, sim_index):
    """Draw one simulation's inputs and lay out its grid."""
    rng = _sim_rng(spec, sim_index, 0)
    he = rng.uniform(*spec.he_length_range)
    v = rng.uniform(*spec.tip_velocity_range)
    radius = rng.uniform(*spec.jet_radius_range)
    jitter = rng.uniform(-1.0, 1.0) * COORD_JITTER
    span = spec.air_margin + he + spec.right_margin
    n_x = int(round(span / spec.delta))
    n_y = int(round(spec.y_max / spec.delta))
    return SimParams(
        sim_key=f"s{sim_index:02d}",
        he_length=he,
        tip_velocity=v,
        jet_radius=radius,
        n_steps=step_count(he, v, spec.step_constant),
        n_x=n_x,
        n_y=n_y,
        x_lo=-spec.air_margin,
        delta_x=spec.delta * (1.0 + jitter),
        delta_y=spec.delta,
    )


def outcome_label(params):
    # Crude break heuristic on traversal time; gives the campaign a mix
    # of labels without pretending to model anything.
    ratio = params.he_length / params.tip_velocity
    if ratio < 12.0:
        return "break"
    if ratio < 16.0:
        return "almost_break"
    return "no_break"


def front_position(spec, params, time_step):
    """Aligned-x position of the moving front at a time step."""
    return -(params.he_length + spec.right_margin) + params.tip_velocity * time_step


def field_value(spec, params, x_aligned, y, time_step, var=0):
    """Closed-form field value (noise excluded) at aligned coordinates."""
    x_aligned = np.asarray(x_aligned, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    width = 2.0 * spec.delta
    front = 1.0 / (1.0 + np.exp(np.clip((x_aligned - front_position(spec, params, time_step)) / width, -60, 60)))
    phase = phase_of(time_step, params.n_steps, spec.regime_count)
    xn = np.clip((x_aligned + spec.air_margin + params.he_length + spec.right_margin)
                 / (spec.air_margin + params.he_length + spec.right_margin), 0.0, 1.0)
    yn = y / spec.y_max
    pattern = np.sin((phase + 1) * np.pi * yn) * np.cos((phase + 1) * np.pi * xn)
    base = front + spec.phase_amplitude * pattern
    return base * (1.0 + 0.25 * var) + 0.1 * var


def field_gradient_bound(spec):
    """Upper bound on |grad| of the closed-form field, for remap tolerances."""
    width = 2.0 * spec.delta
    front_slope = 1.0 / (4.0 * width)
    k = spec.regime_count * np.pi
    pattern_slope = spec.phase_amplitude * k * (1.0 / spec.y_max + 1.0 / (spec.air_margin + spec.right_margin))
    var_scale = 1.0 + 0.25 * (spec.n_vars - 1)
    return (front_slope + pattern_slope) * var_scale


def generate_campaign(spec, out_dir):
    """Write raw subdomain files for every (sim, step); return the manifest.

    Layout: <out_dir>/<sim_key>/t<step>/sub<id>.bin (or .csv), plus
    campaign.csv with per-sim inputs and manifest.csv with ground-truth
    regime labels. Same spec and seed produce bit-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    metas = {}
    for sim_index in range(spec.n_sims):
        params = sim_params(spec, sim_index)
        metas[params.sim_key] = SimMeta(
            params.he_length, params.tip_velocity, params.jet_radius, outcome_label(params)
        )
        _write_sim(spec, sim_index, params, out_dir / params.sim_key)
        for t in range(params.n_steps):
            manifest.append((params.sim_key, t, phase_of(t, params.n_steps, spec.regime_count)))

    save_sim_metas(out_dir / "campaign.csv", metas)
    with open(out_dir / "manifest.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sim_key", "time_step", "phase_label"])
        w.writerows(manifest)
    return manifest


def _write_sim(spec, sim_index, params, sim_dir):
    xs = params.x_coords()
    ys = params.y_coords()
    xx = np.tile(xs, params.n_y)          # natural (y, x) order
    yy = np.repeat(ys, params.n_x)
    x_aligned = xx - params.x_max

    # Vertical strips of whole cell columns; concatenating the strips is
    # deliberately NOT natural order, which the remap has to undo.
    col_of = np.tile(np.arange(params.n_x), params.n_y)
    bounds = [s * params.n_x // spec.n_subdomains for s in range(spec.n_subdomains + 1)]
    strip_masks = [(col_of >= bounds[s]) & (col_of < bounds[s + 1]) for s in range(spec.n_subdomains)]

    # Noise is drawn per (step, var) in a fixed order from the sim's
    # dedicated noise stream.
    rng = _sim_rng(spec, sim_index, 1)

    for t in range(params.n_steps):
        step_dir = sim_dir / f"t{t}"
        step_dir.mkdir(parents=True, exist_ok=True)
        values = np.empty((xx.size, spec.n_vars))
        for var in range(spec.n_vars):
            clean = field_value(spec, params, x_aligned, yy, t, var)
            values[:, var] = clean + spec.noise_amp * rng.standard_normal(xx.size)
        points = np.column_stack([xx, yy, values])
        for s, mask in enumerate(strip_masks):
            suffix = "bin" if spec.binary else "csv"
            ingest.write_subdomain_file(step_dir / f"sub{s}.{suffix}", s, t, points[mask], spec.binary)


def save_sim_metas(path, metas):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sim_key", "he_length", "tip_velocity", "jet_radius", "label"])
        for sim in sorted(metas):
            m = metas[sim]
            w.writerow([sim, repr(m.he_length), repr(m.tip_velocity), repr(m.jet_radius), m.outcome_label])


def load_sim_metas(path):
    metas = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            metas[row[0]] = SimMeta(float(row[1]), float(row[2]), float(row[3]), row[4])
    return metas


def load_manifest(path):
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            rows.append((row[0], int(row[1]), int(row[2])))
    return rows


def spec_from_config(values):
    """Build a CampaignSpec from flat key=value settings.

    Range fields use <name>_lo / <name>_hi keys; unknown keys are
    rejected by the config parser before this is called.
    """
    kwargs = {}
    ranges = {"he_length": "he_length_range", "tip_velocity": "tip_velocity_range", "jet_radius": "jet_radius_range"}
    plain = {f.name for f in fields(CampaignSpec)} - set(ranges.values())
    for short, full in ranges.items():
        lo, hi = values.get(f"{short}_lo"), values.get(f"{short}_hi")
        if (lo is None) != (hi is None):
            raise ValidationError(f"{short}_lo and {short}_hi must be given together")
        if lo is not None:
            kwargs[full] = (lo, hi)
    for name in plain:
        if name in values:
            kwargs[name] = values[name]
    return CampaignSpec(**kwargs)
