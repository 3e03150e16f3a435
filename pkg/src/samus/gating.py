"""Kinematic gating of candidate measurements against track history.

Five rules prune physically implausible track continuations in the bearing
plane before any hypothesis is scored:

  1. maximum angular rate: the new step is shorter than d_max * dt;
  2. step-length consistency: the new step agrees with the recent window
     average and with the previous step within a geometry-derived ratio;
  3. minimum interior angle: bearing tracks cannot kink sharply relative
     to their mean step length;
  4. consistent turn direction: the step-phase drift keeps its sign while
     the track is clearly curving and steps are above the noise floor;
  5. error region: the candidate falls inside a circle around the
     prediction, enlarged into a circle-plus-wedge after a maneuver and
     doubled after an observation gap.

Rules that need more history than the track has are skipped (vacuous
pass). All geometry is in the (elevation, azimuth) bearing plane, rad.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import ARCSEC, FOV_AZIMUTH, FOV_ELEVATION
from .motion import StepGeometry, step_geometry

PSI_CAP = 5.0 * math.pi / 6.0


@dataclass(frozen=True)
class GateConfig:
    """Gating parameters (angles rad, rates rad/min)."""

    d_max: float = 0.005
    sigma_vbs: float = 20.0 * ARCSEC
    j_window: int = 6
    wedge_radius_frac: float = 0.2
    wedge_arc: float = math.pi / 4.0
    fov: tuple = (FOV_ELEVATION, FOV_AZIMUTH)
    r_max_floor: float = 1.5

    @property
    def wedge_radius(self) -> float:
        # Fraction of the smaller field-of-view half angle.
        return self.wedge_radius_frac * 0.5 * min(self.fov)


@dataclass(frozen=True)
class ErrorRegion:
    """Acceptance region in the bearing plane.

    Always a circle; post-maneuver regions add a wedge anchored at the
    prediction along the expected maneuver direction.
    """

    center: np.ndarray
    radius: float
    context: str = "normal"  # normal | maneuver | gap
    wedge_phase: float | None = None
    wedge_radius: float = 0.0
    wedge_arc: float = 0.0

    def contains(self, point: np.ndarray) -> bool:
        p = np.asarray(point, dtype=float)
        delta = p - self.center
        if float(np.hypot(delta[0], delta[1])) <= self.radius:
            return True
        if self.wedge_phase is not None:
            dist = float(np.hypot(delta[0], delta[1]))
            if dist <= self.wedge_radius:
                ang = math.atan2(delta[1], delta[0])
                off = (ang - self.wedge_phase + math.pi) % (2 * math.pi) - math.pi
                if abs(off) <= self.wedge_arc / 2.0:
                    return True
        return False


def build_error_region(prediction: np.ndarray, d_mean: float | None,
                       cfg: GateConfig, e_obs: float,
                       context: str = "normal",
                       maneuver_phase: float | None = None) -> ErrorRegion:
    """Acceptance region around a predicted measurement.

    d_mean of None means the track has no steps yet; the radius then falls
    back to the noise floor alone. Gap context doubles the radius;
    maneuver context attaches the wedge along maneuver_phase.
    """
    pred = np.asarray(prediction, dtype=float)
    base = 10.0 * cfg.sigma_vbs
    if d_mean is not None:
        base = max(base, 2.0 * d_mean)
    radius = base * (1.0 + e_obs)
    if context == "gap":
        radius *= 2.0
    if context == "maneuver":
        if maneuver_phase is None:
            raise ValueError("maneuver region needs a maneuver phase")
        return ErrorRegion(center=pred, radius=radius, context=context,
                           wedge_phase=maneuver_phase,
                           wedge_radius=cfg.wedge_radius,
                           wedge_arc=cfg.wedge_arc)
    return ErrorRegion(center=pred, radius=radius, context=context)


def step_ratio_bound(cfg: GateConfig, aspect: float, d_mean: float | None,
                     e_obs: float) -> float:
    """Allowed step-length ratio: grows with track ellipse elongation and
    with the noise floor relative to the mean step."""
    a = max(1.0, aspect)
    if not math.isfinite(a):
        return math.inf
    noise_term = 0.0
    if d_mean is not None and d_mean > 0:
        noise_term = 10.0 * cfg.sigma_vbs / d_mean
    elif d_mean == 0 or d_mean is None:
        noise_term = math.inf
    r = (1.0 + 0.5 * a + noise_term) * (1.0 + e_obs)
    return max(r, cfg.r_max_floor)


def min_interior_angle(cfg: GateConfig, d_k: float, d_mean: float | None,
                       e_obs: float) -> float:
    """Minimum allowed interior angle for the current step."""
    floor = 10.0 * cfg.sigma_vbs
    denom = max(d_mean if d_mean is not None else 0.0, floor)
    ratio = d_k / denom if denom > 0 else 1.0
    return min(PSI_CAP, PSI_CAP * ratio) * (1.0 - e_obs)


@dataclass
class GateContext:
    """The track history a gating decision needs.

    prev1/prev2: last two track points (prev2 None for one-point tracks);
    d_values/zeta_values/psi_values: step statistics of the current
    segment over measured points. prev1_measured/prev2_measured flag
    whether the anchors are real measurements; shape-sensitive rules are
    skipped over predicted (placeholder) anchors.
    """

    prev1: np.ndarray
    prev2: np.ndarray | None = None
    d_values: list = field(default_factory=list)
    zeta_values: list = field(default_factory=list)
    psi_values: list = field(default_factory=list)
    aspect: float = 1.0
    prev1_measured: bool = True
    prev2_measured: bool = True

    @property
    def d_mean(self) -> float | None:
        if not self.d_values:
            return None
        return float(np.mean(self.d_values))


@dataclass(frozen=True)
class GateResult:
    passed: bool
    failed_rules: tuple
    geometry: StepGeometry


def gate_candidate(ctx: GateContext, candidate: np.ndarray, dt_minutes: float,
                   cfg: GateConfig, e_obs: float,
                   region: ErrorRegion | None = None) -> GateResult:
    """Apply the five rules to a candidate continuation point."""
    geom = step_geometry(ctx.prev2, ctx.prev1, candidate)
    failed = []
    d_mean = ctx.d_mean

    # Steps hinged on a predicted fill-in anchor measure prediction error,
    # not target kinematics, so the step-based rules (1 and 2) only run
    # from a measured anchor; region containment still applies.
    # Rule 1: maximum angular rate.
    if ctx.prev1_measured and geom.d >= cfg.d_max * dt_minutes:
        failed.append(1)

    # Rule 2: step-length consistency (needs at least one recorded step).
    if ctx.d_values and ctx.prev1_measured:
        r_max = step_ratio_bound(cfg, ctx.aspect, d_mean, e_obs)
        if math.isfinite(r_max):
            j = min(cfg.j_window, len(ctx.d_values))
            avg = float(np.mean(ctx.d_values[-j:]))
            d_prev = ctx.d_values[-1]
            ok = True
            if avg > 0:
                ok = (avg / r_max) < geom.d < (avg * r_max)
            if ok and d_prev > 0:
                ratio = geom.d / d_prev
                ok = (1.0 / r_max) < ratio < r_max
            if not ok:
                failed.append(2)

    anchors_measured = ctx.prev1_measured and ctx.prev2_measured

    # Rule 3: minimum interior angle (closed comparison). Interior angles
    # measured against predicted anchors mix model error into the shape
    # test, so the rule only runs over measured anchors.
    if geom.psi is not None and ctx.d_values and anchors_measured:
        if geom.psi < min_interior_angle(cfg, geom.d, d_mean, e_obs):
            failed.append(3)

    # Rule 4: consistent turn direction, only when the track is clearly
    # curving (both this turn and the previous one substantial) and above
    # the noise floor. Near-straight stretches give unreliable turn signs,
    # as do turns hinged on predicted anchors.
    if (len(ctx.zeta_values) >= 2 and geom.psi is not None
            and anchors_measured
            and abs(math.pi - geom.psi) > math.pi / 10.0
            and geom.d > 10.0 * cfg.sigma_vbs):
        def _wrap(x):
            return (x + math.pi) % (2 * math.pi) - math.pi
        prev_turn = _wrap(ctx.zeta_values[-1] - ctx.zeta_values[-2])
        if abs(prev_turn) > math.pi / 10.0:
            now_turn = _wrap(geom.zeta - ctx.zeta_values[-1])
            if now_turn != 0 and math.copysign(1.0, now_turn) \
                    != math.copysign(1.0, prev_turn):
                failed.append(4)

    # Rule 5: error region (needs an established region).
    if region is not None and ctx.prev2 is not None:
        if not region.contains(candidate):
            failed.append(5)

    return GateResult(passed=not failed, failed_rules=tuple(failed),
                      geometry=geom)
