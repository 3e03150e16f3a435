"""Kinematic gating rule tests."""

from __future__ import annotations

import math

import numpy as np
import pytest

from samus.constants import ARCSEC
from samus.gating import (
    ErrorRegion,
    GateConfig,
    GateContext,
    build_error_region,
    gate_candidate,
    min_interior_angle,
    step_ratio_bound,
)

CFG = GateConfig()
DT_MIN = 2.0  # scan cadence in minutes


def _circle_context(n=5, radius=0.015, step_deg=30.0, sigma=CFG.sigma_vbs):
    """History of points on a circle, one step per scan."""
    angles = np.radians(step_deg) * np.arange(n)
    pts = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    ctx = GateContext(prev1=pts[-1], prev2=pts[-2])
    for k in range(1, n):
        v = pts[k] - pts[k - 1]
        ctx.d_values.append(float(np.hypot(*v)))
        ctx.zeta_values.append(math.atan2(v[1], v[0]))
        if k >= 2:
            u = pts[k - 2] - pts[k - 1]
            c = float(u @ v) / (np.hypot(*u) * np.hypot(*v))
            ctx.psi_values.append(math.acos(max(-1, min(1, c))))
    next_angle = np.radians(step_deg) * n
    nxt = radius * np.array([math.cos(next_angle), math.sin(next_angle)])
    return ctx, pts, nxt


def test_circular_continuation_passes_all_rules():
    # Equal steps turning 30 degrees per scan: interior angle is exactly
    # 150 degrees, the cap, and must still pass (closed comparison).
    ctx, _, nxt = _circle_context()
    res = gate_candidate(ctx, nxt, DT_MIN, CFG, e_obs=0.0)
    assert res.passed, res.failed_rules
    assert res.geometry.psi == pytest.approx(math.radians(150.0), abs=1e-9)


def test_rule1_blocks_fast_step():
    ctx, _, _ = _circle_context()
    fast = ctx.prev1 + np.array([CFG.d_max * DT_MIN * 1.5, 0.0])
    res = gate_candidate(ctx, fast, DT_MIN, CFG, e_obs=0.0)
    assert 1 in res.failed_rules


def test_rule2_blocks_inconsistent_step_length():
    ctx, _, nxt = _circle_context()
    # A tiny step after consistent large ones violates both ratio tests.
    tiny = ctx.prev1 + 1e-5 * (nxt - ctx.prev1) / np.linalg.norm(nxt - ctx.prev1)
    res = gate_candidate(ctx, tiny, DT_MIN, CFG, e_obs=0.0)
    assert 2 in res.failed_rules


def test_rule3_blocks_sharp_kink():
    ctx, pts, _ = _circle_context()
    # Reverse back toward the second-to-last point: interior angle near 0.
    kink = ctx.prev1 + 0.9 * (pts[-2] - pts[-1])
    res = gate_candidate(ctx, kink, DT_MIN, CFG, e_obs=0.0)
    assert 3 in res.failed_rules


def test_rule4_blocks_turn_direction_flip():
    # Build a strongly curving history turning one way, then offer a
    # candidate turning the other way, with steps far above noise.
    step = 40.0 * 10.0 * ARCSEC
    pts = [np.array([0.0, 0.0])]
    heading = 0.0
    for _ in range(4):
        heading += 0.5
        pts.append(pts[-1] + step * np.array([math.cos(heading),
                                              math.sin(heading)]))
    ctx = GateContext(prev1=pts[-1], prev2=pts[-2])
    for k in range(1, len(pts)):
        v = pts[k] - pts[k - 1]
        ctx.d_values.append(float(np.hypot(*v)))
        ctx.zeta_values.append(math.atan2(v[1], v[0]))
    heading_back = heading - 1.0
    cand = pts[-1] + step * np.array([math.cos(heading_back),
                                      math.sin(heading_back)])
    cfg = GateConfig(d_max=1.0)  # keep rule 1 out of the way
    res = gate_candidate(ctx, cand, DT_MIN, cfg, e_obs=0.0)
    assert 4 in res.failed_rules
    # The same flip below the noise floor is not judged.
    scale = 0.05
    ctx2 = GateContext(prev1=pts[-1] * scale, prev2=pts[-2] * scale)
    ctx2.d_values = [d * scale for d in ctx.d_values]
    ctx2.zeta_values = list(ctx.zeta_values)
    res2 = gate_candidate(ctx2, cand * scale, DT_MIN, cfg, e_obs=0.0)
    assert 4 not in res2.failed_rules


def test_rule5_error_region():
    ctx, _, nxt = _circle_context()
    region = build_error_region(nxt, ctx.d_mean, CFG, e_obs=0.0)
    res = gate_candidate(ctx, nxt, DT_MIN, CFG, e_obs=0.0, region=region)
    assert res.passed
    outside = nxt + np.array([region.radius * 3.0, 0.0])
    res2 = gate_candidate(ctx, outside, DT_MIN, CFG, e_obs=0.0, region=region)
    assert 5 in res2.failed_rules


def test_error_region_radius_and_gap_doubling():
    pred = np.array([0.01, -0.01])
    r_normal = build_error_region(pred, 1e-3, CFG, e_obs=0.0)
    assert r_normal.radius == pytest.approx(2e-3)  # 2 * d_mean dominates
    r_noise = build_error_region(pred, 1e-5, CFG, e_obs=0.0)
    assert r_noise.radius == pytest.approx(10 * CFG.sigma_vbs)
    r_gap = build_error_region(pred, 1e-3, CFG, e_obs=0.0, context="gap")
    assert r_gap.radius == pytest.approx(4e-3)
    r_ecc = build_error_region(pred, 1e-3, CFG, e_obs=0.3)
    assert r_ecc.radius == pytest.approx(2e-3 * 1.3)


def test_maneuver_region_wedge():
    pred = np.zeros(2)
    region = build_error_region(pred, 1e-4, CFG, e_obs=0.0,
                                context="maneuver", maneuver_phase=0.0)
    # Inside the circle.
    assert region.contains([1e-4, 0.0])
    # In the wedge beyond the circle, along the maneuver direction.
    far = np.array([0.8 * region.wedge_radius, 0.0])
    assert np.hypot(*far) > region.radius
    assert region.contains(far)
    # Same distance, off the wedge arc.
    ang = region.wedge_arc / 2 + 0.1
    off = 0.8 * region.wedge_radius * np.array([math.cos(ang), math.sin(ang)])
    assert not region.contains(off)
    # Beyond the wedge radius.
    assert not region.contains([region.wedge_radius * 1.1, 0.0])
    with pytest.raises(ValueError):
        build_error_region(pred, 1e-4, CFG, e_obs=0.0, context="maneuver")


def test_wedge_radius_uses_smaller_half_angle():
    assert CFG.wedge_radius == pytest.approx(0.2 * 0.5 * math.radians(10.0))


def test_step_ratio_bound_floor_and_growth():
    rng = np.random.default_rng(41)
    for _ in range(500):
        aspect = rng.uniform(0.1, 50.0)
        d_mean = rng.uniform(1e-6, 1e-2)
        e = rng.uniform(0.0, 0.8)
        r = step_ratio_bound(CFG, aspect, d_mean, e)
        assert r >= 1.5
    # Elongated track ellipses relax the bound.
    lo = step_ratio_bound(CFG, 1.0, 1e-3, 0.0)
    hi = step_ratio_bound(CFG, 10.0, 1e-3, 0.0)
    assert hi > lo


def test_min_interior_angle_cap():
    rng = np.random.default_rng(42)
    for _ in range(500):
        val = min_interior_angle(CFG, rng.uniform(0, 0.1),
                                 rng.uniform(1e-6, 1e-2), rng.uniform(0, 0.8))
        assert val <= 5 * math.pi / 6 + 1e-12
    # Small steps relative to the mean relax the requirement.
    small = min_interior_angle(CFG, 1e-5, 1e-3, 0.0)
    assert small < 5 * math.pi / 6 * 0.1


def test_gating_rotation_invariance():
    # The rules use distances and relative angles only; rotating the whole
    # scene must not change the outcome.
    rng = np.random.default_rng(43)
    for _ in range(100):
        ctx, pts, nxt = _circle_context(radius=rng.uniform(0.005, 0.03),
                                        step_deg=rng.uniform(10, 40))
        cand = nxt + rng.normal(scale=2e-4, size=2)
        base = gate_candidate(ctx, cand, DT_MIN, CFG, e_obs=0.0)
        th = rng.uniform(0, 2 * math.pi)
        rot = np.array([[math.cos(th), -math.sin(th)],
                        [math.sin(th), math.cos(th)]])
        ctx_r = GateContext(prev1=rot @ ctx.prev1, prev2=rot @ ctx.prev2,
                            d_values=list(ctx.d_values),
                            zeta_values=[z + th for z in ctx.zeta_values],
                            psi_values=list(ctx.psi_values))
        rot_res = gate_candidate(ctx_r, rot @ cand, DT_MIN, CFG, e_obs=0.0)
        assert rot_res.failed_rules == base.failed_rules


def test_region_monotonicity():
    # Enlarging the region can only turn failures into passes.
    rng = np.random.default_rng(44)
    for _ in range(300):
        center = rng.normal(scale=0.01, size=2)
        radius = rng.uniform(1e-4, 5e-3)
        p = center + rng.normal(scale=3e-3, size=2)
        small = ErrorRegion(center=center, radius=radius)
        big = ErrorRegion(center=center, radius=radius * rng.uniform(1, 5))
        if small.contains(p):
            assert big.contains(p)


def test_short_history_rules_are_vacuous():
    # One prior point: only the rate rule can fire.
    ctx = GateContext(prev1=np.array([0.0, 0.0]))
    ok = gate_candidate(ctx, np.array([1e-4, 0.0]), DT_MIN, CFG, e_obs=0.0)
    assert ok.passed
    far = gate_candidate(ctx, np.array([0.5, 0.0]), DT_MIN, CFG, e_obs=0.0)
    assert far.failed_rules == (1,)
