"""Relative-orbit dynamics tests.

Derived expected values come from independent oracles in this file:
two-body truth differencing, conic least-squares fits, and numerical
impulse experiments.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from samus.constants import MU_EARTH
from samus.frames import (
    InertialState,
    KeplerianElements,
    elements_to_state,
    rotation_chain,
    solve_kepler,
    true_to_mean,
    wrap_angle,
)
from samus.roe import (
    EroeState,
    RoeState,
    apply_impulse_to_eroe,
    control_input_matrix,
    ellipse_geometry,
    eroe_from_roe,
    eroe_linear_map,
    eroe_to_rtn,
    j2_secular,
    j2_short_period,
    oe_from_roe,
    roe_from_oe,
)

A_REF = 6878.0

# Reference three-target formation used across the suite: km-scaled
# relative elements (da, dlambda, dex, dey, dix, diy) about a near-polar
# near-circular observer.
OBSERVER_REF = KeplerianElements(a=A_REF, e=0.001, i=math.radians(91.0),
                                 raan=0.0, argp=0.0, mean_anomaly=0.0)
TARGET_ROE_KM = [
    (-0.1, -60.0, -0.05, -0.1, -0.5, 0.05),
    (-0.05, -50.0, 0.5, 0.3, -0.45, 0.1),
    (0.0, -40.0, 0.15, 0.0, -0.15, 0.2),
]


def _roe_km(vals) -> RoeState:
    return RoeState(*(np.asarray(vals) / A_REF))


def test_roe_oe_round_trip_reference_formation():
    for vals in TARGET_ROE_KM:
        roe = _roe_km(vals)
        target = oe_from_roe(OBSERVER_REF, roe)
        back = roe_from_oe(OBSERVER_REF, target)
        assert np.allclose(back.as_array() * A_REF, vals, atol=1e-9)


def test_roe_oe_round_trip_random():
    rng = np.random.default_rng(21)
    for _ in range(300):
        obs = KeplerianElements(
            a=rng.uniform(6700, 30000), e=rng.uniform(0.0001, 0.7),
            i=rng.uniform(0.1, math.pi - 0.1), raan=rng.uniform(0, 6.28),
            argp=rng.uniform(0, 6.28), mean_anomaly=rng.uniform(0, 6.28))
        roe = RoeState(*(rng.uniform(-1, 1, size=6) * 1e-3))
        back = roe_from_oe(obs, oe_from_roe(obs, roe))
        assert np.allclose(back.as_array(), roe.as_array(), atol=1e-12)


def test_roe_rejects_equatorial_observer():
    eq = KeplerianElements(a=7000, e=0.001, i=0.0, raan=0, argp=0,
                           mean_anomaly=0)
    with pytest.raises(ValueError):
        roe_from_oe(eq, OBSERVER_REF)


def test_eroe_identity_for_circular_observer():
    obs = KeplerianElements(a=7000, e=0.0, i=1.0, raan=0.2, argp=0.4,
                            mean_anomaly=0.1)
    roe = RoeState(1e-4, -2e-3, 3e-5, -4e-5, 5e-5, -6e-5)
    out = eroe_from_roe(obs, roe)
    assert np.allclose(out.as_array(), roe.as_array(), atol=0)


def test_eroe_map_is_linear():
    rng = np.random.default_rng(22)
    obs = KeplerianElements(a=9000, e=0.3, i=1.1, raan=0.0, argp=0.8,
                            mean_anomaly=0.0)
    mat = eroe_linear_map(obs)
    for _ in range(50):
        x = rng.normal(size=6) * 1e-3
        y = rng.normal(size=6) * 1e-3
        lhs = eroe_from_roe(obs, RoeState(*(x + y))).as_array()
        rhs = (eroe_from_roe(obs, RoeState(*x)).as_array()
               + eroe_from_roe(obs, RoeState(*y)).as_array())
        assert np.allclose(lhs, rhs, atol=1e-15)
        assert np.allclose(mat @ x, eroe_from_roe(obs, RoeState(*x)).as_array(),
                           atol=1e-18)


def _rtn_matrix(state: InertialState) -> np.ndarray:
    return rotation_chain(state).matrix("P", "R")


def _truth_relative_rtn(obs_el: KeplerianElements,
                        tgt_el: KeplerianElements) -> np.ndarray:
    so = elements_to_state(obs_el)
    st = elements_to_state(tgt_el)
    return _rtn_matrix(so) @ (st.r - so.r)


@pytest.mark.parametrize("e_obs", [0.0005, 0.1, 0.4])
def test_eroe_to_rtn_matches_truth_differencing(e_obs):
    # Oracle: difference two-body Cartesian states rotated into the
    # observer's radial/along-track/cross-track frame.
    rng = np.random.default_rng(int(e_obs * 1000) + 3)
    for _ in range(60):
        obs = KeplerianElements(
            a=rng.uniform(6800, 12000), e=e_obs,
            i=rng.uniform(0.3, math.pi - 0.3), raan=rng.uniform(0, 6.28),
            argp=rng.uniform(0, 6.28), mean_anomaly=rng.uniform(0, 6.28))
        # About 1 km scale offsets.
        roe = RoeState(*(rng.uniform(-1, 1, size=6) / obs.a))
        tgt = oe_from_roe(obs, roe)
        truth = _truth_relative_rtn(obs, tgt)
        pred = obs.a * eroe_to_rtn(obs, eroe_from_roe(obs, roe))
        err = np.linalg.norm(pred - truth)
        assert err < 0.01 * np.linalg.norm(truth)


def test_eroe_to_rtn_reference_formation_scale():
    # Formation-scale separations stay within one percent as well.
    for vals in TARGET_ROE_KM:
        roe = _roe_km(vals)
        for m in np.linspace(0, 2 * math.pi, 9):
            obs = KeplerianElements(a=A_REF, e=0.001,
                                    i=math.radians(91.0), raan=0.0,
                                    argp=0.0, mean_anomaly=float(m))
            tgt = oe_from_roe(obs, roe)
            truth = _truth_relative_rtn(obs, tgt)
            pred = obs.a * eroe_to_rtn(obs, eroe_from_roe(obs, roe))
            assert np.linalg.norm(pred - truth) < 0.01 * np.linalg.norm(truth)


def test_eroe_to_rtn_circular_limit_classical_map():
    # For a circular observer with argp = 0 the map must reduce to the
    # classical near-circular form.
    rng = np.random.default_rng(24)
    for _ in range(100):
        obs = KeplerianElements(a=7000, e=0.0, i=1.3, raan=0.5, argp=0.0,
                                mean_anomaly=rng.uniform(0, 6.28))
        roe = RoeState(*(rng.uniform(-1, 1, size=6) * 1e-4))
        f = obs.true_anomaly()
        de, di = roe.de, roe.di
        phe, phi = roe.phase_e, roe.phase_i
        expected = np.array([
            roe.da - de * math.cos(f - phe),
            roe.dlambda + 2.0 * de * math.sin(f - phe),
            di * math.sin(f + obs.argp - phi),
        ])
        out = eroe_to_rtn(obs, eroe_from_roe(obs, roe))
        assert np.allclose(out, expected, atol=1e-12)


# ===================== projected ellipse =====================


def _fit_conic(x, y):
    """Algebraic least-squares conic fit; returns (semi_axes, angle)."""
    d = np.column_stack([x ** 2, x * y, y ** 2, x, y, np.ones_like(x)])
    _, _, vt = np.linalg.svd(d, full_matrices=False)
    A, B, C, D, E, F = vt[-1]
    # Center.
    den = 4 * A * C - B ** 2
    cx = (B * E - 2 * C * D) / den
    cy = (B * D - 2 * A * E) / den
    # Translate to center and diagonalize the quadratic form.
    Fc = A * cx ** 2 + B * cx * cy + C * cy ** 2 + D * cx + E * cy + F
    M = np.array([[A, B / 2], [B / 2, C]]) / (-Fc)
    evals, evecs = np.linalg.eigh(M)
    axes = 1.0 / np.sqrt(evals)
    ang = math.atan2(evecs[1, np.argmax(axes)], evecs[0, np.argmax(axes)])
    return np.sort(axes)[::-1], ang


def test_ellipse_geometry_special_cases():
    c = 2e-4
    # Equal magnitudes in phase: circle.
    circ = ellipse_geometry(RoeState(0, 0, c, 0, c, 0))
    assert circ.semimajor == pytest.approx(c, rel=1e-12)
    assert circ.semiminor == pytest.approx(c, rel=1e-12)
    # Inclination offset only: degenerate line along the cross-track axis.
    line = ellipse_geometry(RoeState(0, 0, 0, 0, c, 0))
    assert line.semimajor == pytest.approx(c, rel=1e-12)
    assert line.semiminor == pytest.approx(0.0, abs=1e-15)
    # Quadrature: line at 45 degrees, length sqrt(2) c.
    quad = ellipse_geometry(RoeState(0, 0, c, 0, 0, c))
    assert quad.semimajor == pytest.approx(c * math.sqrt(2), rel=1e-12)
    assert quad.semiminor == pytest.approx(0.0, abs=1e-15)
    assert abs(abs(quad.orientation) - math.pi / 4) < 1e-12


def test_ellipse_geometry_matches_sampled_track_fit():
    # Oracle: sample the projected radial/cross-track motion of a circular
    # observer and fit a conic; compare area and orientation.
    rng = np.random.default_rng(25)
    for _ in range(40):
        de_vec = rng.uniform(-1, 1, size=2) * 1e-3
        di_vec = rng.uniform(-1, 1, size=2) * 1e-3
        roe = RoeState(0.0, 0.0, de_vec[0], de_vec[1], di_vec[0], di_vec[1])
        if roe.de < 1e-4 or roe.di < 1e-4:
            continue
        ratio = min(roe.de, roe.di) / max(roe.de, roe.di)
        if ratio < 0.05 or abs(math.sin(roe.phase_e - roe.phase_i)) < 0.05:
            continue  # nearly degenerate: conic fit unreliable
        us = np.linspace(0, 2 * math.pi, 360, endpoint=False)
        x = -roe.de * np.cos(us - roe.phase_e)
        y = roe.di * np.sin(us - roe.phase_i)
        axes, ang = _fit_conic(x, y)
        geo = ellipse_geometry(roe)
        assert geo.semimajor * geo.semiminor == pytest.approx(
            axes[0] * axes[1], rel=1e-6)
        assert geo.semimajor == pytest.approx(axes[0], rel=1e-6)
        # Orientation agrees modulo pi.
        d = abs(wrap_angle(2 * (geo.orientation - ang))) / 2
        assert d < 1e-5


# ===================== oblateness terms =====================


def test_j2_short_period_zero_inclination_has_no_inclination_term():
    _, di_sp = j2_short_period(a=7000.0, i=0.0, u=0.7)
    assert np.allclose(di_sp, 0.0, atol=1e-18)


def test_j2_short_period_differential_magnitude():
    # Oracle for the advertised effect: at 100 km along-track separation
    # the differential oscillation, viewed as a bearing angle, peaks at a
    # few hundred arcseconds.
    a, i = 6878.0, math.radians(91.0)
    sep = 100.0
    du = sep / a
    us = np.linspace(0, 2 * math.pi, 720)
    worst = 0.0
    for u in us:
        de0, di0 = j2_short_period(a, i, u)
        de1, di1 = j2_short_period(a, i, u + du)
        diff = np.concatenate([de1 - de0, di1 - di0])
        worst = max(worst, float(np.max(np.abs(diff))))
    bearing_arcsec = worst * a / sep / (math.pi / (180 * 3600))
    assert 100.0 < bearing_arcsec < 1500.0


def test_j2_secular_identity_and_invariants():
    obs = KeplerianElements(a=6878.0, e=0.001, i=math.radians(91.0),
                            raan=0, argp=0, mean_anomaly=0)
    roe = RoeState(1e-5, 3e-3, 2e-5, -1e-5, 4e-5, 1e-5)
    out0 = j2_secular(roe, obs, 0.0)
    assert np.allclose(out0.as_array(), roe.as_array(), atol=0)
    out = j2_secular(roe, obs, 5 * obs.period)
    assert out.de == pytest.approx(roe.de, rel=1e-12)
    assert out.da == roe.da and out.dlambda == roe.dlambda
    assert out.dix == roe.dix
    # Critical inclination freezes the eccentricity-vector rotation.
    crit = KeplerianElements(a=6878.0, e=0.001,
                             i=math.acos(math.sqrt(0.2)), raan=0, argp=0,
                             mean_anomaly=0)
    outc = j2_secular(roe, crit, 5 * crit.period)
    assert outc.dex == pytest.approx(roe.dex, abs=1e-15)
    assert outc.dey == pytest.approx(roe.dey, abs=1e-15)


# ===================== maneuvers =====================


def _roe_change_oracle(obs: KeplerianElements, dv_rtn, actor_obs: bool,
                       scale: float = 1.0) -> np.ndarray:
    """Numerical oracle: apply the impulse to Cartesian truth and
    re-difference the osculating elements."""
    from samus.frames import state_to_elements
    tgt = oe_from_roe(obs, RoeState(0.5e-4, -3e-3, 1e-4, -0.5e-4, 1e-4, 0.6e-4))
    roe0 = roe_from_oe(obs, tgt).as_array()
    so, st = elements_to_state(obs), elements_to_state(tgt)
    dv = np.asarray(dv_rtn) * scale
    if actor_obs:
        rot = _rtn_matrix(so).T
        so = InertialState(so.r, so.v + rot @ dv)
        obs2, tgt2 = state_to_elements(so), tgt
    else:
        rot = _rtn_matrix(st).T
        st = InertialState(st.r, st.v + rot @ dv)
        obs2, tgt2 = obs, state_to_elements(st)
    roe1 = roe_from_oe(obs2, tgt2).as_array()
    return (roe1 - roe0) / scale


@pytest.mark.parametrize("e_obs", [0.0, 0.1, 0.4])
def test_control_matrix_against_numerical_impulse(e_obs):
    rng = np.random.default_rng(int(e_obs * 100) + 7)
    for _ in range(25):
        obs = KeplerianElements(
            a=rng.uniform(6800, 12000), e=e_obs,
            i=rng.uniform(0.3, math.pi - 0.3), raan=rng.uniform(0, 6.28),
            argp=rng.uniform(0, 6.28), mean_anomaly=rng.uniform(0, 6.28))
        b = control_input_matrix(obs)
        dv = rng.normal(size=3)
        dv /= np.linalg.norm(dv)
        # Small impulse keeps the finite difference in the linear regime.
        got = b @ dv
        oracle = _roe_change_oracle(obs, dv, actor_obs=True, scale=1e-6)
        dominant = np.max(np.abs(oracle))
        assert np.max(np.abs(got - oracle)) < 0.05 * dominant
        # Target burns flip the sign.
        oracle_t = _roe_change_oracle(obs, dv, actor_obs=False, scale=1e-6)
        assert np.max(np.abs(-got - oracle_t)) < 0.05 * dominant


def test_control_matrix_small_e_limit_continuous():
    base = dict(a=7000.0, i=1.1, raan=0.4, argp=0.9, mean_anomaly=1.3)
    b_limit = control_input_matrix(KeplerianElements(e=0.0, **base))
    b_near = control_input_matrix(KeplerianElements(e=1e-5, **base))
    assert np.allclose(b_limit, b_near, rtol=0, atol=2e-4 * np.abs(b_near).max())


def test_control_matrix_circular_tangential_burn():
    obs = KeplerianElements(a=7000.0, e=0.0, i=1.0, raan=0, argp=0,
                            mean_anomaly=0.7)
    b = control_input_matrix(obs)
    dv = 1e-3
    assert b[0, 1] * dv == pytest.approx(-2.0 * dv / (obs.a * obs.n), rel=1e-9)


def test_apply_impulse_matches_linearized_truth():
    rng = np.random.default_rng(29)
    for _ in range(20):
        obs = KeplerianElements(
            a=rng.uniform(6800, 9000), e=rng.uniform(0.001, 0.3),
            i=rng.uniform(0.4, 2.5), raan=rng.uniform(0, 6.28),
            argp=rng.uniform(0, 6.28), mean_anomaly=rng.uniform(0, 6.28))
        roe = RoeState(0.5e-4, -3e-3, 1e-4, -0.5e-4, 1e-4, 0.6e-4)
        eroe = eroe_from_roe(obs, roe)
        dv = rng.normal(size=3) * 1e-6
        for actor_obs in (True, False):
            got = apply_impulse_to_eroe(eroe, obs, dv, actor_obs).as_array()
            d_roe_oracle = _roe_change_oracle(obs, dv, actor_obs, scale=1.0)
            expect = eroe.as_array() + eroe_linear_map(obs) @ d_roe_oracle
            delta = np.abs(got - expect)
            scale = max(np.max(np.abs(eroe_linear_map(obs) @ d_roe_oracle)),
                        1e-15)
            assert np.max(delta) < 0.05 * scale
