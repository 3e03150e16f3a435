"""Motion-model fitting, prediction, inversion, and track geometry tests."""

from __future__ import annotations

import math

import numpy as np
import pytest

from samus.frames import KeplerianElements, wrap_angle
from samus.motion import (
    IllConditionedFitError,
    ObserverEpoch,
    TrackStats,
    difference_points,
    fallback_predict,
    fit_parametric_model,
    invert_model_for_f,
    observer_epoch,
    predict_bearing,
    step_geometry,
)


def _epoch(f, e=0.001, argp=0.0):
    ra = (1.0 - e * e) / (1.0 + e * math.cos(f))
    return ObserverEpoch(f=f, argp=argp, e=e, r_over_a=ra)


def _random_model_x(rng):
    return np.array([
        rng.uniform(-2e-3, 2e-3),
        rng.uniform(1e-4, 5e-3),
        rng.uniform(-math.pi, math.pi),
        rng.uniform(-2e-3, 2e-3),
        rng.uniform(1e-4, 5e-3),
        rng.uniform(-math.pi, math.pi),
    ])


class _Synthetic:
    def __init__(self, x, e, argp):
        from samus.motion import ParametricModel
        self.model = ParametricModel(x=np.asarray(x, float), n_points=0,
                                     resid_elevation=0.0, resid_azimuth=0.0,
                                     fit_rms=0.0)
        self.e, self.argp = e, argp

    def point(self, f):
        return predict_bearing(self.model, _epoch(f, self.e, self.argp))


def test_fit_predict_round_trip_1000_cases():
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(1000):
        e = rng.uniform(0.0, 0.6)
        argp = rng.uniform(0, 2 * math.pi)
        x = _random_model_x(rng)
        syn = _Synthetic(x, e, argp)
        n = rng.integers(3, 12)
        f0 = rng.uniform(0, 2 * math.pi)
        fs = f0 + np.sort(rng.uniform(0.05, 2.5, size=n).cumsum())
        eps = [_epoch(f, e, argp) for f in fs]
        pts = np.array([syn.point(f) for f in fs])
        model = fit_parametric_model(pts, eps)
        # Round trip: predictions at held-out anomalies reproduce truth.
        for f in f0 + np.array([0.3, 1.7, 4.1]):
            got = predict_bearing(model, _epoch(f, e, argp))
            worst = max(worst, float(np.max(np.abs(got - syn.point(f)))))
    assert worst < 1e-9


def test_fit_recovers_constants():
    rng = np.random.default_rng(32)
    for _ in range(200):
        e = rng.uniform(0.0, 0.5)
        argp = rng.uniform(0, 2 * math.pi)
        x = _random_model_x(rng)
        syn = _Synthetic(x, e, argp)
        fs = np.linspace(0.1, 5.5, 9)
        model = fit_parametric_model(
            np.array([syn.point(f) for f in fs]),
            [_epoch(f, e, argp) for f in fs])
        assert model.x[0] == pytest.approx(x[0], abs=1e-10)
        assert model.x[1] == pytest.approx(x[1], abs=1e-10)
        assert abs(wrap_angle(model.x[2] - x[2])) < 1e-7
        assert model.x[3] == pytest.approx(x[3], abs=1e-10)
        assert model.x[4] == pytest.approx(x[4], abs=1e-10)
        assert abs(wrap_angle(model.x[5] - x[5])) < 1e-7


def test_three_points_determine_model():
    rng = np.random.default_rng(33)
    x = _random_model_x(rng)
    syn = _Synthetic(x, 0.01, 0.3)
    fs = [0.2, 1.4, 2.9]
    model = fit_parametric_model(
        np.array([syn.point(f) for f in fs]),
        [_epoch(f, 0.01, 0.3) for f in fs])
    assert model.resid_norm_sum < 1e-12
    assert model.n_points == 3


def test_fit_rejects_degenerate_anomalies():
    pts = np.zeros((3, 2))
    eps = [_epoch(1.0), _epoch(1.0), _epoch(1.0)]
    with pytest.raises(IllConditionedFitError):
        fit_parametric_model(pts, eps)


def test_fit_requires_three_points():
    with pytest.raises(ValueError):
        fit_parametric_model(np.zeros((2, 2)), [_epoch(0.1), _epoch(0.2)])


def test_fallback_predict():
    one = np.array([[0.01, -0.02]])
    assert np.allclose(fallback_predict(one), [0.01, -0.02])
    two = np.array([[0.0, 0.0], [0.01, 0.02]])
    assert np.allclose(fallback_predict(two), [0.02, 0.04])


def test_invert_model_recovers_anomaly():
    rng = np.random.default_rng(34)
    for _ in range(100):
        x = _random_model_x(rng)
        syn = _Synthetic(x, 0.05, 1.1)
        f_true = rng.uniform(1.0, 5.0)
        pt = syn.point(f_true)
        seed = _epoch(f_true + rng.uniform(-0.2, 0.2), 0.05, 1.1)
        model = fit_parametric_model(
            np.array([syn.point(f) for f in np.linspace(0.1, 6.0, 8)]),
            [_epoch(f, 0.05, 1.1) for f in np.linspace(0.1, 6.0, 8)])
        f_got = invert_model_for_f(model, pt, seed)
        assert abs(f_got - f_true) < 1e-6


def test_invert_flat_model_returns_seed():
    from samus.motion import ParametricModel
    flat = ParametricModel(x=np.array([1e-3, 0.0, 0.0, -2e-3, 0.0, 0.0]),
                           n_points=3, resid_elevation=0, resid_azimuth=0,
                           fit_rms=0)
    seed = _epoch(2.345)
    assert invert_model_for_f(flat, np.array([0.0, 0.0]), seed) == 2.345


def test_step_geometry_interior_angle():
    # Straight continuation: psi = pi.
    g = step_geometry(np.array([0.0, 0.0]), np.array([1.0, 0.0]),
                      np.array([2.0, 0.0]))
    assert g.psi == pytest.approx(math.pi)
    assert g.d == pytest.approx(1.0)
    assert g.zeta == pytest.approx(0.0)
    # Right-angle turn: psi = pi/2.
    g = step_geometry(np.array([0.0, 0.0]), np.array([1.0, 0.0]),
                      np.array([1.0, 1.0]))
    assert g.psi == pytest.approx(math.pi / 2)
    # No prior step: psi undefined.
    g = step_geometry(None, np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    assert g.psi is None


def test_step_geometry_twelve_gon():
    # Twelve evenly spaced points per revolution give interior angles of
    # 150 degrees (oracle: regular polygon construction).
    angles = np.linspace(0, 2 * math.pi, 13)[:3]
    pts = np.column_stack([np.cos(angles), np.sin(angles)])
    g = step_geometry(pts[0], pts[1], pts[2])
    assert g.psi == pytest.approx(math.radians(150.0), abs=1e-12)


def test_track_stats_running_means():
    stats = TrackStats()
    g1 = step_geometry(None, np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    stats.push(g1)
    g2 = step_geometry(np.array([0.0, 0.0]), np.array([1.0, 0.0]),
                       np.array([1.0, 2.0]))
    stats.push(g2)
    assert stats.d_mean == pytest.approx(1.5)
    assert stats.psi_mean == pytest.approx(math.pi / 2)


def test_difference_points_shape_guard():
    with pytest.raises(ValueError):
        difference_points(np.zeros((3, 2)), np.zeros((4, 2)))


def test_differenced_tracks_stay_in_model_family():
    # The model family is closed under epochwise differencing: the fit of a
    # differenced pair of exact model tracks is exact.
    rng = np.random.default_rng(36)
    for _ in range(50):
        e, argp = rng.uniform(0, 0.3), rng.uniform(0, 6.28)
        sa = _Synthetic(_random_model_x(rng), e, argp)
        sb = _Synthetic(_random_model_x(rng), e, argp)
        fs = np.linspace(0.2, 5.8, 10)
        diff = difference_points(
            np.array([sa.point(f) for f in fs]),
            np.array([sb.point(f) for f in fs]))
        model = fit_parametric_model(diff, [_epoch(f, e, argp) for f in fs],
                                     frame_tag="diff")
        assert model.resid_norm_sum < 1e-12


def test_observer_epoch_from_elements():
    el = KeplerianElements(a=7000, e=0.2, i=1.0, raan=0, argp=0.5,
                           mean_anomaly=1.0)
    ep = observer_epoch(el)
    f = el.true_anomaly()
    assert ep.f == pytest.approx(f)
    assert ep.r_over_a == pytest.approx(
        (1 - 0.2 ** 2) / (1 + 0.2 * math.cos(f)))
