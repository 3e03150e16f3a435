"""Parametric bearing motion models and track geometry.

A target's bearing history in the tracking frame follows a six-constant
harmonic form in the observer's true anomaly f:

    elevation = (r/a) * (x1 - x2*(cos(f - x3) + (e/2) cos(2f - x3)))
    azimuth   = (r/a) * (x4 + x5*sin(f + argp - x6))

where r, a, e, argp describe the observer. The constants are scaled images
of the relative orbital elements, so the model is linear in a transformed
coefficient space and three measurements at distinct anomalies determine
it. Differencing two tracks epoch by epoch cancels shared distortions
(notably oblateness effects common to the pair) and stays inside the same
model family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class IllConditionedFitError(RuntimeError):
    """Fit abscissas do not constrain the model (condition number over cap)."""


MAX_CONDITION = 1e10


@dataclass(frozen=True)
class ObserverEpoch:
    """Observer quantities a model evaluation needs at one epoch."""

    f: float        # true anomaly [rad]
    argp: float     # argument of perigee [rad]
    e: float        # eccentricity
    r_over_a: float  # orbit radius over semimajor axis


def observer_epoch(elements) -> ObserverEpoch:
    """Build the per-epoch evaluation bundle from Keplerian elements."""
    f = elements.true_anomaly()
    r_over_a = (1.0 - elements.e ** 2) / (1.0 + elements.e * math.cos(f))
    return ObserverEpoch(f=f, argp=elements.argp, e=elements.e,
                         r_over_a=r_over_a)


@dataclass(frozen=True)
class ParametricModel:
    """Fitted six-constant bearing motion model.

    x = (x1..x6); residual norms are the elevation and azimuth residual
    2-norms of the fit; fit_rms is the combined per-sample RMS in rad.
    """

    x: np.ndarray
    n_points: int
    resid_elevation: float
    resid_azimuth: float
    fit_rms: float
    frame_tag: str = "raw"

    @property
    def resid_norm_sum(self) -> float:
        return self.resid_elevation + self.resid_azimuth


def _design_rows(ep: ObserverEpoch) -> tuple[np.ndarray, np.ndarray]:
    """Design-matrix rows for one epoch (elevation block, azimuth block)."""
    f, e, ra = ep.f, ep.e, ep.r_over_a
    row_e = np.array([
        ra * (math.cos(f) + 0.5 * e * math.cos(2.0 * f)),
        ra * (math.sin(f) + 0.5 * e * math.sin(2.0 * f)),
        ra,
    ])
    row_a = np.array([
        ra * math.cos(f + ep.argp),
        ra * math.sin(f + ep.argp),
        ra,
    ])
    return row_e, row_a


def fit_parametric_model(points: np.ndarray, epochs: list[ObserverEpoch],
                         frame_tag: str = "raw") -> ParametricModel:
    """Least-squares fit of the motion model to bearing points.

    points: (n, 2) array of (elevation, azimuth) [rad]; n >= 3 with
    distinct anomalies. Solved per axis with an SVD-based rank-revealing
    solver; raises IllConditionedFitError when the abscissas are
    degenerate.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n < 3 or len(epochs) != n:
        raise ValueError("need at least 3 points with matching epochs")
    a1 = np.empty((n, 3))
    a2 = np.empty((n, 3))
    for row, ep in enumerate(epochs):
        a1[row], a2[row] = _design_rows(ep)
    for mat in (a1, a2):
        sv = np.linalg.svd(mat, compute_uv=False)
        if sv[-1] <= 0 or sv[0] / sv[-1] > MAX_CONDITION:
            raise IllConditionedFitError(
                "degenerate fit abscissas (condition number over cap)")
    y1, res1, _, _ = np.linalg.lstsq(a1, pts[:, 0], rcond=None)
    y2, res2, _, _ = np.linalg.lstsq(a2, pts[:, 1], rcond=None)
    r_e = float(np.linalg.norm(a1 @ y1 - pts[:, 0]))
    r_a = float(np.linalg.norm(a2 @ y2 - pts[:, 1]))
    x = np.array([
        y1[2],
        math.hypot(y1[0], y1[1]),
        math.atan2(-y1[1], -y1[0]),
        y2[2],
        math.hypot(y2[0], y2[1]),
        math.atan2(-y2[0], y2[1]),
    ])
    rms = math.sqrt((r_e ** 2 + r_a ** 2) / (2.0 * n))
    return ParametricModel(x=x, n_points=n, resid_elevation=r_e,
                           resid_azimuth=r_a, fit_rms=rms,
                           frame_tag=frame_tag)


def _linear_coeffs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Model constants rewritten as the per-axis linear solve variables."""
    x = np.asarray(x, dtype=float)
    y1 = np.array([-x[1] * math.cos(x[2]), -x[1] * math.sin(x[2]), x[0]])
    y2 = np.array([-x[4] * math.sin(x[5]), x[4] * math.cos(x[5]), x[3]])
    return y1, y2


def fit_parametric_model_ridge(points: np.ndarray,
                               epochs: list[ObserverEpoch],
                               x_prior: np.ndarray, lam: float,
                               frame_tag: str = "raw") -> ParametricModel:
    """Least-squares model fit shrunk toward a prior model.

    Over a short arc the harmonic regressors are nearly collinear, so an
    unconstrained fit lets measurement noise swing the coefficients by
    orders more than any real orbit change. Adding a quadratic pull of
    weight lam toward x_prior leaves the data in charge of the directions
    the arc actually determines and parks the rest at the prior, which
    keeps coefficient differences against that prior meaningful.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n < 1 or len(epochs) != n:
        raise ValueError("need at least 1 point with matching epochs")
    if lam <= 0:
        raise ValueError("lam must be positive")
    a1 = np.empty((n, 3))
    a2 = np.empty((n, 3))
    for row, ep in enumerate(epochs):
        a1[row], a2[row] = _design_rows(ep)
    p1, p2 = _linear_coeffs(x_prior)
    root = math.sqrt(lam)
    tail = root * np.eye(3)
    y1, _, _, _ = np.linalg.lstsq(np.vstack([a1, tail]),
                                  np.concatenate([pts[:, 0], root * p1]),
                                  rcond=None)
    y2, _, _, _ = np.linalg.lstsq(np.vstack([a2, tail]),
                                  np.concatenate([pts[:, 1], root * p2]),
                                  rcond=None)
    r_e = float(np.linalg.norm(a1 @ y1 - pts[:, 0]))
    r_a = float(np.linalg.norm(a2 @ y2 - pts[:, 1]))
    x = np.array([
        y1[2],
        math.hypot(y1[0], y1[1]),
        math.atan2(-y1[1], -y1[0]),
        y2[2],
        math.hypot(y2[0], y2[1]),
        math.atan2(-y2[0], y2[1]),
    ])
    rms = math.sqrt((r_e ** 2 + r_a ** 2) / (2.0 * n))
    return ParametricModel(x=x, n_points=n, resid_elevation=r_e,
                           resid_azimuth=r_a, fit_rms=rms,
                           frame_tag=frame_tag)


def predict_bearing(model: ParametricModel, ep: ObserverEpoch) -> np.ndarray:
    """Model evaluation: (elevation, azimuth) at the given observer epoch."""
    x = model.x
    f, e, ra = ep.f, ep.e, ep.r_over_a
    elev = ra * (x[0] - x[1] * (math.cos(f - x[2])
                                + 0.5 * e * math.cos(2.0 * f - x[2])))
    azim = ra * (x[3] + x[4] * math.sin(f + ep.argp - x[5]))
    return np.array([elev, azim])


def fallback_predict(points: np.ndarray) -> np.ndarray:
    """Prediction without a model: repeat a single point, or linearly
    extrapolate the last step of two or more points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("need at least one point")
    if pts.shape[0] == 1:
        return pts[0].copy()
    return 2.0 * pts[-1] - pts[-2]


def invert_model_for_f(model: ParametricModel, point: np.ndarray,
                       ep_seed: ObserverEpoch, half_window: float = math.pi / 4,
                       tol: float = 1e-8) -> float:
    """True anomaly at which the model best matches a measured point.

    Golden-section search over [f_seed - w, f_seed + w] on squared bearing
    distance. A model with no harmonic content is flat everywhere; the seed
    anomaly is returned in that case.
    """
    if abs(model.x[1]) < 1e-15 and abs(model.x[4]) < 1e-15:
        return ep_seed.f
    target = np.asarray(point, dtype=float)
    e, argp = ep_seed.e, ep_seed.argp
    eta2 = 1.0 - e ** 2

    def objective(f):
        ra = eta2 / (1.0 + e * math.cos(f))
        trial = ObserverEpoch(f=f, argp=argp, e=e, r_over_a=ra)
        d = predict_bearing(model, trial) - target
        return float(d @ d)

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = ep_seed.f - half_window, ep_seed.f + half_window
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = objective(c), objective(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = objective(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = objective(d)
    return 0.5 * (lo + hi)


# ===================== track geometry =====================


@dataclass(frozen=True)
class StepGeometry:
    """Geometry of one track step ending at point index k.

    d: step length; zeta: step phase atan2(d_azimuth, d_elevation);
    psi: interior angle at the previous point between the reversed prior
    step and this step (pi for straight-line continuation), None when no
    prior step or a zero-length step makes it undefined.
    """

    d: float
    zeta: float
    psi: float | None


def step_geometry(prev2: np.ndarray | None, prev1: np.ndarray,
                  cand: np.ndarray) -> StepGeometry:
    """Step geometry for a candidate point following prev1 (and prev2)."""
    v = np.asarray(cand, dtype=float) - np.asarray(prev1, dtype=float)
    d = float(np.hypot(v[0], v[1]))
    zeta = math.atan2(v[1], v[0]) if d > 0 else 0.0
    psi = None
    if prev2 is not None and d > 1e-15:
        u = np.asarray(prev2, dtype=float) - np.asarray(prev1, dtype=float)
        du = float(np.hypot(u[0], u[1]))
        if du > 1e-15:
            c = float(u @ v) / (du * d)
            psi = math.acos(max(-1.0, min(1.0, c)))
    return StepGeometry(d=d, zeta=zeta, psi=psi)


@dataclass
class TrackStats:
    """Running segment statistics over steps ending at measured points."""

    d_values: list = field(default_factory=list)
    psi_values: list = field(default_factory=list)

    @property
    def d_mean(self) -> float | None:
        if not self.d_values:
            return None
        return float(np.mean(self.d_values))

    @property
    def psi_mean(self) -> float | None:
        if not self.psi_values:
            return None
        return float(np.mean(self.psi_values))

    def push(self, geom: StepGeometry):
        self.d_values.append(geom.d)
        if geom.psi is not None:
            self.psi_values.append(geom.psi)


def difference_points(points_a: np.ndarray, points_b: np.ndarray) -> np.ndarray:
    """Epoch-aligned elementwise difference of two bearing tracks."""
    a = np.asarray(points_a, dtype=float)
    b = np.asarray(points_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("differenced tracks must share epochs")
    return a - b
