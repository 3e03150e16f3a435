"""Orbit state types, Kepler machinery, and observation-frame geometry.

Conventions:
  * P: inertial frame (planet centered).
  * R: radial / along-track / cross-track frame of the observer. x along
    position, z along orbital angular momentum, y completing the triad.
  * W: velocity-aligned frame. y along velocity, z along angular momentum.
    Differs from R by the flight-path angle about z.
  * T: tracking frame. z along +/- velocity (camera boresight), y along
    angular momentum, x = y cross z. The camera frame is identical to T.

Bearing angles measured in T: azimuth = arcsin(y / range), elevation =
arctan(x / z). A visible line of sight has z > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .constants import MU_EARTH, R_EARTH, J2_EARTH


class NotVisibleError(ValueError):
    """Line of sight points away from the camera boresight."""


class KeplerConvergenceError(RuntimeError):
    """Kepler iteration failed to reach tolerance."""


# ===================== state types =====================


@dataclass(frozen=True)
class KeplerianElements:
    """Classical osculating elements (km, rad). Anomaly is mean anomaly."""

    a: float
    e: float
    i: float
    raan: float
    argp: float
    mean_anomaly: float
    mu: float = MU_EARTH

    @property
    def n(self) -> float:
        """Mean motion [rad/s]."""
        return math.sqrt(self.mu / self.a ** 3)

    @property
    def period(self) -> float:
        """Orbital period [s]."""
        return 2.0 * math.pi / self.n

    def true_anomaly(self) -> float:
        return solve_kepler(self.mean_anomaly, self.e)

    def arg_latitude(self) -> float:
        """Argument of latitude u = f + argp."""
        return self.true_anomaly() + self.argp

    def radius(self) -> float:
        """Orbit radius at the current anomaly [km]."""
        f = self.true_anomaly()
        return self.a * (1.0 - self.e ** 2) / (1.0 + self.e * math.cos(f))


@dataclass(frozen=True)
class InertialState:
    """Position/velocity in the inertial frame, km and km/s."""

    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))


@dataclass(frozen=True)
class Bearing:
    """Camera-frame bearing pair [rad]."""

    azimuth: float
    elevation: float


# ===================== angle helpers =====================


def wrap_angle(x):
    """Wrap angle(s) to (-pi, pi]."""
    y = (-x + math.pi) % (2.0 * math.pi)
    return math.pi - y if np.isscalar(y) else math.pi - np.asarray(y)


def wrap_to_2pi(x):
    return x % (2.0 * math.pi)


# ===================== Kepler machinery =====================


def solve_kepler(mean_anomaly: float, e: float, tol: float = 1e-13,
                 max_iter: int = 60) -> float:
    """Solve Kepler's equation and return the true anomaly.

    Newton iteration on the eccentric anomaly with a bisection fallback for
    pathological starts. Valid for 0 <= e < 1.
    """
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity out of range: {e}")
    m = wrap_angle(mean_anomaly)
    if e < 1e-14:
        return m
    # Newton from a standard starter.
    ea = m + e * math.sin(m)
    converged = False
    for _ in range(max_iter):
        fr = ea - e * math.sin(ea) - m
        d = 1.0 - e * math.cos(ea)
        step = fr / d
        ea -= step
        if abs(step) < tol:
            converged = True
            break
    if not converged or abs(ea - e * math.sin(ea) - m) > 1e-10:
        # Bisection on [m - e, m + e], where the root is bracketed.
        lo, hi = m - e, m + e
        flo = lo - e * math.sin(lo) - m
        for _ in range(200):
            ea = 0.5 * (lo + hi)
            fm = ea - e * math.sin(ea) - m
            if abs(fm) < 1e-14:
                break
            if (fm > 0) == (flo > 0):
                lo, flo = ea, fm
            else:
                hi = ea
        if abs(ea - e * math.sin(ea) - m) > 1e-9:
            raise KeplerConvergenceError(
                f"Kepler solve failed: M={mean_anomaly}, e={e}")
    f = 2.0 * math.atan2(math.sqrt(1.0 + e) * math.sin(ea / 2.0),
                         math.sqrt(1.0 - e) * math.cos(ea / 2.0))
    return f


def true_to_mean(f: float, e: float) -> float:
    """Mean anomaly from true anomaly."""
    ea = 2.0 * math.atan2(math.sqrt(1.0 - e) * math.sin(f / 2.0),
                          math.sqrt(1.0 + e) * math.cos(f / 2.0))
    return wrap_angle(ea - e * math.sin(ea))


def propagate_elements(el: KeplerianElements, dt: float,
                       include_j2: bool = True) -> KeplerianElements:
    """Propagate elements by dt seconds: Kepler drift plus first-order
    secular J2 rates on raan, argp, and mean anomaly."""
    n = el.n
    m_dot = n
    raan_dot = 0.0
    argp_dot = 0.0
    if include_j2:
        p = el.a * (1.0 - el.e ** 2)
        eta = math.sqrt(1.0 - el.e ** 2)
        fac = 1.5 * n * J2_EARTH * (R_EARTH / p) ** 2
        ci = math.cos(el.i)
        raan_dot = -fac * ci
        argp_dot = 0.5 * fac * (5.0 * ci ** 2 - 1.0)
        m_dot += 0.5 * fac * eta * (3.0 * ci ** 2 - 1.0)
    return replace(
        el,
        raan=wrap_to_2pi(el.raan + raan_dot * dt),
        argp=wrap_to_2pi(el.argp + argp_dot * dt),
        mean_anomaly=wrap_to_2pi(el.mean_anomaly + m_dot * dt),
    )


# ===================== element <-> cartesian =====================


def elements_to_state(el: KeplerianElements) -> InertialState:
    """Inertial position/velocity from osculating elements."""
    f = el.true_anomaly()
    p = el.a * (1.0 - el.e ** 2)
    r = p / (1.0 + el.e * math.cos(f))
    # Perifocal coordinates.
    cf, sf = math.cos(f), math.sin(f)
    r_pf = np.array([r * cf, r * sf, 0.0])
    vf = math.sqrt(el.mu / p)
    v_pf = np.array([-vf * sf, vf * (el.e + cf), 0.0])
    co, so = math.cos(el.raan), math.sin(el.raan)
    cw, sw = math.cos(el.argp), math.sin(el.argp)
    ci, si = math.cos(el.i), math.sin(el.i)
    rot = np.array([
        [co * cw - so * sw * ci, -co * sw - so * cw * ci, so * si],
        [so * cw + co * sw * ci, -so * sw + co * cw * ci, -co * si],
        [sw * si, cw * si, ci],
    ])
    return InertialState(rot @ r_pf, rot @ v_pf)


def state_to_elements(state: InertialState, mu: float = MU_EARTH) -> KeplerianElements:
    """Osculating elements from inertial position/velocity."""
    r_vec, v_vec = state.r, state.v
    r = float(np.linalg.norm(r_vec))
    v2 = float(v_vec @ v_vec)
    h_vec = np.cross(r_vec, v_vec)
    h = float(np.linalg.norm(h_vec))
    n_vec = np.cross([0.0, 0.0, 1.0], h_vec)
    n_node = float(np.linalg.norm(n_vec))
    e_vec = ((v2 - mu / r) * r_vec - float(r_vec @ v_vec) * v_vec) / mu
    e = float(np.linalg.norm(e_vec))
    energy = v2 / 2.0 - mu / r
    a = -mu / (2.0 * energy)
    i = math.acos(max(-1.0, min(1.0, h_vec[2] / h)))
    if n_node > 1e-12:
        raan = math.acos(max(-1.0, min(1.0, n_vec[0] / n_node)))
        if n_vec[1] < 0.0:
            raan = 2.0 * math.pi - raan
    else:
        raan = 0.0
    if e > 1e-12 and n_node > 1e-12:
        argp = math.acos(max(-1.0, min(1.0, float(n_vec @ e_vec) / (n_node * e))))
        if e_vec[2] < 0.0:
            argp = 2.0 * math.pi - argp
    elif e > 1e-12:
        # Equatorial: measure argp from the x axis.
        argp = math.atan2(e_vec[1], e_vec[0])
        if h_vec[2] < 0.0:
            argp = 2.0 * math.pi - argp
        argp = wrap_to_2pi(argp)
    else:
        argp = 0.0
    if e > 1e-12:
        cf = max(-1.0, min(1.0, float(e_vec @ r_vec) / (e * r)))
        f = math.acos(cf)
        if float(r_vec @ v_vec) < 0.0:
            f = 2.0 * math.pi - f
    else:
        if n_node > 1e-12:
            f = math.acos(max(-1.0, min(1.0, float(n_vec @ r_vec) / (n_node * r))))
            if r_vec[2] < 0.0:
                f = 2.0 * math.pi - f
        else:
            f = math.atan2(r_vec[1], r_vec[0])
        f = wrap_to_2pi(f)
    m = wrap_to_2pi(true_to_mean(f, e))
    return KeplerianElements(a=a, e=e, i=i, raan=wrap_to_2pi(raan),
                             argp=wrap_to_2pi(argp), mean_anomaly=m, mu=mu)


# ===================== observation frames =====================


@dataclass(frozen=True)
class RotationChain:
    """Ordered direction-cosine matrices between labelled frames.

    Each matrix maps coordinates of the source frame into the destination
    frame. The chain composes P -> R, P -> W, W -> T; the camera frame V is
    identical to T.
    """

    steps: tuple  # of (src, dst, 3x3 ndarray)
    flight_path_angle: float
    boresight_sign: int

    def matrix(self, src: str, dst: str) -> np.ndarray:
        """Composed DCM taking src coordinates to dst coordinates."""
        alias = {"V": "T"}
        src = alias.get(src, src)
        dst = alias.get(dst, dst)
        if src == dst:
            return np.eye(3)
        # Compose every frame's P -> frame matrix, then route through P.
        from_p = {"P": np.eye(3)}
        for s, d, m in self.steps:
            if s in from_p and d not in from_p:
                from_p[d] = m @ from_p[s]
            elif d in from_p and s not in from_p:
                from_p[s] = m.T @ from_p[d]
        return from_p[dst] @ from_p[src].T


def rotation_chain(observer: InertialState, boresight_sign: int = 1) -> RotationChain:
    """Build the frame chain for an observer state.

    boresight_sign +1 points the camera along the velocity direction, -1
    against it (used when targets trail the observer).
    """
    if boresight_sign not in (1, -1):
        raise ValueError("boresight_sign must be +1 or -1")
    r_vec, v_vec = observer.r, observer.v
    r_norm = np.linalg.norm(r_vec)
    h_vec = np.cross(r_vec, v_vec)
    h_norm = np.linalg.norm(h_vec)
    if r_norm < 1e-9 or h_norm < 1e-12:
        raise ValueError("degenerate observer state")
    x_r = r_vec / r_norm
    z_r = h_vec / h_norm
    y_r = np.cross(z_r, x_r)
    y_w = v_vec / np.linalg.norm(v_vec)
    z_w = z_r
    x_w = np.cross(y_w, z_w)
    z_t = boresight_sign * y_w
    y_t = z_w
    x_t = np.cross(y_t, z_t)
    # Rows of a frame's basis (in P coordinates) form the P -> frame DCM.
    p_to_r = np.vstack([x_r, y_r, z_r])
    p_to_w = np.vstack([x_w, y_w, z_w])
    p_to_t = np.vstack([x_t, y_t, z_t])
    w_to_t = p_to_t @ p_to_w.T
    phi = math.atan2(float(v_vec @ x_r), float(v_vec @ y_r))
    return RotationChain(
        steps=(("P", "R", p_to_r), ("P", "W", p_to_w), ("W", "T", w_to_t)),
        flight_path_angle=phi,
        boresight_sign=boresight_sign,
    )


def bearing_from_los(los: np.ndarray) -> Bearing:
    """Bearing angles of a tracking-frame line of sight.

    Raises NotVisibleError when the line of sight has no positive boresight
    component, ValueError for a zero vector.
    """
    los = np.asarray(los, dtype=float)
    norm = np.linalg.norm(los)
    if norm < 1e-15:
        raise ValueError("zero-length line of sight")
    if los[2] <= 0.0:
        raise NotVisibleError("line of sight behind the camera")
    alpha = math.asin(max(-1.0, min(1.0, los[1] / norm)))
    eps = math.atan(los[0] / los[2])
    return Bearing(azimuth=alpha, elevation=eps)


def los_from_bearing(bearing: Bearing) -> np.ndarray:
    """Unit line of sight for a bearing pair (inverse of bearing_from_los)."""
    if abs(bearing.azimuth) >= math.pi / 2 or abs(bearing.elevation) >= math.pi / 2:
        raise ValueError("bearing outside the forward hemisphere")
    ca = math.cos(bearing.azimuth)
    return np.array([
        ca * math.sin(bearing.elevation),
        math.sin(bearing.azimuth),
        ca * math.cos(bearing.elevation),
    ])


def curvilinear_to_rectilinear(a: float, dr: float, theta: float,
                               phi: float) -> np.ndarray:
    """Map curvilinear relative coordinates (radial offset dr, along-track
    arc theta, cross-track arc phi about a reference radius a) to
    rectilinear radial/along-track/cross-track components."""
    rad = a + dr
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(phi), math.sin(phi)
    return np.array([rad * ct * cp - a, rad * st * cp, rad * sp])
