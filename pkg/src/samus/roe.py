"""Relative orbital element dynamics.

The relative geometry of a target about an observer is described by six
dimensionless relative orbital elements (ROE): relative semimajor axis,
relative mean longitude, and the relative eccentricity and inclination
vectors. An eccentricity-corrected variant (the starred set) linearizes the
bearing motion of eccentric observers; it reduces to the plain set for a
circular observer.

All ROE here are dimensionless; multiply by the observer semimajor axis for
km. Maps to the radial/along-track/cross-track frame return dimensionless
offsets scaled by (orbit radius / semimajor axis); the caller scales by the
semimajor axis for km.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import J2_EARTH, R_EARTH
from .frames import KeplerianElements, true_to_mean, wrap_angle, wrap_to_2pi

_E_CIRCULAR = 1e-12  # below this the observer counts as circular
_E_MATRIX_LIMIT = 1e-6  # analytic small-e limit for the control matrix


@dataclass(frozen=True)
class RoeState:
    """Quasi-nonsingular relative orbital elements (dimensionless)."""

    da: float
    dlambda: float
    dex: float
    dey: float
    dix: float
    diy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.da, self.dlambda, self.dex, self.dey,
                         self.dix, self.diy])

    @property
    def de(self) -> float:
        return math.hypot(self.dex, self.dey)

    @property
    def di(self) -> float:
        return math.hypot(self.dix, self.diy)

    @property
    def phase_e(self) -> float:
        return math.atan2(self.dey, self.dex)

    @property
    def phase_i(self) -> float:
        return math.atan2(self.diy, self.dix)


@dataclass(frozen=True)
class EroeState:
    """Eccentricity-corrected relative orbital elements (dimensionless).

    The along-track and eccentricity-vector components carry the starred
    correction; the inclination vector is shared with RoeState.
    """

    da: float
    dlambda: float
    dex: float
    dey: float
    dix: float
    diy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.da, self.dlambda, self.dex, self.dey,
                         self.dix, self.diy])

    @property
    def de(self) -> float:
        return math.hypot(self.dex, self.dey)

    @property
    def di(self) -> float:
        return math.hypot(self.dix, self.diy)


def roe_from_oe(observer: KeplerianElements,
                target: KeplerianElements) -> RoeState:
    """Relative orbital elements of a target about an observer.

    Quasi-nonsingular: undefined for an equatorial observer (sin i = 0).
    """
    si = math.sin(observer.i)
    if abs(si) < 1e-9:
        raise ValueError("quasi-nonsingular elements undefined for an "
                         "equatorial observer")
    d_raan = wrap_angle(target.raan - observer.raan)
    u_o = observer.mean_anomaly + observer.argp
    u_t = target.mean_anomaly + target.argp
    return RoeState(
        da=(target.a - observer.a) / observer.a,
        dlambda=wrap_angle(u_t - u_o) + math.cos(observer.i) * d_raan,
        dex=target.e * math.cos(target.argp) - observer.e * math.cos(observer.argp),
        dey=target.e * math.sin(target.argp) - observer.e * math.sin(observer.argp),
        dix=target.i - observer.i,
        diy=si * d_raan,
    )


def oe_from_roe(observer: KeplerianElements, roe: RoeState) -> KeplerianElements:
    """Target elements from observer elements and relative elements
    (exact inverse of roe_from_oe)."""
    si = math.sin(observer.i)
    if abs(si) < 1e-9:
        raise ValueError("quasi-nonsingular elements undefined for an "
                         "equatorial observer")
    a_t = observer.a * (1.0 + roe.da)
    i_t = observer.i + roe.dix
    d_raan = roe.diy / si
    raan_t = observer.raan + d_raan
    ex = observer.e * math.cos(observer.argp) + roe.dex
    ey = observer.e * math.sin(observer.argp) + roe.dey
    e_t = math.hypot(ex, ey)
    argp_t = math.atan2(ey, ex) if e_t > 0 else 0.0
    u_o = observer.mean_anomaly + observer.argp
    u_t = u_o + roe.dlambda - math.cos(observer.i) * d_raan
    m_t = u_t - argp_t
    return KeplerianElements(a=a_t, e=e_t, i=i_t, raan=wrap_to_2pi(raan_t),
                             argp=wrap_to_2pi(argp_t),
                             mean_anomaly=wrap_to_2pi(m_t), mu=observer.mu)


def eroe_linear_map(observer: KeplerianElements) -> np.ndarray:
    """6x6 matrix taking plain relative elements to the corrected set.

    The correction is linear in the relative elements with coefficients that
    depend only on the observer's e, argp, and i. For a circular observer the
    map is the identity.
    """
    e_o = observer.e
    mat = np.eye(6)
    if e_o < _E_CIRCULAR:
        return mat
    sw, cw = math.sin(observer.argp), math.cos(observer.argp)
    cot_i = 1.0 / math.tan(observer.i)
    eta2 = 1.0 - e_o ** 2
    xi = (1.0 + e_o ** 2 / 2.0) / eta2 ** 1.5
    # Corrected along-track component.
    mat[1, 1] = xi
    mat[1, 2] = (1.0 - xi) * (-sw / e_o)
    mat[1, 3] = (1.0 - xi) * (cw / e_o)
    mat[1, 5] = (1.0 - xi) * cot_i
    # Corrected eccentricity vector.
    mat[2, 2] = cw / eta2
    mat[2, 3] = sw / eta2
    mat[3, 1] = -e_o / eta2 ** 1.5
    mat[3, 2] = -sw / eta2 ** 1.5
    mat[3, 3] = cw / eta2 ** 1.5
    mat[3, 5] = e_o * cot_i / eta2 ** 1.5
    return mat


def eroe_from_roe(observer: KeplerianElements, roe: RoeState) -> EroeState:
    """Corrected relative elements; identity for a circular observer."""
    out = eroe_linear_map(observer) @ roe.as_array()
    return EroeState(*out)


def eroe_to_rtn(observer: KeplerianElements, eroe: EroeState) -> np.ndarray:
    """First-order radial/along-track/cross-track offsets of the target.

    Returns the dimensionless offset vector scaled by (r/a) of the observer;
    multiply by the observer semimajor axis for km.
    """
    e_o = observer.e
    f_o = observer.true_anomaly()
    de = eroe.de
    phase = math.atan2(eroe.dey, eroe.dex)
    di = eroe.di
    theta = math.atan2(eroe.diy, eroe.dix)
    radial = (eroe.da - 0.5 * e_o * eroe.dex
              - de * (math.cos(f_o - phase)
                      + 0.5 * e_o * math.cos(2.0 * f_o - phase)))
    along = (eroe.dlambda
             + de * (2.0 * math.sin(f_o - phase)
                     + 0.5 * e_o * math.sin(2.0 * f_o - phase)))
    cross = di * math.sin(f_o + observer.argp - theta)
    r_over_a = (1.0 - e_o ** 2) / (1.0 + e_o * math.cos(f_o))
    return r_over_a * np.array([radial, along, cross])


@dataclass(frozen=True)
class EllipseGeometry:
    """Geometry of the projected relative-motion ellipse (image plane)."""

    center_x: float
    center_y: float
    semimajor: float
    semiminor: float
    orientation: float

    @property
    def aspect(self) -> float:
        if self.semiminor < 1e-15:
            return math.inf
        return self.semimajor / self.semiminor


def ellipse_geometry(roe: RoeState) -> EllipseGeometry:
    """Size, shape, and orientation of the radial/cross-track motion track.

    Valid to first order for a near-circular observer. Degenerate relative
    geometry (zero eccentricity/inclination offsets) gives a point ellipse.
    """
    de, di = roe.de, roe.di
    dphase = roe.phase_e - roe.phase_i if (de > 0 and di > 0) else 0.0
    inner = de ** 4 + di ** 4 - 2.0 * de ** 2 * di ** 2 * math.cos(2.0 * dphase)
    inner = math.sqrt(max(inner, 0.0))
    s = de ** 2 + di ** 2
    semimajor = math.sqrt(max(s + inner, 0.0) / 2.0)
    semiminor = math.sqrt(max(s - inner, 0.0) / 2.0)
    num = -2.0 * de * di * math.sin(dphase)
    den = de ** 2 - di ** 2
    orientation = 0.5 * math.atan2(num, den) if (abs(num) > 0 or abs(den) > 0) else 0.0
    return EllipseGeometry(center_x=roe.da, center_y=0.0,
                           semimajor=semimajor, semiminor=semiminor,
                           orientation=orientation)


def j2_short_period(a: float, i: float, u: float) -> tuple[np.ndarray, np.ndarray]:
    """Short-period oblateness oscillation of the eccentricity and
    inclination vectors at argument of latitude u (dimensionless)."""
    si, ci = math.sin(i), math.cos(i)
    si2 = si * si
    k_e = 1.5 * J2_EARTH * (R_EARTH / a) ** 2
    de_sp = k_e * np.array([
        (1.0 - 1.25 * si2) * math.cos(u) + (7.0 / 12.0) * si2 * math.cos(3.0 * u),
        (1.0 - 1.75 * si2) * math.sin(u) + (7.0 / 12.0) * si2 * math.sin(3.0 * u),
    ])
    k_i = (3.0 / 8.0) * J2_EARTH * (R_EARTH / a) ** 2
    di_sp = k_i * np.array([
        math.sin(2.0 * i) * math.cos(2.0 * u),
        2.0 * ci * si * math.sin(2.0 * u),
    ])
    return de_sp, di_sp


def j2_secular(roe: RoeState, observer: KeplerianElements, t: float) -> RoeState:
    """Secular oblateness drift of the relative elements after t seconds.

    The relative eccentricity vector rotates (magnitude preserved, frozen at
    the critical inclination); the cross component of the relative
    inclination vector drifts with differential node precession driven by
    the radial component.
    """
    ci = math.cos(observer.i)
    si2 = math.sin(observer.i) ** 2
    ratio = (R_EARTH / observer.a) ** 2
    period = observer.period
    dphi = (3.0 * math.pi * t / (2.0 * period)) * J2_EARTH * ratio \
        * (5.0 * ci ** 2 - 1.0)
    de = roe.de
    phase = roe.phase_e + dphi
    diy = roe.diy - (3.0 * math.pi * t / period) * J2_EARTH * ratio * si2 * roe.dix
    return RoeState(da=roe.da, dlambda=roe.dlambda,
                    dex=de * math.cos(phase), dey=de * math.sin(phase),
                    dix=roe.dix, diy=diy)


def control_input_matrix(observer: KeplerianElements) -> np.ndarray:
    """6x3 matrix mapping an observer impulse (radial, along-track,
    cross-track, km/s) to the change in the relative elements.

    A target impulse maps with the opposite sign. Near-circular observers
    (e below 1e-6) use the analytic small-e limit of the along-track row,
    which is otherwise 0/0.
    """
    e = observer.e
    f = observer.true_anomaly()
    a, n = observer.a, observer.n
    eta = math.sqrt(1.0 - e ** 2)
    cf, sf = math.cos(f), math.sin(f)
    k = 1.0 + e * cf
    w = observer.argp
    cfw, sfw = math.cos(f + w), math.sin(f + w)
    ex, ey = e * math.cos(w), e * math.sin(w)
    ti = math.tan(observer.i)
    if abs(ti) < 1e-12:
        raise ValueError("control matrix undefined for an equatorial observer")
    b = np.zeros((6, 3))
    b[0, 0] = 2.0 * e * sf / eta ** 2
    b[0, 1] = 2.0 * k / eta ** 2
    if e < _E_MATRIX_LIMIT:
        # Small-e limit of the 1/e terms.
        b[1, 0] = -2.0
        b[1, 1] = 0.0
    else:
        b[1, 0] = ((eta - 1.0) * k * cf - 2.0 * eta * e) / (e * k)
        b[1, 1] = (1.0 - eta) * (k + 1.0) * sf / (e * k)
    b[2, 0] = sfw
    b[2, 1] = ((k + 1.0) * cfw + ex) / k
    b[2, 2] = ey * sfw / (k * ti)
    b[3, 0] = -cfw
    b[3, 1] = ((k + 1.0) * sfw + ey) / k
    b[3, 2] = -ex * sfw / (k * ti)
    b[4, 2] = cfw / k
    b[5, 2] = sfw / k
    return -(eta / (a * n)) * b


def apply_impulse_to_eroe(eroe: EroeState, observer: KeplerianElements,
                          dv_rtn: np.ndarray,
                          actor_is_observer: bool) -> EroeState:
    """Shift the corrected relative elements for an impulsive burn.

    The impulse is expressed in the maneuvering spacecraft's radial /
    along-track / cross-track axes in km/s. Observer burns use the control
    matrix directly; target burns enter with the opposite sign. The plain
    element change maps through the linear correction about the observer.
    """
    dv = np.asarray(dv_rtn, dtype=float)
    d_roe = control_input_matrix(observer) @ dv
    if not actor_is_observer:
        d_roe = -d_roe
    d_eroe = eroe_linear_map(observer) @ d_roe
    return EroeState(*(eroe.as_array() + d_eroe))


def predicted_eroe_delta(observer: KeplerianElements, dv_rtn: np.ndarray,
                         actor_is_observer: bool) -> np.ndarray:
    """Corrected-element change for an impulse without applying it."""
    dv = np.asarray(dv_rtn, dtype=float)
    d_roe = control_input_matrix(observer) @ dv
    if not actor_is_observer:
        d_roe = -d_roe
    return eroe_linear_map(observer) @ d_roe
