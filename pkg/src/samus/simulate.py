"""Scenario generation and measurement simulation.

Truth propagation integrates all spacecraft in Cartesian coordinates under
two-body gravity plus the J2 oblateness acceleration with a fixed-step
classical RK4 (10 s base step, shortened to land exactly on scan and
maneuver epochs). Measurements are camera-frame bearing pairs with
per-measurement white noise, a per-scan coherent attitude error, uniform
clutter, optional per-orbit observation gaps, and impulsive maneuvers with
execution errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import ARCSEC, FOV_AZIMUTH, FOV_ELEVATION, J2_EARTH, MU_EARTH, R_EARTH
from .frames import (
    InertialState,
    KeplerianElements,
    bearing_from_los,
    elements_to_state,
    propagate_elements,
    rotation_chain,
    state_to_elements,
)
from .roe import RoeState, oe_from_roe

DATASETS = ("NC-EIS", "ECC-EIS", "NC-IT", "ECC-IT")


class ConfigError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulation configuration. Angles rad, distances km, times s."""

    seed: int = 0
    dataset: str = "NC-EIS"
    n_targets: int = 3
    n_orbits: float = 2.0
    interval_sec: float = 120.0
    sigma_vbs: float = 20.0 * ARCSEC
    sigma_offaxis: float = 3.0 * ARCSEC
    sigma_roll: float = 20.0 * ARCSEC
    clutter_min: int = 3
    clutter_max: int = 10
    gap_fraction: float = 0.0
    maneuvers_enabled: bool = False
    n_maneuvers: int = 2
    dv_min: float = 0.1e-3   # km/s
    dv_max: float = 2.0e-3   # km/s
    exec_sigma_mag_frac: float = 0.05
    exec_sigma_dir: float = 60.0 * ARCSEC
    sigma_pos: float = 0.010   # km, observer estimate noise per axis
    sigma_vel: float = 0.02e-3  # km/s per axis
    # Element draw ranges (perigee radius km, eccentricity per dataset).
    rp_range: tuple = (6750.0, 7150.0)
    e_range_nc: tuple = (1e-4, 0.01)
    e_range_ecc: tuple = (0.01, 0.8)
    dlambda_range_km: tuple = (5.0, 200.0)
    da_range_km: tuple = (-0.2, 0.2)
    devec_box_km: float = 5.0
    # Formation-design envelope: near-circular draws are resampled until
    # the noiseless bearing path stays under this angular rate, so the
    # tracker's rate gate is satisfiable by construction.
    rate_cap_rad_min: float = 0.005
    # Optional fixed geometry overriding the draws.
    observer_elements: KeplerianElements | None = None
    target_roe_km: tuple | None = None

    @property
    def ratio_min(self) -> float:
        return 200.0 if self.dataset.endswith("IT") else 20.0

    @property
    def eccentric(self) -> bool:
        return self.dataset.startswith("ECC")

    def validate(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.n_targets < 1:
            raise ConfigError("n_targets must be positive")
        if self.interval_sec <= 0 or self.n_orbits <= 0:
            raise ConfigError("interval_sec and n_orbits must be positive")
        if not 0.0 <= self.gap_fraction < 1.0:
            raise ConfigError("gap_fraction must be in [0, 1)")
        if self.clutter_min < 0 or self.clutter_max < self.clutter_min:
            raise ConfigError("invalid clutter range")
        if self.sigma_vbs < 0:
            raise ConfigError("sigma_vbs must be nonnegative")
        if self.maneuvers_enabled and self.n_maneuvers < 0:
            raise ConfigError("n_maneuvers must be nonnegative")
        if self.target_roe_km is not None and self.observer_elements is None:
            raise ConfigError("fixed target geometry needs fixed observer "
                              "elements")
        return self


@dataclass(frozen=True)
class ManeuverImpulse:
    """Impulsive burn. dv is in the actor's radial/along-track/cross-track
    axes, km/s. actor is 'observer' or 'unknown-target'; the truth target
    index is withheld from the tracker."""

    t: float
    dv_rtn: np.ndarray
    actor: str
    truth_target: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "dv_rtn", np.asarray(self.dv_rtn, float))

    def public(self) -> "ManeuverImpulse":
        return ManeuverImpulse(t=self.t, dv_rtn=self.dv_rtn.copy(),
                               actor=self.actor, truth_target=None)


@dataclass(frozen=True)
class Scan:
    """One camera frame: bearing points (elevation, azimuth) in rad.

    visible False marks an observation gap (empty frame)."""

    index: int
    t: float
    visible: bool
    points: np.ndarray  # (n, 2)


@dataclass
class TargetTruth:
    point: np.ndarray | None  # noiseless (elevation, azimuth) or None
    in_fov: bool


@dataclass
class TruthLog:
    """Everything the evaluation harness may consult; never the tracker."""

    config: ScenarioConfig
    observer0: KeplerianElements
    target_roe0: list
    boresight_sign: int
    period: float
    gap_start_frac: float
    scans: list = field(default_factory=list)           # Scan objects
    labels: list = field(default_factory=list)          # per-scan int arrays
    target_truth: list = field(default_factory=list)    # per-scan dict id->TargetTruth
    observer_states: list = field(default_factory=list)  # per-scan InertialState
    maneuvers: list = field(default_factory=list)        # truth ManeuverImpulse
    executed_dv: list = field(default_factory=list)      # realized dv vectors

    def public_maneuvers(self) -> list:
        return [m.public() for m in self.maneuvers]

    def truth_rows(self):
        """Rows (t, target, elevation, azimuth) for every in-view truth
        bearing, for CSV export."""
        rows = []
        for scan, truth in zip(self.scans, self.target_truth):
            for tid in sorted(truth):
                tt = truth[tid]
                if tt.point is not None:
                    rows.append((scan.t, tid, tt.point[0], tt.point[1]))
        return rows


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    observer: KeplerianElements
    target_roe: tuple
    targets: tuple
    maneuvers: tuple
    boresight_sign: int
    gap_start_frac: float
    observer_estimate0: KeplerianElements


# ===================== scenario drawing =====================


def _draw_observer(cfg: ScenarioConfig, rng) -> KeplerianElements:
    e_lo, e_hi = cfg.e_range_ecc if cfg.eccentric else cfg.e_range_nc
    while True:
        e = rng.uniform(e_lo, e_hi)
        rp = rng.uniform(*cfg.rp_range)
        i = rng.uniform(0.0, math.pi)
        if abs(math.sin(i)) < 0.02:
            continue  # keep the quasi-nonsingular inversion conditioned
        return KeplerianElements(
            a=rp / (1.0 - e), e=e, i=i,
            raan=rng.uniform(0, 2 * math.pi),
            argp=rng.uniform(0, 2 * math.pi),
            mean_anomaly=rng.uniform(0, 2 * math.pi))


def _max_bearing_step(obs: KeplerianElements, roe: RoeState,
                      cfg: ScenarioConfig, sign: int) -> float:
    """Largest per-scan bearing step of the noiseless two-body path."""
    tgt = oe_from_roe(obs, roe)
    span = cfg.n_orbits * obs.period
    n = int(math.floor(span / cfg.interval_sec)) + 1
    prev = None
    worst = 0.0
    for k in range(n):
        t = k * cfg.interval_sec
        so = elements_to_state(propagate_elements(obs, t))
        st = elements_to_state(propagate_elements(tgt, t))
        los = rotation_chain(so, sign).matrix("P", "T") @ (st.r - so.r)
        if los[2] <= 0:
            prev = None
            continue
        b = bearing_from_los(los)
        pt = np.array([b.elevation, b.azimuth])
        if prev is not None:
            worst = max(worst, float(np.linalg.norm(pt - prev)))
        prev = pt
    return worst


def _draw_target_roe(cfg: ScenarioConfig, obs: KeplerianElements,
                     rng) -> RoeState:
    a_obs = obs.a
    dl_km = rng.uniform(*cfg.dlambda_range_km)
    cap = min(cfg.devec_box_km, dl_km / cfg.ratio_min)
    # Keep the along-track drift from closing the separation below 4 km
    # over the scenario span (drift is -3 pi n_orbits per unit da per rev).
    da_cap = min(abs(cfg.da_range_km[0]),
                 max(0.0, (dl_km - 4.0) / (6.0 * math.pi * cfg.n_orbits)))
    da_km = rng.uniform(-da_cap, da_cap) if da_cap > 0 else 0.0
    # The separation draw is exact; the e/i vectors are redrawn (and, as a
    # last resort, shrunk) until the noiseless bearing rate fits the
    # envelope. Eccentric orbits sweep arbitrarily fast near perigee, so
    # the envelope is only enforceable for near-circular sets.
    budget = 0.9 * cfg.rate_cap_rad_min * (cfg.interval_sec / 60.0)
    check = not cfg.eccentric and cfg.rate_cap_rad_min > 0
    scale = 1.0
    for attempt in range(60):
        vecs = []
        for _ in range(2):
            while True:
                v = rng.uniform(-cap, cap, size=2)
                if np.hypot(*v) <= cap:
                    vecs.append(v * scale)
                    break
        roe = RoeState(da=da_km / a_obs, dlambda=dl_km / a_obs,
                       dex=vecs[0][0] / a_obs, dey=vecs[0][1] / a_obs,
                       dix=vecs[1][0] / a_obs, diy=vecs[1][1] / a_obs)
        if not check or _max_bearing_step(obs, roe, cfg, 1) <= budget:
            return roe
        if attempt >= 19:
            scale *= 0.9
    return roe


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Draw a scenario: observer orbit, target relative geometry, maneuver
    schedule, and the noisy initial observer estimate."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if cfg.observer_elements is not None:
        obs = cfg.observer_elements
    else:
        obs = _draw_observer(cfg, rng)
    if cfg.target_roe_km is not None:
        roe = tuple(RoeState(*(np.asarray(v, float) / obs.a))
                    for v in cfg.target_roe_km)
    else:
        roe = tuple(_draw_target_roe(cfg, obs, rng)
                    for _ in range(cfg.n_targets))
    cfg = replace(cfg, n_targets=len(roe))
    targets = tuple(oe_from_roe(obs, r) for r in roe)
    sign = 1 if float(np.mean([r.dlambda for r in roe])) >= 0 else -1
    span = cfg.n_orbits * obs.period
    maneuvers = []
    if cfg.maneuvers_enabled:
        for _ in range(cfg.n_maneuvers):
            t_m = rng.uniform(0.05, 0.85) * span
            actor_idx = int(rng.integers(0, cfg.n_targets + 1))
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            dv = rng.uniform(cfg.dv_min, cfg.dv_max) * direction
            if actor_idx == 0:
                maneuvers.append(ManeuverImpulse(t=t_m, dv_rtn=dv,
                                                 actor="observer"))
            else:
                maneuvers.append(ManeuverImpulse(
                    t=t_m, dv_rtn=dv, actor="unknown-target",
                    truth_target=actor_idx - 1))
        maneuvers.sort(key=lambda m: m.t)
    gap_start = rng.uniform(0.0, 1.0) if cfg.gap_fraction > 0 else 0.0
    # Noisy initial navigation estimate of the observer.
    st = elements_to_state(obs)
    est_state = InertialState(st.r + rng.normal(scale=cfg.sigma_pos, size=3),
                              st.v + rng.normal(scale=cfg.sigma_vel, size=3))
    estimate0 = state_to_elements(est_state)
    return Scenario(config=cfg, observer=obs, target_roe=roe, targets=targets,
                    maneuvers=tuple(maneuvers), boresight_sign=sign,
                    gap_start_frac=gap_start, observer_estimate0=estimate0)


# ===================== truth propagation =====================


def gravity_j2(r: np.ndarray) -> np.ndarray:
    """Two-body plus J2 acceleration for positions (n, 3) [km, km/s^2]."""
    r = np.atleast_2d(r)
    rn = np.linalg.norm(r, axis=1, keepdims=True)
    a_tb = -MU_EARTH * r / rn ** 3
    zr = r[:, 2:3] / rn
    k = 1.5 * J2_EARTH * MU_EARTH * R_EARTH ** 2 / rn ** 5
    a_j2 = np.empty_like(r)
    a_j2[:, 0] = -k[:, 0] * r[:, 0] * (1.0 - 5.0 * zr[:, 0] ** 2)
    a_j2[:, 1] = -k[:, 0] * r[:, 1] * (1.0 - 5.0 * zr[:, 0] ** 2)
    a_j2[:, 2] = -k[:, 0] * r[:, 2] * (3.0 - 5.0 * zr[:, 0] ** 2)
    return a_tb + a_j2


def _rk4_segment(r, v, t0, t1, h=10.0):
    """Integrate all bodies from t0 to t1 with fixed steps of h seconds
    (remainder step lands exactly on t1)."""
    t = t0
    while t < t1 - 1e-9:
        step = min(h, t1 - t)
        k1v = gravity_j2(r)
        k1r = v
        k2v = gravity_j2(r + 0.5 * step * k1r)
        k2r = v + 0.5 * step * k1v
        k3v = gravity_j2(r + 0.5 * step * k2r)
        k3r = v + 0.5 * step * k2v
        k4v = gravity_j2(r + step * k3r)
        k4r = v + step * k3v
        r = r + (step / 6.0) * (k1r + 2 * k2r + 2 * k3r + k4r)
        v = v + (step / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        t += step
    return r, v


def _small_rotation(ax, ay, az) -> np.ndarray:
    """Exact composition of rotations about x, y, then z."""
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def simulate(scenario: Scenario) -> TruthLog:
    """Propagate truth and synthesize all scans for a scenario."""
    cfg = scenario.config
    rng = np.random.default_rng(cfg.seed + 1)
    obs0 = scenario.observer
    period = obs0.period
    span = cfg.n_orbits * period
    n_scans = int(math.floor(span / cfg.interval_sec)) + 1
    scan_times = [k * cfg.interval_sec for k in range(n_scans)]

    bodies = [elements_to_state(obs0)] + [elements_to_state(t)
                                          for t in scenario.targets]
    r = np.vstack([b.r for b in bodies])
    v = np.vstack([b.v for b in bodies])

    # Realized impulses with execution error, applied at exact epochs.
    executed = []
    for man in scenario.maneuvers:
        mag = np.linalg.norm(man.dv_rtn)
        mag_err = 1.0 + rng.normal(scale=cfg.exec_sigma_mag_frac)
        tilt = rng.normal(scale=cfg.exec_sigma_dir, size=2)
        rot = _small_rotation(tilt[0], tilt[1], 0.0)
        executed.append(rot @ (man.dv_rtn * mag_err))

    log = TruthLog(config=cfg, observer0=obs0,
                   target_roe0=list(scenario.target_roe),
                   boresight_sign=scenario.boresight_sign, period=period,
                   gap_start_frac=scenario.gap_start_frac,
                   maneuvers=list(scenario.maneuvers),
                   executed_dv=executed)

    events = sorted(
        [(t, "scan", k) for k, t in enumerate(scan_times)]
        + [(m.t, "burn", j) for j, m in enumerate(scenario.maneuvers)])
    half_fov = (0.5 * FOV_ELEVATION, 0.5 * FOV_AZIMUTH)
    t_now = 0.0
    for t_ev, kind, idx in events:
        if t_ev > t_now:
            r, v = _rk4_segment(r, v, t_now, t_ev)
            t_now = t_ev
        if kind == "burn":
            man = scenario.maneuvers[idx]
            body = 0 if man.actor == "observer" else man.truth_target + 1
            state = InertialState(r[body], v[body])
            rtn_to_pci = rotation_chain(state).matrix("R", "P")
            v[body] = v[body] + rtn_to_pci @ executed[idx]
            continue
        # Scan synthesis.
        k = idx
        phase = (t_ev / period) % 1.0
        in_gap = False
        if cfg.gap_fraction > 0:
            off = (phase - scenario.gap_start_frac) % 1.0
            in_gap = off < cfg.gap_fraction
        obs_state = InertialState(r[0].copy(), v[0].copy())
        log.observer_states.append(obs_state)
        chain = rotation_chain(obs_state, scenario.boresight_sign)
        p_to_t = chain.matrix("P", "T")
        att = _small_rotation(rng.normal(scale=cfg.sigma_offaxis),
                              rng.normal(scale=cfg.sigma_offaxis),
                              rng.normal(scale=cfg.sigma_roll))
        truth_map = {}
        meas_pts = []
        meas_labels = []
        for j in range(cfg.n_targets):
            los = p_to_t @ (r[j + 1] - r[0])
            if los[2] <= 0:
                truth_map[j] = TargetTruth(point=None, in_fov=False)
                continue
            b_true = bearing_from_los(los)
            true_pt = np.array([b_true.elevation, b_true.azimuth])
            in_fov = (abs(true_pt[0]) <= half_fov[0]
                      and abs(true_pt[1]) <= half_fov[1])
            truth_map[j] = TargetTruth(point=true_pt, in_fov=in_fov)
            if not in_fov or in_gap:
                continue
            b_meas = bearing_from_los(att @ los)
            noisy = np.array([
                b_meas.elevation + rng.normal(scale=cfg.sigma_vbs),
                b_meas.azimuth + rng.normal(scale=cfg.sigma_vbs),
            ])
            meas_pts.append(noisy)
            meas_labels.append(j)
        if not in_gap:
            n_clutter = int(rng.integers(cfg.clutter_min, cfg.clutter_max + 1))
            for _ in range(n_clutter):
                meas_pts.append(np.array([
                    rng.uniform(-half_fov[0], half_fov[0]),
                    rng.uniform(-half_fov[1], half_fov[1]),
                ]))
                meas_labels.append(-1)
        if meas_pts:
            pts = np.vstack(meas_pts)
            labels = np.asarray(meas_labels, dtype=int)
            perm = rng.permutation(len(labels))
            pts, labels = pts[perm], labels[perm]
        else:
            pts = np.zeros((0, 2))
            labels = np.zeros(0, dtype=int)
        visible = not in_gap
        if in_gap:
            pts = np.zeros((0, 2))
            labels = np.zeros(0, dtype=int)
        log.scans.append(Scan(index=k, t=t_ev, visible=visible, points=pts))
        log.labels.append(labels)
        log.target_truth.append(truth_map)
    return log


def run_scenario_config(cfg: ScenarioConfig) -> TruthLog:
    """Convenience: draw and simulate in one call."""
    return simulate(generate_scenario(cfg))
