"""Maneuver handling: camera-plane burn phase for gate widening, and the
association scoring that decides which track actually executed a reported
impulse.

Association compares, per candidate track, the change in fitted motion-model
coefficients across the burn epoch against the change predicted by the
control-input matrix, plus displacement-direction and model-departure cues.
All criteria are min-max normalized across candidates and summed; the lowest
total wins. An assignment is rejected outright when the winner's model change
is indistinguishable from fit noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frames import InertialState, KeplerianElements, rotation_chain, \
    wrap_angle
from .roe import predicted_eroe_delta

N_MANEUVER_CRITERIA = 6
_ANGLE_COMPONENTS = (2, 5)
REJECTION_RMS_FACTOR = 5.0


@dataclass(frozen=True)
class ManeuverNotice:
    """Burn as reported to the tracker: nominal impulse in the actor's
    radial/along-track/cross-track axes (km/s) and who burned."""

    t: float
    dv_rtn: np.ndarray
    actor: str  # 'observer' or 'unknown-target'

    def __post_init__(self):
        object.__setattr__(self, "dv_rtn",
                           np.asarray(self.dv_rtn, dtype=float))

    @property
    def actor_is_observer(self) -> bool:
        return self.actor == "observer"


@dataclass(frozen=True)
class ManeuverCandidate:
    """Evidence bundle for one track competing for a burn assignment.

    measured_points and pre_model_points are the last four observed points
    after the split and the pre-burn model's predictions at those same
    epochs (oldest first). split_displacement is measured minus predicted
    at the first post-split scan.
    """

    tree_id: int
    x_pre: np.ndarray
    x_post: np.ndarray
    pre_fit_rms: float
    measured_points: np.ndarray
    pre_model_points: np.ndarray
    split_displacement: np.ndarray


@dataclass(frozen=True)
class ManeuverAssignment:
    tree_id: int | None
    rejected: bool
    totals: np.ndarray
    raw_scores: np.ndarray
    reason: str = ""


def maneuver_phase(observer: InertialState, dv_rtn: np.ndarray,
                   actor_is_observer: bool, boresight_sign: int = 1) -> float:
    """Expected direction of the post-burn image-plane displacement.

    The impulse is rotated into the camera frame; an observer burn moves
    every target the opposite way, so its sign is flipped first. The angle
    follows the image-plane convention atan2(azimuth shift, elevation
    shift).
    """
    dv = np.asarray(dv_rtn, dtype=float)
    if actor_is_observer:
        dv = -dv
    dv_cam = rotation_chain(observer, boresight_sign).matrix("R", "T") @ dv
    return math.atan2(dv_cam[1], dv_cam[0])


def model_delta(x_post: np.ndarray, x_pre: np.ndarray) -> np.ndarray:
    """Coefficient change across the burn, with the two phase coefficients
    wrapped to (-pi, pi]."""
    d = np.asarray(x_post, float) - np.asarray(x_pre, float)
    for j in _ANGLE_COMPONENTS:
        d[j] = wrap_angle(d[j])
    return d


def scaled_eroe(x: np.ndarray) -> np.ndarray:
    """Model coefficients rewritten as scaled relative-element components,
    ordered to match the control-matrix output (offset, second offset,
    then the two oscillation vectors in Cartesian form).

    Differencing in this representation keeps a near-zero oscillation
    amplitude from injecting radians of meaningless phase change.
    """
    x = np.asarray(x, dtype=float)
    return np.array([
        x[0],
        x[3],
        x[1] * math.cos(x[2]),
        x[1] * math.sin(x[2]),
        x[4] * math.cos(x[5]),
        x[4] * math.sin(x[5]),
    ])


def scaled_eroe_delta(x_post: np.ndarray, x_pre: np.ndarray) -> np.ndarray:
    """Change in the scaled relative-element representation across the
    burn."""
    return scaled_eroe(x_post) - scaled_eroe(x_pre)


def normalize_delta(delta: np.ndarray) -> np.ndarray:
    """Scale by the largest absolute component (zero vector passes
    through)."""
    peak = np.max(np.abs(delta))
    if peak < 1e-300:
        return np.zeros_like(delta)
    return delta / peak


def predicted_model_delta(observer: KeplerianElements, dv_rtn: np.ndarray,
                          boresight_sign: int = 1) -> np.ndarray:
    """Expected coefficient change for an unobserved target burn, in the
    scaled relative-element coordinates the motion model is built on.

    observer must be at the burn epoch. With the boresight along the
    velocity direction the camera elevation axis points opposite the
    radial axis, so the in-plane components (offset and eccentricity
    vector) acquire a sign flip; looking backwards they do not. The
    cross-track components map through the azimuth axis with positive
    sign either way.
    """
    d = predicted_eroe_delta(observer, dv_rtn, actor_is_observer=False)
    if boresight_sign >= 0:
        d = d.copy()
        d[[0, 2, 3]] *= -1.0
    return d


def score_candidates(candidates, dx_pred: np.ndarray,
                     phase: float) -> np.ndarray:
    """Raw (n_candidates, 6) criterion matrix; smaller is better.

    Criteria: normalized-delta distance, dominant-component index distance,
    component sign disagreement, displacement-direction error against the
    expected phase, inverse magnitude of the measured model change, and
    inverse departure of the measurements from the pre-burn model.
    """
    pred_n = normalize_delta(dx_pred)
    rows = []
    for cand in candidates:
        dx = scaled_eroe_delta(cand.x_post, cand.x_pre)
        meas_n = normalize_delta(dx)
        s1 = float(np.linalg.norm(pred_n - meas_n))
        s2 = float(abs(int(np.argmax(np.abs(pred_n)))
                       - int(np.argmax(np.abs(meas_n)))))
        s3 = float(np.sum(np.abs(np.sign(pred_n) - np.sign(meas_n))))
        disp = cand.split_displacement
        if np.linalg.norm(disp) < 1e-300:
            s4 = math.pi
        else:
            s4 = abs(wrap_angle(phase - math.atan2(disp[1], disp[0])))
        l1 = float(np.sum(np.abs(dx)))
        s5 = 1.0 / l1 if l1 > 1e-300 else 1e12
        departures = np.linalg.norm(cand.measured_points
                                    - cand.pre_model_points, axis=1)
        s6 = float(np.sum(1.0 / np.maximum(departures, 1e-12)))
        rows.append([s1, s2, s3, s4, s5, s6])
    return np.asarray(rows, dtype=float)


def assign_maneuver(candidates, observer: KeplerianElements,
                    notice: ManeuverNotice,
                    observer_state: InertialState,
                    boresight_sign: int = 1) -> ManeuverAssignment:
    """Pick the track that executed the burn, or reject the assignment.

    observer must carry the observer's elements at the burn epoch, since
    the control-input matrix depends on where in the orbit the impulse
    happened. Candidates are min-max normalized per criterion and ranked
    by total; ties go to the lower tree id. The winner is rejected when
    its model change is below five times its pre-burn fit residual RMS,
    meaning the data show no orbit change to attribute.
    """
    if not candidates:
        return ManeuverAssignment(tree_id=None, rejected=True,
                                  totals=np.zeros(0),
                                  raw_scores=np.zeros((0,
                                                       N_MANEUVER_CRITERIA)),
                                  reason="no candidates")
    dx_pred = predicted_model_delta(observer, notice.dv_rtn, boresight_sign)
    phase = maneuver_phase(observer_state, notice.dv_rtn,
                           actor_is_observer=False,
                           boresight_sign=boresight_sign)
    raw = score_candidates(candidates, dx_pred, phase)
    lo = raw.min(axis=0)
    span = raw.max(axis=0) - lo
    norm = np.where(span > 0, (raw - lo) / np.where(span > 0, span, 1.0), 0.0)
    totals = norm.sum(axis=1)
    order = sorted(range(len(candidates)),
                   key=lambda j: (totals[j], candidates[j].tree_id))
    best = order[0]
    winner = candidates[best]
    change = np.linalg.norm(scaled_eroe_delta(winner.x_post, winner.x_pre))
    threshold = REJECTION_RMS_FACTOR * winner.pre_fit_rms
    if change < threshold:
        return ManeuverAssignment(tree_id=None, rejected=True, totals=totals,
                                  raw_scores=raw,
                                  reason="model change below noise "
                                         "threshold")
    return ManeuverAssignment(tree_id=winner.tree_id, rejected=False,
                              totals=totals, raw_scores=raw)
