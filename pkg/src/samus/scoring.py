"""Hypothesis scoring criteria and aggregation.

Each track in a hypothesis is scored at each epoch in each differencing
frame by ten kinematic criteria (smaller is better):

  1. motion-model fit residual norms,
  2. prediction error of the new measurement,
  3. step length vs the model-predicted step length,
  4. step length vs the segment mean,
  5. step phase vs the model-predicted phase,
  6. interior angle vs the model-predicted angle,
  7. interior angle vs the segment mean,
  8. model-inverted anomaly vs the observer anomaly,
  9. inverse step length (degenerate repeats score poorly),
 10. inverse interior angle.

An optional eleventh criterion scores the Mahalanobis distance to an
externally supplied prediction when a host navigation system provides one.
Raw sums are min-max normalized per criterion across the competing
hypotheses and summed; the best hypothesis has the smallest total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frames import wrap_angle
from .motion import StepGeometry

N_CRITERIA = 11  # ten kinematic plus the optional external criterion
_TINY = 1e-12


@dataclass(frozen=True)
class AmbiguityConstants:
    """Decision constants for ambiguity handling.

    c1: best/second score ratio below which the best hypothesis counts as
    unambiguous. c2: consecutive epochs a measurement must sit on its
    target's best track before export. c3(s): hypothesis-propagation
    threshold.
    """

    c1: float = 0.5
    c2: int = 3
    c3_floor: float = 3.0
    c3_scale: float = 3.0

    def c3(self, best_score: float) -> float:
        return max(self.c3_floor, self.c3_scale * best_score)

    def hypothesis_unambiguous(self, best: float, second: float | None) -> bool:
        if second is None:
            return True
        return best < self.c1 * second


@dataclass
class ScoreVector:
    """Raw criterion values for one track-epoch with defined/guard masks."""

    values: np.ndarray
    defined: np.ndarray
    guarded: np.ndarray  # defined in principle but degenerate (see guards)

    @classmethod
    def empty(cls) -> "ScoreVector":
        return cls(values=np.zeros(N_CRITERIA),
                   defined=np.zeros(N_CRITERIA, dtype=bool),
                   guarded=np.zeros(N_CRITERIA, dtype=bool))


def score_track_epoch(candidate: np.ndarray | None,
                      geometry: StepGeometry | None,
                      d_mean: float | None,
                      psi_mean: float | None,
                      fit_resid_sum: float | None,
                      prediction: np.ndarray | None,
                      predicted_step: tuple | None,
                      f_inverted: float | None,
                      f_observer: float | None,
                      external: tuple | None = None) -> ScoreVector:
    """Criterion values for one track at one epoch.

    predicted_step: (d_pred, zeta_pred, psi_pred), entries may be None.
    external: (predicted point, 2x2 covariance) from a host system.
    Criteria whose inputs are missing stay undefined and are skipped in
    aggregation; degenerate geometry marks the guard flag so the caller can
    substitute a penalty.
    """
    sv = ScoreVector.empty()
    if candidate is None:
        return sv
    cand = np.asarray(candidate, dtype=float)

    def put(idx, value):
        sv.values[idx] = value
        sv.defined[idx] = True

    if fit_resid_sum is not None:
        put(0, fit_resid_sum)
    if prediction is not None:
        put(1, float(np.linalg.norm(cand - np.asarray(prediction, float))))
    d_pred = zeta_pred = psi_pred = None
    if predicted_step is not None:
        d_pred, zeta_pred, psi_pred = predicted_step
    if geometry is not None:
        if d_pred is not None:
            put(2, abs(geometry.d - d_pred))
        if d_mean is not None:
            put(3, abs(geometry.d - d_mean))
        if zeta_pred is not None and geometry.d > _TINY:
            put(4, abs(wrap_angle(geometry.zeta - zeta_pred)))
        if psi_pred is not None and geometry.psi is not None:
            put(5, abs(geometry.psi - psi_pred))
        if psi_mean is not None and geometry.psi is not None:
            put(6, abs(geometry.psi - psi_mean))
        if geometry.d > _TINY:
            put(8, 1.0 / geometry.d)
        else:
            sv.defined[8] = True
            sv.guarded[8] = True
        if geometry.psi is not None and geometry.psi > _TINY:
            put(9, 1.0 / geometry.psi)
        elif geometry.psi is not None:
            sv.defined[9] = True
            sv.guarded[9] = True
    if f_inverted is not None and f_observer is not None:
        put(7, abs(wrap_angle(f_inverted - f_observer)))
    if external is not None:
        pred_ext, cov = external
        put(10, score_mahalanobis(cand, pred_ext, cov))
    return sv


def score_mahalanobis(measured: np.ndarray, predicted: np.ndarray,
                      cov: np.ndarray) -> float:
    """Mahalanobis distance of a measured point from a predicted point."""
    d = np.asarray(measured, float) - np.asarray(predicted, float)
    cov = np.asarray(cov, float)
    return float(math.sqrt(max(0.0, d @ np.linalg.solve(cov, d))))


def normalize_and_rank(raw_sums: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Min-max normalize per criterion across hypotheses and total.

    raw_sums: (n_hyp, N_CRITERIA). Returns (totals, order) with order the
    hypothesis indices sorted ascending by total (ties by index).
    """
    raw = np.asarray(raw_sums, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != N_CRITERIA:
        raise ValueError("raw sums must be (n_hyp, n_criteria)")
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    norm = (raw - lo) / safe
    norm[:, span <= 0] = 0.0
    totals = norm.sum(axis=1)
    order = np.lexsort((np.arange(len(totals)), totals))
    return totals, order
