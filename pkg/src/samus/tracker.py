"""Multi-hypothesis tracker for camera-frame bearing scans.

Track-oriented bookkeeping: each hypothesized target is a tree of branch
tracks sharing a confirmed root. Every scan, branches are extended by gated
measurements (or placeholder predictions), compatible cross-tree
combinations are enumerated best-first, and each combination is scored by
the per-round mean of the kinematic criteria over differenced track pairs.
The best
combination is reported; the selected extensions become the new branch
set, followed by maintenance (root confirmation, starvation and ambiguity
pruning, merging, caps) and density-based initialization of new targets
from unidentified measurements.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .frames import KeplerianElements, elements_to_state, propagate_elements
from .gating import ErrorRegion, GateConfig, GateContext, \
    build_error_region, gate_candidate
from .maneuvers import ManeuverCandidate, ManeuverNotice, assign_maneuver, \
    maneuver_phase
from .motion import IllConditionedFitError, ObserverEpoch, ParametricModel, \
    fallback_predict, fit_parametric_model, invert_model_for_f, \
    observer_epoch, predict_bearing, step_geometry
from .scoring import AmbiguityConstants, N_CRITERIA, normalize_and_rank, \
    score_track_epoch

# Criteria a placeholder (missed assignment) penalizes at the running worst
# observed value: the measurement-dependent ones. Fit residual (0), the
# f-inversion check (7) and the external-estimate distance (10) stay zero.
_PLACEHOLDER_PENALTY_IDX = np.array([1, 2, 3, 4, 5, 6, 8, 9])


class ScanOrderError(RuntimeError):
    """Scans must arrive in strictly increasing epoch order."""


@dataclass(frozen=True)
class TrackerConfig:
    gate: GateConfig = field(default_factory=GateConfig)
    ambiguity: AmbiguityConstants = field(default_factory=AmbiguityConstants)
    n_hyp_max: int = 6
    n_enum_max: int = 64
    n_trees_max: int = 10
    n_branches_max: int = 20
    root_window: int = 8
    merge_window: int = 8
    grace_rounds: int = 8
    unobserved_frac: float = 0.1
    ambiguous_frac: float = 0.5
    dbscan_window: int = 4
    dbscan_min_samples: int = 4
    boresight_sign: int = 1
    collapse_on_external: bool = False

    @property
    def dbscan_eps_per_minute(self) -> float:
        return 2.0 * self.gate.d_max


@dataclass
class Entry:
    """One epoch in a branch history."""

    round: int
    meas_idx: int | None
    point: np.ndarray
    measured: bool


@dataclass
class Segment:
    start: int  # index into the branch entry list
    cause: str  # 'initial' | 'maneuver' | 'gap'
    maneuver_round: int | None = None


class Branch:
    """A single hypothesized measurement history (a track)."""

    __slots__ = ("id", "tree_id", "parent_id", "entries", "segments",
                 "seg_d", "seg_zeta", "seg_psi", "meas_keys",
                 "consecutive_missed", "missed_expected", "expected_rounds",
                 "ambiguous_rounds", "visible_rounds", "measured_rounds",
                 "cum_s2", "wedge_phase", "last_expected", "_model_cache")

    def __init__(self, branch_id: int, tree_id: int):
        self.id = branch_id
        self.tree_id = tree_id
        self.parent_id = None
        self.entries: list[Entry] = []
        self.segments: list[Segment] = [Segment(start=0, cause="initial")]
        self.seg_d: list[float] = []
        self.seg_zeta: list[float] = []
        self.seg_psi: list[float] = []
        self.meas_keys: set = set()
        self.consecutive_missed = 0
        self.missed_expected = 0
        self.expected_rounds = 0
        self.ambiguous_rounds = 0
        self.visible_rounds = 0
        self.measured_rounds = 0
        self.cum_s2 = 0.0
        self.wedge_phase: float | None = None
        self.last_expected = False
        self._model_cache: dict = {}

    # ---- copying ----

    def clone(self, new_id: int) -> "Branch":
        c = Branch(new_id, self.tree_id)
        c.parent_id = self.id
        c.entries = list(self.entries)
        c.segments = [replace(s) for s in self.segments]
        c.seg_d = list(self.seg_d)
        c.seg_zeta = list(self.seg_zeta)
        c.seg_psi = list(self.seg_psi)
        c.meas_keys = set(self.meas_keys)
        c.consecutive_missed = self.consecutive_missed
        c.missed_expected = self.missed_expected
        c.expected_rounds = self.expected_rounds
        c.ambiguous_rounds = self.ambiguous_rounds
        c.visible_rounds = self.visible_rounds
        c.measured_rounds = self.measured_rounds
        c.cum_s2 = self.cum_s2
        c.wedge_phase = self.wedge_phase
        c.last_expected = self.last_expected
        c._model_cache = dict(self._model_cache)
        return c

    # ---- structure ----

    @property
    def active_segment(self) -> Segment:
        return self.segments[-1]

    def open_segment(self, cause: str, maneuver_round: int | None = None):
        self.segments.append(Segment(start=len(self.entries), cause=cause,
                                     maneuver_round=maneuver_round))
        self.seg_d = []
        self.seg_zeta = []
        self.seg_psi = []

    def append(self, entry: Entry):
        start = self.active_segment.start
        prev1 = self.entries[-1] if len(self.entries) > start else None
        prev2 = (self.entries[-2]
                 if len(self.entries) >= start + 2 else None)
        self.entries.append(entry)
        if entry.measured:
            self.meas_keys.add((entry.round, entry.meas_idx))
            self.measured_rounds += 1
        # Step statistics only cover measured-to-measured steps inside
        # the segment; predicted fill-ins anchor positions but would
        # pollute the shape statistics the gates compare against.
        if prev1 is not None and entry.measured and prev1.measured:
            p2 = (prev2.point
                  if prev2 is not None and prev2.measured else None)
            geom = step_geometry(p2, prev1.point, entry.point)
            self.seg_d.append(geom.d)
            self.seg_zeta.append(geom.zeta)
            if geom.psi is not None:
                self.seg_psi.append(geom.psi)

    def pending_maneuver_round(self) -> int | None:
        seg = self.active_segment
        if seg.cause == "maneuver":
            return seg.maneuver_round
        return None

    def segment_measured(self, seg_index: int = -1):
        if seg_index < 0:
            seg_index += len(self.segments)
        seg = self.segments[seg_index]
        stop = (self.segments[seg_index + 1].start
                if seg_index + 1 < len(self.segments)
                else len(self.entries))
        return [e for e in self.entries[seg.start:stop] if e.measured]

    def model_for(self, epochs_by_round,
                  seg_index: int) -> ParametricModel | None:
        """Fitted motion model for one segment (memoized on point count)."""
        if seg_index < 0:
            seg_index += len(self.segments)
        meas = self.segment_measured(seg_index)
        if len(meas) < 3:
            return None
        key = (seg_index, len(meas))
        hit = self._model_cache.get(key)
        if hit is not None:
            return hit
        pts = np.vstack([e.point for e in meas])
        eps = [epochs_by_round[e.round] for e in meas]
        try:
            model = fit_parametric_model(pts, eps)
        except IllConditionedFitError:
            return None
        self._model_cache[key] = model
        return model

    def active_model(self, epochs_by_round) -> ParametricModel | None:
        """Model of the active segment, falling back to the previous
        segment while the active one is still too short to fit."""
        model = self.model_for(epochs_by_round, len(self.segments) - 1)
        if model is None and len(self.segments) >= 2:
            model = self.model_for(epochs_by_round, len(self.segments) - 2)
        return model

    def predict(self, epochs_by_round, ep: ObserverEpoch) -> np.ndarray:
        seg = self.active_segment
        if seg.cause == "maneuver":
            post = self.segment_measured()
            if 0 < len(post) < 3:
                return self._predict_post_burn(post, epochs_by_round, ep)
        model = self.active_model(epochs_by_round)
        if model is not None:
            return predict_bearing(model, ep)
        tail = [e.point for e in self.entries[-2:]]
        return fallback_predict(np.vstack(tail))

    def _predict_post_burn(self, post, epochs_by_round, ep):
        """Forecast while the post-burn segment is too short to fit.

        The pre-burn model drifts further from the displaced motion
        every round, so the forecast re-anchors on what was actually
        captured after the burn: two points extrapolate linearly, a
        single point is carried forward by the pre-burn model's
        increment (the burn changes the rate, not the position).
        """
        cur = self.entries[-1].round + 1
        if len(post) >= 2:
            p0, p1 = post[-2], post[-1]
            rate = (p1.point - p0.point) / max(p1.round - p0.round, 1)
            return p1.point + rate * (cur - p1.round)
        last = post[-1]
        prev = (self.model_for(epochs_by_round, len(self.segments) - 2)
                if len(self.segments) >= 2 else None)
        if prev is None:
            return last.point.copy()
        inc = (predict_bearing(prev, ep)
               - predict_bearing(prev, epochs_by_round[last.round]))
        return last.point + inc

    def loop_aspect(self, epochs_by_round, ep: ObserverEpoch) -> float:
        """Step-length modulation of the fitted motion over one loop.

        The step-ratio gate scales with the track figure's elongation;
        sampling the model around a full anomaly cycle captures it even
        for thin tilted figures whose axis-amplitude ratio looks benign.
        """
        seg_index = len(self.segments) - 1
        if len(self.segment_measured(seg_index)) < 3 \
                and len(self.segments) >= 2:
            seg_index -= 1
        n_meas = len(self.segment_measured(seg_index))
        key = ("aspect", seg_index, n_meas)
        hit = self._model_cache.get(key)
        if hit is not None:
            return hit
        model = self.model_for(epochs_by_round, seg_index)
        if model is None:
            return 1.0
        fs = np.linspace(0.0, 2.0 * math.pi, 49)
        one_m_e2 = 1.0 - ep.e ** 2
        pts = np.vstack([
            predict_bearing(model, ObserverEpoch(
                f=f, argp=ep.argp, e=ep.e,
                r_over_a=one_m_e2 / (1.0 + ep.e * math.cos(f))))
            for f in fs])
        steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        mn = float(steps.min())
        aspect = 1e3 if mn <= 1e-12 else min(float(steps.max()) / mn, 1e3)
        aspect = max(aspect, 1.0)
        self._model_cache[key] = aspect
        return aspect

    def quality(self) -> float:
        """Lower is better: mean prediction error plus placeholder mass."""
        rounds = max(1, self.measured_rounds)
        frac_placeholder = 1.0 - self.measured_rounds / max(1,
                                                           len(self.entries))
        return self.cum_s2 / rounds + 2.0 * frac_placeholder


@dataclass
class Tree:
    id: int
    birth_round: int
    branches: list = field(default_factory=list)
    root_round: int = -1

    def get_branch(self, branch_id) -> Branch | None:
        for b in self.branches:
            if b.id == branch_id:
                return b
        return None


@dataclass
class HypothesisOut:
    """A scored compatible selection: tree id -> branch id."""

    selection: dict
    total: float
    raw: np.ndarray


@dataclass
class AssignmentOut:
    tree_id: int
    meas_idx: int | None
    point: np.ndarray
    measured: bool
    unambiguous: bool


@dataclass
class PendingManeuver:
    notice: ManeuverNotice
    split_round: int
    wedge_phase: float
    observer_at_burn: KeplerianElements
    visible_count: int = 0
    split_state_cached: object = None


@dataclass
class ManeuverResolution:
    t: float
    tree_id: int | None
    rejected: bool


@dataclass
class TrackerReport:
    round: int
    t: float
    visible: bool
    assignments: list
    hypothesis_total: float | None
    hypothesis_unambiguous: bool
    n_trees: int
    n_branches: int
    n_hypotheses: int
    maneuver_resolutions: list
    wall_ms: float


@dataclass
class RoundLogEntry:
    meas_idx: int | None
    point: np.ndarray
    measured: bool
    unambiguous: bool


class PairState:
    """Cumulative differenced-pair criteria and step statistics."""

    __slots__ = ("cum", "d_vals", "psi_vals", "rounds")

    def __init__(self):
        self.cum = np.zeros(N_CRITERIA)
        self.d_vals: list[float] = []
        self.psi_vals: list[float] = []
        self.rounds = 0

    def clone(self) -> "PairState":
        c = PairState()
        c.cum = self.cum.copy()
        c.d_vals = list(self.d_vals[-12:])
        c.psi_vals = list(self.psi_vals[-12:])
        c.rounds = self.rounds
        return c


class TrackerState:
    """All mutable tracker state for one scenario."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.round = -1
        self.last_t: float | None = None
        self.dt_sec = 120.0
        self.miss_limit = 5
        self.trees: dict[int, Tree] = {}
        self.hypotheses: list[HypothesisOut] = []
        self.pair_states: dict = {}
        self.running_max = np.zeros(N_CRITERIA)
        self.epochs_by_round: dict = {}
        self.visible_by_round: dict = {}
        self.unassigned_recent: list = []  # (round, points, meas indices)
        self.pending_maneuvers: list = []
        self.assignment_log: dict = {}  # round -> {tree_id: RoundLogEntry}
        self.resolved_maneuvers: list = []
        self._next_tree = 0
        self._next_branch = 0
        self._gap_pending = False

    def new_tree_id(self) -> int:
        self._next_tree += 1
        return self._next_tree - 1

    def new_branch_id(self) -> int:
        self._next_branch += 1
        return self._next_branch - 1

    def all_branches(self):
        for tree in self.trees.values():
            yield from tree.branches

    def h1_selection(self) -> dict:
        return self.hypotheses[0].selection if self.hypotheses else {}

    def pending_split_rounds(self) -> set:
        return {p.split_round for p in self.pending_maneuvers}

    def protected_branch_ids(self) -> set:
        """Branches kept alive pending a maneuver resolution."""
        pending = self.pending_split_rounds()
        if not pending:
            return set()
        return {b.id for b in self.all_branches()
                if b.pending_maneuver_round() in pending}


# ===================== pair scoring =====================


def _pair_key(b: Branch, p: Branch | None):
    return (b.id, p.id if p is not None else None)


def _pair_model(state: TrackerState, b: Branch, p: Branch | None,
                cache: dict) -> ParametricModel | None:
    """Differenced-series model over b's active segment (partner origin)."""
    key = _pair_key(b, p)
    if key in cache:
        return cache[key]
    model = None
    if p is None:
        model = b.active_model(state.epochs_by_round)
    else:
        rounds_p = {e.round: e for e in p.entries if e.measured}
        meas = [e for e in b.segment_measured() if e.round in rounds_p]
        if len(meas) >= 3:
            pts = np.vstack([e.point - rounds_p[e.round].point
                             for e in meas])
            eps = [state.epochs_by_round[e.round] for e in meas]
            try:
                model = fit_parametric_model(pts, eps,
                                             frame_tag="differenced")
            except IllConditionedFitError:
                model = None
        if model is None:
            model = b.active_model(state.epochs_by_round)
    cache[key] = model
    return model


def _epoch_score(state: TrackerState, b: Branch, cand_point, cand_measured,
                 p: Branch | None, partner_point, ep: ObserverEpoch,
                 model_cache: dict, f_inv_cache: dict,
                 external=None) -> np.ndarray:
    """Criterion contribution of one candidate epoch for the pair (b, p)."""
    if not cand_measured:
        pen = np.zeros(N_CRITERIA)
        pen[_PLACEHOLDER_PENALTY_IDX] = \
            state.running_max[_PLACEHOLDER_PENALTY_IDX]
        return pen
    ps = state.pair_states.get(_pair_key(b, p))
    d_vals = ps.d_vals if ps else []
    psi_vals = ps.psi_vals if ps else []
    model = _pair_model(state, b, p, model_cache)
    start = b.active_segment.start
    ents = b.entries
    if p is None:
        prev1 = ents[-1].point if ents else None
        prev2 = ents[-2].point if len(ents) >= 2 else None
        dcand = np.asarray(cand_point, float)
    else:
        pents = p.entries
        prev1 = (ents[-1].point - pents[-1].point) if ents else None
        prev2 = (ents[-2].point - pents[-2].point) if len(ents) >= 2 \
            else None
        dcand = np.asarray(cand_point, float) - np.asarray(partner_point,
                                                           float)
    if len(ents) - start < 1:
        prev1 = None
    if len(ents) - start < 2:
        prev2 = None
    geometry = None
    if prev1 is not None:
        geometry = step_geometry(prev2, prev1, dcand)
    prediction = None
    predicted_step = None
    fit_resid = None
    f_inverted = None
    f_observer = None
    if model is not None:
        fit_resid = model.resid_norm_sum
        prediction = predict_bearing(model, ep)
        if prev1 is not None:
            pred_geom = step_geometry(prev2, prev1, prediction)
            predicted_step = (pred_geom.d, pred_geom.zeta, pred_geom.psi)
        if p is None:
            f_observer = ep.f
            fkey = (b.id, float(cand_point[0]), float(cand_point[1]))
            if fkey not in f_inv_cache:
                f_inv_cache[fkey] = invert_model_for_f(model, cand_point,
                                                       ep)
            f_inverted = f_inv_cache[fkey]
    d_mean = float(np.mean(d_vals)) if d_vals else None
    psi_mean = float(np.mean(psi_vals)) if psi_vals else None
    sv = score_track_epoch(
        candidate=dcand, geometry=geometry, d_mean=d_mean,
        psi_mean=psi_mean, fit_resid_sum=fit_resid, prediction=prediction,
        predicted_step=predicted_step, f_inverted=f_inverted,
        f_observer=f_observer, external=external)
    out = np.zeros(N_CRITERIA)
    ok = sv.defined & ~sv.guarded
    out[ok] = sv.values[ok]
    out[sv.guarded] = state.running_max[sv.guarded]
    finite = np.isfinite(sv.values) & ok
    np.maximum(state.running_max, np.where(finite, sv.values, 0.0),
               out=state.running_max)
    return out


# ===================== candidate generation =====================


@dataclass
class Candidate:
    branch: Branch
    meas_idx: int | None
    point: np.ndarray
    measured: bool
    proxy: float
    prediction: np.ndarray
    region: ErrorRegion


def _branch_candidates(state: TrackerState, branch: Branch,
                       points: np.ndarray, ep: ObserverEpoch,
                       e_obs: float, dt_minutes: float,
                       external=None) -> list:
    cfg = state.config
    pred = branch.predict(state.epochs_by_round, ep)
    seg = branch.active_segment
    seg_measured = len(branch.segment_measured())
    context = "normal"
    wedge = None
    if seg.cause == "maneuver" and seg_measured < 4 \
            and branch.wedge_phase is not None:
        context = "maneuver"
        wedge = branch.wedge_phase
    elif seg.cause == "gap" and seg_measured == 0:
        context = "gap"
    d_mean = float(np.mean(branch.seg_d)) if branch.seg_d else None
    region = build_error_region(pred, d_mean, cfg.gate, e_obs, context,
                                maneuver_phase=wedge)
    if external is not None and cfg.collapse_on_external:
        pred_ext, cov = external
        radius = 3.0 * math.sqrt(max(float(np.linalg.eigvalsh(
            np.asarray(cov, float)).max()), 0.0))
        region = replace(region, center=np.asarray(pred_ext, float),
                         radius=radius)
    aspect = branch.loop_aspect(state.epochs_by_round, ep)
    e1 = branch.entries[-1]
    e2 = branch.entries[-2] if len(branch.entries) >= 2 else None
    ctx = GateContext(
        prev1=e1.point,
        prev2=e2.point if e2 is not None else None,
        d_values=branch.seg_d, zeta_values=branch.seg_zeta,
        psi_values=branch.seg_psi, aspect=aspect,
        prev1_measured=e1.measured,
        prev2_measured=e2.measured if e2 is not None else True)
    out = []
    for idx in range(len(points)):
        pt = points[idx]
        if not region.contains(pt):
            continue
        if context != "maneuver":
            # The step rules describe coasting motion; an impulse
            # changes the apparent rate by an unknown amount, so while
            # the post-burn segment is still too short to carry its
            # own fit the wedge region is the entire admission test.
            res = gate_candidate(ctx, pt, dt_minutes, cfg.gate, e_obs,
                                 region=region)
            if not res.passed:
                continue
        out.append(Candidate(
            branch=branch, meas_idx=idx, point=pt, measured=True,
            proxy=float(np.linalg.norm(pt - pred)), prediction=pred,
            region=region))
    out.append(Candidate(branch=branch, meas_idx=None, point=pred,
                         measured=False, proxy=region.radius,
                         prediction=pred, region=region))
    return out


# ===================== hypothesis enumeration =====================


def _clusters(tree_order: list, flat: dict) -> list:
    """Partition trees into shared-measurement groups (union-find)."""
    parent = {tid: tid for tid in tree_order}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner: dict = {}
    for tid in tree_order:
        used = {c.meas_idx for c in flat[tid] if c.meas_idx is not None}
        for m in used:
            if m in owner:
                ra, rb = find(owner[m]), find(tid)
                if ra != rb:
                    parent[rb] = ra
            else:
                owner[m] = tid
    groups: dict = {}
    for tid in tree_order:
        groups.setdefault(find(tid), []).append(tid)
    return [groups[kk] for kk in sorted(groups)]


def _enumerate_cluster(cluster: list, flat: dict, cap: int) -> list:
    """Best-first compatible selections within one tree cluster."""
    option_lists = []
    for tid in cluster:
        opts = sorted(flat[tid],
                      key=lambda c: (c.proxy, c.branch.id,
                                     -1 if c.meas_idx is None
                                     else c.meas_idx))
        option_lists.append(opts)
    n = len(cluster)
    start = tuple([0] * n)
    heap = [(sum(option_lists[i][0].proxy for i in range(n)), start)]
    seen = {start}
    out = []
    while heap and len(out) < cap:
        cost, idxs = heapq.heappop(heap)
        sel = [option_lists[i][idxs[i]] for i in range(n)]
        used: set = set()
        keys: set = set()
        ok = True
        for c in sel:
            if c.meas_idx is not None:
                if c.meas_idx in used:
                    ok = False
                    break
                used.add(c.meas_idx)
            if c.branch.meas_keys & keys:
                ok = False
                break
            keys |= c.branch.meas_keys
        if ok:
            out.append(sel)
        for i in range(n):
            nxt = list(idxs)
            nxt[i] += 1
            if nxt[i] < len(option_lists[i]):
                tn = tuple(nxt)
                if tn not in seen:
                    seen.add(tn)
                    heapq.heappush(heap, (
                        cost - option_lists[i][idxs[i]].proxy
                        + option_lists[i][nxt[i]].proxy, tn))
    return out


def _global_candidates(state: TrackerState, cand_map: dict) -> list:
    """Compatible cross-tree selections, best-first, capped."""
    cfg = state.config
    tree_order = sorted(cand_map)
    if not tree_order:
        return []
    flat = {tid: [c for cands in cand_map[tid] for c in cands]
            for tid in tree_order}
    clusters = _clusters(tree_order, flat)
    per_cluster = [_enumerate_cluster(cl, flat, cfg.n_enum_max)
                   for cl in clusters]
    combos = []
    for combo in itertools.islice(itertools.product(*per_cluster),
                                  4 * cfg.n_enum_max):
        sel = {}
        for cl, chosen in zip(clusters, combo):
            for tid, cand in zip(cl, chosen):
                sel[tid] = cand
        keys: set = set()
        ok = True
        for tid in tree_order:
            bk = sel[tid].branch.meas_keys
            if bk & keys:
                ok = False
                break
            keys |= bk
        if not ok:
            continue
        proxy = sum(c.proxy for c in sel.values())
        combos.append((proxy, sel))
    combos.sort(key=lambda pair: (
        pair[0], tuple((t, c.branch.id,
                        -1 if c.meas_idx is None else c.meas_idx)
                       for t, c in sorted(pair[1].items()))))
    return [sel for _, sel in combos[:cfg.n_enum_max]]


# ===================== maneuver handling =====================


def _register_maneuvers(state: TrackerState, notices, t_now: float,
                        observer: KeplerianElements):
    """Split branches for burns that occurred since the previous scan."""
    for notice in notices:
        if state.last_t is None:
            continue  # burn before tracking started
        if notice.t <= state.last_t or notice.t > t_now:
            continue
        est_at_burn = propagate_elements(observer, notice.t - t_now)
        obs_state = elements_to_state(observer)
        phase = maneuver_phase(obs_state, notice.dv_rtn,
                               notice.actor_is_observer,
                               state.config.boresight_sign)
        split_round = state.round
        if notice.actor_is_observer:
            for branch in state.all_branches():
                branch.open_segment("maneuver", maneuver_round=None)
                branch.wedge_phase = phase
        else:
            for tree in state.trees.values():
                twins = []
                for branch in tree.branches:
                    twin = branch.clone(state.new_branch_id())
                    twin.open_segment("maneuver",
                                      maneuver_round=split_round)
                    twin.wedge_phase = phase
                    for key in [kk for kk in state.pair_states
                                if kk[0] == branch.id]:
                        state.pair_states[(twin.id, key[1])] = \
                            state.pair_states[key].clone()
                    twins.append(twin)
                tree.branches.extend(twins)
            state.pending_maneuvers.append(PendingManeuver(
                notice=notice, split_round=split_round, wedge_phase=phase,
                observer_at_burn=est_at_burn,
                split_state_cached=obs_state))


def _greedy_extend(state: TrackerState, branch: Branch, cands: list):
    """Extend a protected branch outside the hypothesis machinery."""
    best = min(cands, key=lambda c: (not c.measured, c.proxy))
    branch.append(Entry(round=state.round, meas_idx=best.meas_idx,
                        point=best.point, measured=best.measured))
    expected = _expected_visible(state, best.prediction)
    branch.last_expected = expected
    if expected:
        branch.expected_rounds += 1
        branch.visible_rounds += 1
        if best.measured:
            branch.consecutive_missed = 0
        else:
            branch.missed_expected += 1
            branch.consecutive_missed += 1
    if best.measured:
        branch.cum_s2 += best.proxy


def _resolve_pending_maneuvers(state: TrackerState):
    """Assign burns once four visible scans have accumulated."""
    cfg = state.config
    still = []
    for pending in state.pending_maneuvers:
        if pending.visible_count < 4:
            still.append(pending)
            continue
        candidates = []
        for tid in sorted(state.trees):
            tree = state.trees[tid]
            best = None
            for branch in tree.branches:
                if branch.pending_maneuver_round() != pending.split_round:
                    continue
                post = branch.segment_measured()
                if len(post) < 3 or len(branch.segments) < 2:
                    continue
                pre_model = branch.model_for(state.epochs_by_round,
                                             len(branch.segments) - 2)
                if pre_model is None:
                    continue
                post_pts = np.vstack([e.point for e in post[-4:]])
                post_eps = [state.epochs_by_round[e.round]
                            for e in post[-4:]]
                try:
                    post_model = fit_parametric_model(post_pts, post_eps)
                except IllConditionedFitError:
                    continue
                pre_pred = np.vstack([predict_bearing(pre_model, pe)
                                      for pe in post_eps])
                cand = ManeuverCandidate(
                    tree_id=tid, x_pre=pre_model.x, x_post=post_model.x,
                    pre_fit_rms=pre_model.fit_rms,
                    measured_points=post_pts, pre_model_points=pre_pred,
                    split_displacement=post_pts[0] - pre_pred[0])
                if best is None or len(post) > best[0]:
                    best = (len(post), cand)
            if best is not None:
                candidates.append(best[1])
        result = assign_maneuver(candidates, pending.observer_at_burn,
                                 pending.notice,
                                 pending.split_state_cached,
                                 cfg.boresight_sign)
        winner = None if result.rejected else result.tree_id
        for tid, tree in state.trees.items():
            keep = []
            for branch in tree.branches:
                man_rounds = {s.maneuver_round for s in branch.segments
                              if s.cause == "maneuver"}
                is_man = pending.split_round in man_rounds
                ok = is_man if tid == winner else not is_man
                if ok:
                    keep.append(branch)
            # A side of the split that vanished entirely leaves the other
            # side in place (degenerate split).
            if keep:
                tree.branches = keep
            for branch in tree.branches:
                if branch.pending_maneuver_round() == pending.split_round:
                    branch.wedge_phase = None
        state.resolved_maneuvers.append(ManeuverResolution(
            t=pending.notice.t, tree_id=winner, rejected=result.rejected))
    state.pending_maneuvers = still


# ===================== density-based initialization =====================


def _dbscan(points: np.ndarray, eps: float, min_samples: int) -> np.ndarray:
    """Plain DBSCAN labels (-1 noise), deterministic order."""
    n = len(points)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    neigh = [np.flatnonzero(d2[i] <= eps * eps) for i in range(n)]
    core = np.array([len(nb) >= min_samples for nb in neigh])
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        stack = [i]
        while stack:
            j = stack.pop()
            for kk in neigh[j]:
                if labels[kk] == -1:
                    labels[kk] = cluster
                    if core[kk]:
                        stack.append(kk)
        cluster += 1
    return labels


def _best_chain(state: TrackerState, by_round: dict, rounds: list,
                pool: np.ndarray, dt_minutes: float, e_obs: float):
    """Cheapest rule-consistent one-point-per-scan chain, or None."""
    cfg = state.config
    best = None
    options = [by_round[r] for r in rounds]
    total = 1
    for o in options:
        total *= len(o)
    if total > 256:
        options = [o[:4] for o in options]
    for combo in itertools.product(*options):
        pts = [pool[m] for m in combo]
        ok = True
        d_vals: list[float] = []
        zeta_vals: list[float] = []
        psi_vals: list[float] = []
        for i in range(1, len(pts)):
            ctx = GateContext(
                prev1=pts[i - 1], prev2=pts[i - 2] if i >= 2 else None,
                d_values=list(d_vals), zeta_values=list(zeta_vals),
                psi_values=list(psi_vals))
            res = gate_candidate(ctx, pts[i], dt_minutes, cfg.gate, e_obs)
            if not res.passed:
                ok = False
                break
            d_vals.append(res.geometry.d)
            zeta_vals.append(res.geometry.zeta)
            if res.geometry.psi is not None:
                psi_vals.append(res.geometry.psi)
        if not ok:
            continue
        key = (float(sum(d_vals)), tuple(int(m) for m in combo))
        if best is None or key < best:
            best = key
    return None if best is None else list(best[1])


def _try_init_trees(state: TrackerState, dt_minutes: float,
                    e_obs: float) -> list:
    cfg = state.config
    window = state.unassigned_recent[-cfg.dbscan_window:]
    if len(window) < cfg.dbscan_window:
        return []
    rounds_needed = [r for r, _, _ in window]
    pool_pts, pool_round, pool_idx = [], [], []
    for rnd, pts, idxs in window:
        for pnt, i in zip(pts, idxs):
            pool_pts.append(pnt)
            pool_round.append(rnd)
            pool_idx.append(int(i))
    if not pool_pts:
        return []
    pool = np.vstack(pool_pts)
    eps = cfg.dbscan_eps_per_minute * dt_minutes
    labels = _dbscan(pool, eps, cfg.dbscan_min_samples)
    consumed = {(e.round, e.meas_idx) for b in state.all_branches()
                for e in b.entries if e.measured}
    created = []
    for cl in range(labels.max() + 1 if len(labels) else 0):
        members = np.flatnonzero(labels == cl)
        by_round: dict = {}
        for m in members:
            by_round.setdefault(pool_round[m], []).append(m)
        if any(r not in by_round for r in rounds_needed):
            continue
        chain = _best_chain(state, by_round, rounds_needed, pool,
                            dt_minutes, e_obs)
        if chain is None:
            continue
        if any((rnd, pool_idx[m]) in consumed
               for rnd, m in zip(rounds_needed, chain)):
            continue
        tree = Tree(id=state.new_tree_id(), birth_round=rounds_needed[0])
        branch = Branch(state.new_branch_id(), tree.id)
        for rnd, m in zip(rounds_needed, chain):
            branch.append(Entry(round=rnd, meas_idx=pool_idx[m],
                                point=pool[m], measured=True))
            branch.expected_rounds += 1
            branch.visible_rounds += 1
        branch.last_expected = True
        tree.branches.append(branch)
        state.trees[tree.id] = tree
        created.append(tree.id)
        for rnd, m in zip(rounds_needed, chain):
            log = state.assignment_log.setdefault(rnd, {})
            if tree.id not in log:
                log[tree.id] = RoundLogEntry(
                    meas_idx=pool_idx[m], point=pool[m], measured=True,
                    unambiguous=False)
        consumed |= {(rnd, pool_idx[m])
                     for rnd, m in zip(rounds_needed, chain)}
    return created


# ===================== maintenance =====================


def _prune_trees_cap(state: TrackerState):
    cfg = state.config
    if len(state.trees) <= cfg.n_trees_max:
        return
    h1 = state.h1_selection()
    scored = []
    for tid, tree in state.trees.items():
        in_h1 = 0 if tid in h1 else 1
        q = min((b.quality() for b in tree.branches), default=math.inf)
        scored.append((in_h1, q, tid))
    scored.sort()
    keep = {tid for _, _, tid in scored[:cfg.n_trees_max]}
    state.trees = {tid: t for tid, t in state.trees.items() if tid in keep}


def _root_update(state: TrackerState, tree: Tree, h1_branch: Branch | None,
                 protected: set):
    cfg = state.config
    age = state.round - tree.birth_round + 1
    if age <= cfg.root_window:
        return
    ref = h1_branch or min(tree.branches, key=lambda b: (b.quality(), b.id))
    cutoff = state.round - cfg.root_window
    lo = max(tree.root_round + 1, tree.birth_round)

    def key_at(branch, rnd):
        i = rnd - tree.birth_round
        if i < 0 or i >= len(branch.entries):
            return None
        e = branch.entries[i]
        return (e.measured, e.meas_idx)

    keep = []
    for b in tree.branches:
        if b is ref or b.id in protected:
            keep.append(b)
            continue
        if all(key_at(b, r) == key_at(ref, r)
               for r in range(lo, cutoff + 1)):
            keep.append(b)
    tree.branches = keep
    tree.root_round = cutoff


def _starvation_prune(state: TrackerState, tree: Tree, protected: set):
    cfg = state.config
    keep = []
    for b in tree.branches:
        if b.consecutive_missed >= state.miss_limit:
            continue
        if b.id in protected:
            keep.append(b)
            continue
        if b.expected_rounds > cfg.grace_rounds and \
                b.missed_expected / b.expected_rounds >= cfg.unobserved_frac:
            continue
        if b.visible_rounds > cfg.grace_rounds and \
                b.ambiguous_rounds / b.visible_rounds >= cfg.ambiguous_frac:
            continue
        keep.append(b)
    tree.branches = keep


def _merge_branches(state: TrackerState, tree: Tree, protected: set):
    cfg = state.config
    w = cfg.merge_window
    alive = sorted(tree.branches, key=lambda b: (b.quality(), b.id))
    removed: set = set()
    for i in range(len(alive)):
        if alive[i].id in removed:
            continue
        sig_i = [(e.measured, e.meas_idx) for e in alive[i].entries[-w:]]
        for j in range(i + 1, len(alive)):
            bj = alive[j]
            if bj.id in removed or bj.id in protected:
                continue
            sig_j = [(e.measured, e.meas_idx) for e in bj.entries[-w:]]
            if len(sig_i) != len(sig_j):
                continue
            same = sum(a == bb for a, bb in zip(sig_i, sig_j))
            if same == len(sig_i) or same == 0:
                removed.add(bj.id)
    tree.branches = [b for b in alive if b.id not in removed]


def _cap_branches(state: TrackerState, tree: Tree, h1_branch_id,
                  protected: set):
    cfg = state.config
    if len(tree.branches) <= cfg.n_branches_max:
        return
    ordered = sorted(
        tree.branches,
        key=lambda b: (b.id != h1_branch_id and b.id not in protected,
                       b.quality(), b.id))
    tree.branches = ordered[:cfg.n_branches_max]


def _compatible(sel: dict) -> bool:
    keys: set = set()
    for tid in sorted(sel):
        b = sel[tid]
        if b.meas_keys & keys:
            return False
        keys |= b.meas_keys
    return True


def _hypotheses_valid(state: TrackerState) -> bool:
    if not state.hypotheses:
        return not state.trees
    live_trees = set(state.trees)
    for hyp in state.hypotheses:
        if set(hyp.selection) != live_trees:
            return False
        for tid, bid in hyp.selection.items():
            if state.trees[tid].get_branch(bid) is None:
                return False
    return True


def _reform_hypotheses(state: TrackerState):
    """Rebuild the global hypothesis list from surviving branches."""
    cfg = state.config
    tree_ids = sorted(state.trees)
    if not tree_ids:
        state.hypotheses = []
        return
    options = []
    for tid in tree_ids:
        branches = sorted(state.trees[tid].branches,
                          key=lambda b: (b.quality(), b.id))
        options.append(branches[:cfg.n_hyp_max])
    selections = []
    for combo in itertools.islice(itertools.product(*options),
                                  4 * cfg.n_enum_max):
        sel = dict(zip(tree_ids, combo))
        if _compatible(sel):
            selections.append(sel)
    if not selections:
        selections = [dict(zip(tree_ids, [o[0] for o in options]))]
    raws = []
    for sel in selections:
        raw = np.zeros(N_CRITERIA)
        for tid in tree_ids:
            b = sel[tid]
            partners = [sel[o] for o in tree_ids if o != tid]
            done = False
            if partners:
                acc = np.zeros(N_CRITERIA)
                got = 0
                for p in partners:
                    ps = state.pair_states.get((b.id, p.id))
                    if ps is not None:
                        # per-round mean: ledgers of unequal age stay
                        # comparable under the min-max normalization
                        acc += ps.cum / max(ps.rounds, 1)
                        got += 1
                if got:
                    raw += acc / got
                    done = True
            if not done:
                ps = state.pair_states.get((b.id, None))
                if ps is not None:
                    raw += ps.cum / max(ps.rounds, 1)
        raws.append(raw)
    totals, order = normalize_and_rank(np.vstack(raws))
    kept = [int(order[0])]
    c3 = cfg.ambiguity.c3(float(totals[order[0]]))
    for idx in order[1:]:
        if len(kept) >= cfg.n_hyp_max:
            break
        if totals[idx] < c3:
            kept.append(int(idx))
    ktotals, korder = normalize_and_rank(np.vstack([raws[i] for i in kept]))
    kept = [kept[int(i)] for i in korder]
    state.hypotheses = [
        HypothesisOut(selection={t: selections[i][t].id for t in tree_ids},
                      total=float(ktotals[int(j)]), raw=raws[i])
        for j, i in zip(korder, kept)]


def current_h1_unambiguous(state: TrackerState) -> bool:
    if not state.hypotheses:
        return False
    best = state.hypotheses[0].total
    second = state.hypotheses[1].total if len(state.hypotheses) > 1 else None
    return state.config.ambiguity.hypothesis_unambiguous(best, second)


def maintain(state: TrackerState):
    """Prune and consolidate the track forest, then re-form hypotheses."""
    _prune_trees_cap(state)
    h1 = state.h1_selection()
    protected = state.protected_branch_ids()
    for tid in sorted(state.trees):
        tree = state.trees[tid]
        h1_branch = tree.get_branch(h1.get(tid)) if tid in h1 else None
        _root_update(state, tree, h1_branch, protected)
        prot = set(protected)
        if h1_branch is not None:
            prot.add(h1_branch.id)
        _starvation_prune(state, tree, prot)
        _merge_branches(state, tree, prot)
        _cap_branches(state, tree,
                      h1_branch.id if h1_branch is not None else None,
                      protected)
    state.trees = {tid: t for tid, t in state.trees.items() if t.branches}
    live = {b.id for b in state.all_branches()}
    state.pair_states = {kk: v for kk, v in state.pair_states.items()
                         if kk[0] in live
                         and (kk[1] is None or kk[1] in live)}
    if not _hypotheses_valid(state):
        _reform_hypotheses(state)


# ===================== the round driver =====================


def _expected_visible(state: TrackerState, prediction: np.ndarray) -> bool:
    fe, fa = state.config.gate.fov
    return bool(abs(prediction[0]) <= 0.5 * fe
                and abs(prediction[1]) <= 0.5 * fa)


def process_scan(state: TrackerState, scan, observer: KeplerianElements,
                 maneuvers=(), external: dict | None = None) -> TrackerReport:
    """Advance the tracker by one scan and report the best hypothesis.

    scan needs fields index, t, visible and points; observer is the
    navigation estimate of the observer's elements at the scan epoch;
    maneuvers is the cumulative list of reported burns; external
    optionally maps tree id to (predicted point, covariance) from a host
    estimator.
    """
    t0 = time.perf_counter()
    cfg = state.config
    if state.last_t is not None and scan.t <= state.last_t:
        raise ScanOrderError(f"scan at t={scan.t} not after {state.last_t}")
    dt_sec = (scan.t - state.last_t) if state.last_t is not None else None
    state.round += 1
    k = state.round
    ep = observer_epoch(observer)
    e_obs = observer.e
    state.epochs_by_round[k] = ep
    points = np.asarray(scan.points, dtype=float).reshape(-1, 2)
    state.visible_by_round[k] = bool(scan.visible)
    if dt_sec:
        state.dt_sec = dt_sec
    dt_minutes = state.dt_sec / 60.0
    state.miss_limit = max(1, math.ceil(0.1 * observer.period /
                                        state.dt_sec))

    _register_maneuvers(state, maneuvers, scan.t, observer)

    if not scan.visible:
        # Gap round: placeholder-extend everything, no hypothesis work.
        for branch in state.all_branches():
            pred = branch.predict(state.epochs_by_round, ep)
            branch.append(Entry(round=k, meas_idx=None, point=pred,
                                measured=False))
            branch.last_expected = False
        state._gap_pending = bool(state.trees)
        state.unassigned_recent.append((k, np.zeros((0, 2)),
                                        np.zeros(0, dtype=int)))
        state.unassigned_recent = \
            state.unassigned_recent[-cfg.dbscan_window:]
        state.last_t = scan.t
        wall = (time.perf_counter() - t0) * 1e3
        return TrackerReport(
            round=k, t=scan.t, visible=False, assignments=[],
            hypothesis_total=None, hypothesis_unambiguous=False,
            n_trees=len(state.trees),
            n_branches=sum(len(t.branches) for t in state.trees.values()),
            n_hypotheses=len(state.hypotheses),
            maneuver_resolutions=[], wall_ms=wall)

    if state._gap_pending:
        # First visible scan after a gap: widen gates via a fresh segment,
        # except where an unresolved split already governs the gate.
        for branch in state.all_branches():
            seg = branch.active_segment
            if seg.cause == "maneuver" and not branch.segment_measured():
                continue
            branch.open_segment("gap")
        state._gap_pending = False

    # ---- candidate generation and gating ----
    cand_map: dict = {}
    cand_by_branch: dict = {}
    for tid in sorted(state.trees):
        tree = state.trees[tid]
        lists = []
        for branch in sorted(tree.branches, key=lambda b: b.id):
            ext = (external or {}).get(tid)
            cands = _branch_candidates(state, branch, points, ep, e_obs,
                                       dt_minutes, ext)
            cand_by_branch[branch.id] = cands
            lists.append(cands)
        cand_map[tid] = lists

    selections = _global_candidates(state, cand_map)
    tree_ids = sorted(cand_map)

    report_assignments: list = []
    resolutions_before = len(state.resolved_maneuvers)
    h1_unambiguous = False
    h1_total = None

    if selections:
        model_cache: dict = {}
        f_inv_cache: dict = {}
        epoch_cache: dict = {}
        raws = []
        for sel in selections:
            raw = np.zeros(N_CRITERIA)
            for tid in tree_ids:
                c = sel[tid]
                partners = [sel[o] for o in tree_ids if o != tid]
                terms = []
                ext = (external or {}).get(tid)
                # Each term is the per-round mean of the pair ledger plus
                # the candidate epoch. Ledgers of different ages must not
                # be compared as raw sums: a freshly combined pair would
                # sit at the minimum of every normalization column and
                # outrank any established history.
                if partners:
                    for pc in partners:
                        key = (c.branch.id, c.meas_idx, pc.branch.id,
                               pc.meas_idx)
                        if key not in epoch_cache:
                            epoch_cache[key] = _epoch_score(
                                state, c.branch, c.point, c.measured,
                                pc.branch, pc.point, ep, model_cache,
                                f_inv_cache, ext)
                        base = state.pair_states.get(
                            (c.branch.id, pc.branch.id))
                        cum = base.cum if base else np.zeros(N_CRITERIA)
                        span = (base.rounds if base else 0) + 1
                        terms.append((cum + epoch_cache[key]) / span)
                else:
                    key = (c.branch.id, c.meas_idx, None, None)
                    if key not in epoch_cache:
                        epoch_cache[key] = _epoch_score(
                            state, c.branch, c.point, c.measured, None,
                            None, ep, model_cache, f_inv_cache, ext)
                    base = state.pair_states.get((c.branch.id, None))
                    cum = base.cum if base else np.zeros(N_CRITERIA)
                    span = (base.rounds if base else 0) + 1
                    terms.append((cum + epoch_cache[key]) / span)
                raw += np.mean(terms, axis=0)
            raws.append(raw)
        totals, order = normalize_and_rank(np.vstack(raws))
        c3 = cfg.ambiguity.c3(float(totals[order[0]]))
        kept_idx = [int(order[0])]
        for idx in order[1:]:
            if len(kept_idx) >= cfg.n_hyp_max:
                break
            if totals[idx] < c3:
                kept_idx.append(int(idx))
        # Scores are re-normalized across the surviving set so the
        # ambiguity margin compares the leaders directly: with two
        # survivors each criterion contributes 0 or 1, and the margin
        # constant literally counts criteria won.
        ktotals, korder = normalize_and_rank(
            np.vstack([raws[i] for i in kept_idx]))
        kept_idx = [kept_idx[int(i)] for i in korder]
        kept_totals = [float(ktotals[int(i)]) for i in korder]
        kept_selections = [selections[i] for i in kept_idx]
        h1_total = kept_totals[0]
        second = kept_totals[1] if len(kept_totals) > 1 else None
        h1_unambiguous = cfg.ambiguity.hypothesis_unambiguous(h1_total,
                                                              second)

        # ---- materialize selected extensions as new branches ----
        protected = state.protected_branch_ids()
        selected_parent_ids = {c.branch.id for sel in kept_selections
                               for c in sel.values()}
        children: dict = {}
        child_info: dict = {}
        new_hyps: list = []
        for rank, sel in enumerate(kept_selections):
            mapping = {}
            for tid in tree_ids:
                c = sel[tid]
                ckey = (tid, c.branch.id, c.meas_idx)
                if ckey not in children:
                    child = c.branch.clone(state.new_branch_id())
                    child.append(Entry(round=k, meas_idx=c.meas_idx,
                                       point=c.point, measured=c.measured))
                    expected = _expected_visible(state, c.prediction)
                    child.last_expected = expected
                    if expected:
                        child.expected_rounds += 1
                        child.visible_rounds += 1
                        if c.measured:
                            child.consecutive_missed = 0
                        else:
                            child.missed_expected += 1
                            child.consecutive_missed += 1
                    if c.measured:
                        child.cum_s2 += c.proxy
                    children[ckey] = child
                    child_info[ckey] = c
                mapping[tid] = children[ckey].id
            new_hyps.append(HypothesisOut(
                selection=mapping, total=kept_totals[rank],
                raw=raws[kept_idx[rank]]))

        # Pair states for the new branch generation. Every cross-tree
        # child pair gets a ledger, seeded from the parents' ledger when
        # one exists; branch combinations appearing together for the
        # first time keep their lineage's accumulated record (including
        # missed-round penalties) instead of restarting from a blank.
        new_pair_states: dict = {}
        by_tree: dict = {}
        for ckey, child in children.items():
            by_tree.setdefault(ckey[0], []).append(
                (child_info[ckey], child))
        for ta in tree_ids:
            for ca, childa in by_tree.get(ta, []):
                for tb in tree_ids:
                    if tb == ta:
                        continue
                    for cb, childb in by_tree.get(tb, []):
                        nkey = (childa.id, childb.id)
                        if nkey in new_pair_states:
                            continue
                        base = state.pair_states.get(
                            (ca.branch.id, cb.branch.id))
                        ps = base.clone() if base else PairState()
                        ekey = (ca.branch.id, ca.meas_idx,
                                cb.branch.id, cb.meas_idx)
                        if ekey not in epoch_cache:
                            epoch_cache[ekey] = _epoch_score(
                                state, ca.branch, ca.point, ca.measured,
                                cb.branch, cb.point, ep, model_cache,
                                f_inv_cache, (external or {}).get(ta))
                        ps.cum = ps.cum + epoch_cache[ekey]
                        if ca.measured and cb.measured:
                            dprev1 = (ca.branch.entries[-1].point
                                      - cb.branch.entries[-1].point)
                            dprev2 = None
                            if len(ca.branch.entries) >= 2 \
                                    and len(cb.branch.entries) >= 2:
                                dprev2 = (ca.branch.entries[-2].point
                                          - cb.branch.entries[-2].point)
                            g = step_geometry(dprev2, dprev1,
                                              ca.point - cb.point)
                            ps.d_vals.append(g.d)
                            if g.psi is not None:
                                ps.psi_vals.append(g.psi)
                        ps.rounds += 1
                        new_pair_states[nkey] = ps
        # Every child also carries its single-track ledger; re-formed
        # hypotheses fall back to it when no cross ledger survives.
        for ckey, child in children.items():
            c = child_info[ckey]
            nkey = (child.id, None)
            base = state.pair_states.get((c.branch.id, None))
            ps = base.clone() if base else PairState()
            ekey = (c.branch.id, c.meas_idx, None, None)
            if ekey not in epoch_cache:
                epoch_cache[ekey] = _epoch_score(
                    state, c.branch, c.point, c.measured, None, None,
                    ep, model_cache, f_inv_cache,
                    (external or {}).get(ckey[0]))
            ps.cum = ps.cum + epoch_cache[ekey]
            if c.measured:
                prev1 = c.branch.entries[-1].point
                prev2 = (c.branch.entries[-2].point
                         if len(c.branch.entries) >= 2 else None)
                g = step_geometry(prev2, prev1, c.point)
                ps.d_vals.append(g.d)
                if g.psi is not None:
                    ps.psi_vals.append(g.psi)
            ps.rounds += 1
            new_pair_states[nkey] = ps

        # install children; keep protected (pending-split) branches alive
        for tid in tree_ids:
            tree = state.trees[tid]
            kept_branches = [children[ckey] for ckey in children
                             if ckey[0] == tid]
            for branch in tree.branches:
                if branch.id in protected \
                        and branch.id not in selected_parent_ids:
                    _greedy_extend(state, branch,
                                   cand_by_branch[branch.id])
                    kept_branches.append(branch)
                    for pkey in [kk for kk in state.pair_states
                                 if kk[0] == branch.id]:
                        new_pair_states[pkey] = state.pair_states[pkey]
            tree.branches = kept_branches
            best_id = new_hyps[0].selection.get(tid)
            for b in tree.branches:
                if b.id != best_id and b.last_expected:
                    b.ambiguous_rounds += 1
        state.pair_states = new_pair_states
        state.hypotheses = new_hyps

        # ---- round log and delayed confirmation ----
        # A measurement becomes definitively unambiguous only after it has
        # stayed in its tree's best branch for c2 rounds while the leading
        # hypothesis is score-unambiguous; the log is upgraded in arrears.
        # Report entries carry the instantaneous (provisional) flag.
        log = state.assignment_log.setdefault(k, {})
        for tid in tree_ids:
            c = kept_selections[0][tid]
            prov = bool(h1_unambiguous and c.measured)
            log[tid] = RoundLogEntry(meas_idx=c.meas_idx, point=c.point,
                                     measured=c.measured, unambiguous=False)
            report_assignments.append(AssignmentOut(
                tree_id=tid, meas_idx=c.meas_idx, point=c.point,
                measured=c.measured, unambiguous=prov))
        if h1_unambiguous:
            horizon = k - cfg.ambiguity.c2 + 1
            for tid in tree_ids:
                branch = state.trees[tid].get_branch(
                    new_hyps[0].selection[tid])
                if branch is None:
                    continue
                for e in branch.entries:
                    if e.round > horizon:
                        break
                    if not e.measured:
                        continue
                    rlog = state.assignment_log.setdefault(e.round, {})
                    old = rlog.get(tid)
                    if old is None or not old.unambiguous:
                        rlog[tid] = RoundLogEntry(
                            meas_idx=e.meas_idx, point=e.point,
                            measured=True, unambiguous=True)

    # ---- pending maneuver accounting and resolution ----
    for pending in state.pending_maneuvers:
        pending.visible_count += 1
    _resolve_pending_maneuvers(state)

    # ---- unidentified pool and new-target initialization ----
    used = set()
    for a in report_assignments:
        if a.measured:
            used.add(a.meas_idx)
    free_idx = np.array([i for i in range(len(points)) if i not in used],
                        dtype=int)
    state.unassigned_recent.append((k, points[free_idx], free_idx))
    state.unassigned_recent = state.unassigned_recent[-cfg.dbscan_window:]
    created = _try_init_trees(state, dt_minutes, e_obs)

    # ---- maintenance ----
    maintain(state)

    if created:
        log = state.assignment_log.get(k, {})
        for tid in created:
            if tid in state.trees and tid in log:
                report_assignments.append(AssignmentOut(
                    tree_id=tid, meas_idx=log[tid].meas_idx,
                    point=log[tid].point, measured=True,
                    unambiguous=False))

    new_res = state.resolved_maneuvers[resolutions_before:]
    wall = (time.perf_counter() - t0) * 1e3
    state.last_t = scan.t
    return TrackerReport(
        round=k, t=scan.t, visible=True, assignments=report_assignments,
        hypothesis_total=h1_total, hypothesis_unambiguous=h1_unambiguous,
        n_trees=len(state.trees),
        n_branches=sum(len(t.branches) for t in state.trees.values()),
        n_hypotheses=len(state.hypotheses),
        maneuver_resolutions=new_res, wall_ms=wall)


class Tracker:
    """Convenience facade owning a TrackerState."""

    def __init__(self, config: TrackerConfig | None = None):
        self.state = TrackerState(config)

    def feed(self, scan, observer: KeplerianElements, maneuvers=(),
             external: dict | None = None) -> TrackerReport:
        return process_scan(self.state, scan, observer, maneuvers,
                            external)

    @property
    def assignment_log(self) -> dict:
        return self.state.assignment_log
