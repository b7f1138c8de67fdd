"""Detection matching, recall/precision, and positioning/classification statistics."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import ParkingSlot, UnitVec2, angle_between_deg, entrance_from_slot


@dataclass(frozen=True)
class MatchCriteria:
    m: float
    n: float
    label: str = "custom"

    def __post_init__(self):
        if not (self.m > 0 and self.n > 0):
            raise ValueError("match thresholds must be positive")

    @classmethod
    def parse(cls, text: str) -> "MatchCriteria":
        text = text.strip().lower()
        if text == "loose":
            return LOOSE
        if text == "tight":
            return TIGHT
        try:
            m, n = (float(v) for v in text.split(","))
        except ValueError as exc:
            raise ValueError(f"criteria must be 'loose', 'tight' or 'M,N', got {text!r}") from exc
        return cls(m, n, "custom")


LOOSE = MatchCriteria(12.0, 10.0, "loose")
TIGHT = MatchCriteria(6.0, 5.0, "tight")


@dataclass(frozen=True)
class PairError:
    """Errors of a detection against one ground truth under the best junction pairing."""

    dist: tuple[float, float]
    angle: tuple[float, float]
    swapped: bool

    def ok(self, c: MatchCriteria) -> bool:
        return max(self.dist) <= c.m and max(self.angle) <= c.n


def pair_error(det: ParkingSlot, gt: ParkingSlot) -> PairError:
    """Junction pairing that minimises the larger of the two junction distances."""
    straight = ((det.j1 - gt.j1).norm(), (det.j2 - gt.j2).norm())
    crossed = ((det.j1 - gt.j2).norm(), (det.j2 - gt.j1).norm())
    if max(crossed) < max(straight):
        return PairError(crossed, (angle_between_deg(det.sep1, gt.sep2), angle_between_deg(det.sep2, gt.sep1)), True)
    return PairError(straight, (angle_between_deg(det.sep1, gt.sep1), angle_between_deg(det.sep2, gt.sep2)), False)


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]  # (det index, gt index)
    tp_flags: list[bool]          # per detection
    n_gt: int

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.tp_flags) - self.tp


def match_slots(dets: list[ParkingSlot], gts: list[ParkingSlot], c: MatchCriteria) -> MatchResult:
    """Greedy one-to-one matching in descending detection score.

    Each detection takes the still-unmatched GT that passes both thresholds
    with the smallest larger-junction distance (lower GT index on ties).
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = [False] * len(gts)
    flags = [False] * len(dets)
    pairs = []
    for i in order:
        best, best_d = -1, math.inf
        for g, gt in enumerate(gts):
            if taken[g]:
                continue
            e = pair_error(dets[i], gt)
            if e.ok(c) and max(e.dist) < best_d:
                best, best_d = g, max(e.dist)
        if best >= 0:
            taken[best] = True
            flags[i] = True
            pairs.append((i, best))
    return MatchResult(pairs=sorted(pairs), tp_flags=flags, n_gt=len(gts))


def max_matching_size(dets: list[ParkingSlot], gts: list[ParkingSlot], c: MatchCriteria) -> int:
    """Exhaustive maximum-cardinality matching; only for small instances."""
    ok = [[pair_error(d, g).ok(c) for g in gts] for d in dets]
    nd, ng = len(dets), len(gts)
    best = 0
    if nd <= ng:
        for perm in itertools.permutations(range(ng), nd):
            best = max(best, sum(ok[i][perm[i]] for i in range(nd)))
    else:
        for perm in itertools.permutations(range(nd), ng):
            best = max(best, sum(ok[perm[j]][j] for j in range(ng)))
    return best


def _nan_stats(vals):
    if not vals:
        return math.nan, math.nan
    a = np.asarray(vals, dtype=np.float64)
    return float(a.mean()), float(a.std())


@dataclass
class EvalReport:
    criteria: MatchCriteria
    recall: float
    precision: float
    tp: int
    fp: int
    gt: int
    location_error_mean: float
    location_error_std: float
    orientation_error_mean: float
    orientation_error_std: float
    entrance_orientation_error_mean: float
    type_rate: float
    occupancy_rate: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["criteria"] = asdict(self.criteria)
        # JSON has no NaN; undefined statistics become null
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["criteria"] = MatchCriteria(**d["criteria"])
        for k, v in d.items():
            if v is None:
                d[k] = math.nan
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def compute_report(results: list[MatchResult], dets: list[list[ParkingSlot]], gts: list[list[ParkingSlot]],
                   c: MatchCriteria) -> EvalReport:
    """Aggregate per-image match results; error and class statistics use TPs only."""
    tp = sum(r.tp for r in results)
    n_det = sum(len(d) for d in dets)
    n_gt = sum(len(g) for g in gts)
    fp = n_det - tp
    loc, ori, ent, type_ok, occ_ok = [], [], [], [], []
    for r, d, g in zip(results, dets, gts):
        for di, gi in r.pairs:
            e = pair_error(d[di], g[gi])
            loc.append(0.5 * (e.dist[0] + e.dist[1]))
            ori.append(0.5 * (e.angle[0] + e.angle[1]))
            de, ge = entrance_from_slot(d[di]), entrance_from_slot(g[gi])
            deo = de.eo if not e.swapped else UnitVec2(-de.eo.cx, -de.eo.cy)
            ent.append(angle_between_deg(deo, ge.eo))
            type_ok.append(d[di].slot_type == g[gi].slot_type)
            occ_ok.append(d[di].occupancy == g[gi].occupancy)
    notes = []
    recall = tp / n_gt if n_gt else math.nan
    if not n_gt:
        notes.append("no ground truth: recall undefined")
    precision = tp / (tp + fp) if (tp + fp) else math.nan
    if not (tp + fp):
        notes.append("no detections: precision undefined")
    lm, ls = _nan_stats(loc)
    om, os_ = _nan_stats(ori)
    return EvalReport(
        criteria=c, recall=recall, precision=precision, tp=tp, fp=fp, gt=n_gt,
        location_error_mean=lm, location_error_std=ls,
        orientation_error_mean=om, orientation_error_std=os_,
        entrance_orientation_error_mean=_nan_stats(ent)[0],
        type_rate=float(np.mean(type_ok)) if type_ok else math.nan,
        occupancy_rate=float(np.mean(occ_ok)) if occ_ok else math.nan,
        notes=notes,
    )


def evaluate(dets: list[list[ParkingSlot]], gts: list[list[ParkingSlot]], c: MatchCriteria) -> EvalReport:
    if len(dets) != len(gts):
        raise ValueError(f"{len(dets)} detection sets for {len(gts)} label sets")
    results = [match_slots(d, g, c) for d, g in zip(dets, gts)]
    return compute_report(results, dets, gts, c)


def _pct(v):
    return "   n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{100 * v:6.2f}%"


def _num(v, unit=""):
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.2f}{unit}"


def format_table(reports: list[EvalReport]) -> str:
    """Aligned text table: detection rates, positioning errors, classification rates."""
    head = f"{'criteria':<22}{'recall':>9}{'precision':>11}{'TP':>6}{'FP':>6}{'GT':>6}"
    lines = [head, "-" * len(head)]
    for r in reports:
        name = f"{r.criteria.label} ({r.criteria.m:g}px, {r.criteria.n:g}deg)"
        lines.append(f"{name:<22}{_pct(r.recall):>9}{_pct(r.precision):>11}{r.tp:>6}{r.fp:>6}{r.gt:>6}")
    lines.append("")
    head2 = f"{'criteria':<10}{'loc mean':>10}{'loc std':>10}{'ori mean':>10}{'ori std':>10}{'type':>9}{'occ':>9}"
    lines += [head2, "-" * len(head2)]
    for r in reports:
        lines.append(f"{r.criteria.label:<10}{_num(r.location_error_mean, 'px'):>10}"
                     f"{_num(r.location_error_std, 'px'):>10}{_num(r.orientation_error_mean, 'd'):>10}"
                     f"{_num(r.orientation_error_std, 'd'):>10}{_pct(r.type_rate):>9}{_pct(r.occupancy_rate):>9}")
    return "\n".join(lines)
