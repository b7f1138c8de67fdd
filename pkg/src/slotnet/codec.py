"""Translation between slot geometry and the dense/ROI supervision arrays.

First stage: one grid cell per stride-32 block carries an 8-channel record
``[ep, ex, ey, eox, eoy, el, sox, soy]``. Second stage: per proposal, two
junction ROIs and two orientation ROIs (rows ``2p`` and ``2p + 1``) plus one
classification ROI (row ``p``).
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .geometry import (
    DEFAULT_K1,
    DEFAULT_K2,
    SLOT_TYPES,
    GeometryError,
    Occupancy,
    ParkingSlot,
    Point2,
    RoiSet,
    SlotEntrance,
    UnitVec2,
    assemble_slot,
    designate_rois,
    entrance_from_slot,
    point_in_polygon,
)

log = logging.getLogger(__name__)

RPN_CHANNELS = 8


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    h: int
    w: int
    cell_w: float = 32.0
    cell_h: float = 32.0
    l_max: float = 400.0

    def __post_init__(self):
        if self.h <= 0 or self.w <= 0 or self.cell_w <= 0 or self.cell_h <= 0:
            raise CodecError("grid dimensions must be positive")
        if not self.l_max > 0:
            raise CodecError("l_max must be positive")

    @classmethod
    def for_image(cls, image_w: int, image_h: int, l_max: float, stride: int = 32) -> "GridSpec":
        return cls(h=image_h // stride, w=image_w // stride, cell_w=float(stride),
                   cell_h=float(stride), l_max=float(l_max))

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing (x, y)."""
        return int(math.floor(y / self.cell_h)), int(math.floor(x / self.cell_w))

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (col + 0.5) * self.cell_w, (row + 0.5) * self.cell_h


@dataclass
class RpnTargets:
    ep: np.ndarray   # (h, w)
    exy: np.ndarray  # (h, w, 2)
    el: np.ndarray   # (h, w)
    eo: np.ndarray   # (h, w, 2)
    so: np.ndarray   # (h, w, 2)

    def as_channels(self) -> np.ndarray:
        return np.concatenate([self.ep[..., None], self.exy, self.eo, self.el[..., None], self.so], axis=-1)

    @classmethod
    def from_channels(cls, arr: np.ndarray) -> "RpnTargets":
        arr = np.asarray(arr)
        if arr.shape[-1] != RPN_CHANNELS:
            raise CodecError(f"expected {RPN_CHANNELS} channels, got {arr.shape[-1]}")
        return cls(ep=arr[..., 0], exy=arr[..., 1:3], eo=arr[..., 3:5], el=arr[..., 5], so=arr[..., 6:8])


@dataclass(frozen=True)
class RoiSpec:
    w_roi: float = 80.0
    h_roi: float = 80.0
    high_stride: int = 16
    low_stride: int = 32

    def __post_init__(self):
        if self.w_roi != 5 * self.high_stride or self.h_roi != 5 * self.high_stride:
            raise CodecError("ROI window must span 5 high-resolution cells")
        if self.low_stride != 2 * self.high_stride:
            raise CodecError("low-resolution stride must be twice the high-resolution stride")


@dataclass
class SdnScnTargets:
    jp: np.ndarray      # (R,)
    jxy: np.ndarray     # (R, 2)
    jo: np.ndarray      # (R, 2)
    st: np.ndarray      # (R/2, 3)
    socc: np.ndarray    # (R/2,)
    i_slot: np.ndarray  # (R/2,)
    i_ori: np.ndarray | None = None  # (R,) orientation supervision; None means same as jp

    @property
    def R(self) -> int:
        return int(self.jp.shape[0])

    @property
    def ori_mask(self) -> np.ndarray:
        return self.jp if self.i_ori is None else self.i_ori

    @property
    def i_occ(self) -> np.ndarray:
        return self.i_slot * (self.socc >= 0.5)

    @property
    def i_vac(self) -> np.ndarray:
        return self.i_slot * (self.socc < 0.5)

    @classmethod
    def empty(cls, n_proposals: int = 0) -> "SdnScnTargets":
        r = 2 * n_proposals
        return cls(np.zeros(r), np.zeros((r, 2)), np.zeros((r, 2)),
                   np.zeros((n_proposals, 3)), np.zeros(n_proposals), np.zeros(n_proposals))

    @classmethod
    def concatenate(cls, parts: list["SdnScnTargets"]) -> "SdnScnTargets":
        if not parts:
            return cls.empty(0)
        out = cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                    ("jp", "jxy", "jo", "st", "socc", "i_slot")))
        if any(p.i_ori is not None for p in parts):
            out.i_ori = np.concatenate([p.ori_mask for p in parts])
        return out


# ------------------------------------------------------------------ stage one

def encode_rpn(gts: list[ParkingSlot], grid: GridSpec) -> RpnTargets:
    t = RpnTargets(
        ep=np.zeros((grid.h, grid.w)),
        exy=np.zeros((grid.h, grid.w, 2)),
        el=np.zeros((grid.h, grid.w)),
        eo=np.zeros((grid.h, grid.w, 2)),
        so=np.zeros((grid.h, grid.w, 2)),
    )
    for slot in gts:
        e = entrance_from_slot(slot)
        row, col = grid.cell_of(e.center.x, e.center.y)
        if not (0 <= row < grid.h and 0 <= col < grid.w):
            raise CodecError(f"entrance centre ({e.center.x:.2f}, {e.center.y:.2f}) outside the grid")
        if t.ep[row, col]:
            raise CodecError(f"cell collision at row {row}, col {col}")
        cx, cy = grid.cell_center(row, col)
        t.ep[row, col] = 1.0
        t.exy[row, col] = ((e.center.x - cx) / grid.cell_w + 0.5, (e.center.y - cy) / grid.cell_h + 0.5)
        t.el[row, col] = min(1.0, e.length / grid.l_max)
        t.eo[row, col] = (e.eo.cx, e.eo.cy)
        t.so[row, col] = (e.so.cx, e.so.cy)
    return t


def decode_rpn(pred: RpnTargets, grid: GridSpec, tau_prop: float = 0.5,
               counter: Counter | None = None) -> list[SlotEntrance]:
    """Turn one image's activated first-stage output into entrance proposals.

    Cells whose orientation output cannot be normalised are skipped and
    tallied under ``counter["degenerate_proposal"]``.
    """
    out: list[SlotEntrance] = []
    dropped = 0
    rows, cols = np.nonzero(np.asarray(pred.ep) >= tau_prop)
    for row, col in zip(rows.tolist(), cols.tolist()):
        cx, cy = grid.cell_center(row, col)
        ex, ey = pred.exy[row, col]
        length = float(pred.el[row, col]) * grid.l_max
        try:
            e = SlotEntrance(
                center=Point2(cx + (float(ex) - 0.5) * grid.cell_w, cy + (float(ey) - 0.5) * grid.cell_h),
                eo=UnitVec2.normalized(float(pred.eo[row, col, 0]), float(pred.eo[row, col, 1])),
                length=length,
                so=UnitVec2.normalized(float(pred.so[row, col, 0]), float(pred.so[row, col, 1])),
                score=float(min(1.0, max(0.0, pred.ep[row, col]))),
            )
        except GeometryError:
            dropped += 1
            continue
        out.append(e)
    if dropped:
        log.warning("dropped %d degenerate proposals", dropped)
        if counter is not None:
            counter["degenerate_proposal"] += dropped
    return out


# ------------------------------------------------------------------ stage two

def _junction_table(gts: list[ParkingSlot]) -> tuple[np.ndarray, np.ndarray]:
    pts, seps = [], []
    for s in gts:
        pts += [(s.j1.x, s.j1.y), (s.j2.x, s.j2.y)]
        seps += [(s.sep1.cx, s.sep1.cy), (s.sep2.cx, s.sep2.cy)]
    return np.array(pts, dtype=np.float64).reshape(-1, 2), np.array(seps, dtype=np.float64).reshape(-1, 2)


def _ray_distance(q, origin, direction) -> float:
    v = np.subtract(q, origin)
    along = max(0.0, float(v @ direction))
    return float(np.hypot(*(v - along * direction)))


def encode_sdn_scn(proposals: list[SlotEntrance], gts: list[ParkingSlot], spec: RoiSpec = RoiSpec(),
                   match_radius: float | None = None, k1: float = DEFAULT_K1, k2: float = DEFAULT_K2,
                   slot_depth: float = 2 * DEFAULT_K2, line_radius: float | None = None) -> SdnScnTargets:
    """Second-stage targets for ROIs designated from ``proposals``.

    A junction ROI is positive when some GT junction lies inside its square
    window of half-size ``match_radius`` (default: half the ROI width); the
    nearest such junction wins, earlier index on ties. Its orientation is
    supervised only if the paired orientation ROI centre lies within
    ``line_radius`` (default: a quarter of the ROI width) of that junction's
    separating line, since otherwise the patch need not show the line. The
    classification ROI is positive when its centre falls inside a GT slot,
    modelled as the quadrilateral reaching ``slot_depth`` pixels along each
    separating line.
    """
    half = spec.w_roi / 2 if match_radius is None else match_radius
    near_line = spec.w_roi / 4 if line_radius is None else line_radius
    pts, seps = _junction_table(gts)
    polys = [s.polygon(slot_depth) for s in gts]
    t = SdnScnTargets.empty(len(proposals))
    t.i_ori = np.zeros(t.R)
    for p, prop in enumerate(proposals):
        rois = designate_rois(prop, k1, k2)
        for k, (c, o) in enumerate(((rois.loc1, rois.ori1), (rois.loc2, rois.ori2))):
            r = 2 * p + k
            if not len(pts):
                continue
            d = pts - (c.x, c.y)
            inside = np.nonzero(np.max(np.abs(d), axis=1) <= half)[0]
            if not len(inside):
                continue
            dist = np.hypot(d[inside, 0], d[inside, 1])
            best = int(inside[np.argmin(dist)])  # argmin returns first minimum
            t.jp[r] = 1.0
            t.jxy[r] = d[best, 0] / spec.w_roi + 0.5, d[best, 1] / spec.h_roi + 0.5
            t.jo[r] = seps[best]
            t.i_ori[r] = float(_ray_distance((o.x, o.y), pts[best], seps[best]) <= near_line)
        for s, poly in zip(gts, polys):
            if point_in_polygon(rois.cls, poly):
                t.i_slot[p] = 1.0
                t.st[p, s.slot_type.index] = 1.0
                t.socc[p] = 1.0 if s.occupancy == Occupancy.OCCUPIED else 0.0
                break
    return t


def decode_sdn_scn(pred: SdnScnTargets, rois: list[RoiSet], spec: RoiSpec = RoiSpec(),
                   tau_j: float = 0.5, scores: list[float] | None = None,
                   counter: Counter | None = None) -> list[ParkingSlot]:
    """Refine proposals into slots. A proposal survives only if both junction
    possibilities reach ``tau_j``; rejected ones are tallied in ``counter``.
    """
    if pred.R != 2 * len(rois):
        raise CodecError(f"prediction has {pred.R} junction rows for {len(rois)} proposals")
    out: list[ParkingSlot] = []
    rejected = degenerate = 0
    for p, roi in enumerate(rois):
        a, b = 2 * p, 2 * p + 1
        if pred.jp[a] < tau_j or pred.jp[b] < tau_j:
            rejected += 1
            continue
        try:
            j1 = Point2(roi.loc1.x + (float(pred.jxy[a, 0]) - 0.5) * spec.w_roi,
                        roi.loc1.y + (float(pred.jxy[a, 1]) - 0.5) * spec.h_roi)
            j2 = Point2(roi.loc2.x + (float(pred.jxy[b, 0]) - 0.5) * spec.w_roi,
                        roi.loc2.y + (float(pred.jxy[b, 1]) - 0.5) * spec.h_roi)
            sep1 = UnitVec2.normalized(float(pred.jo[a, 0]), float(pred.jo[a, 1]))
            sep2 = UnitVec2.normalized(float(pred.jo[b, 0]), float(pred.jo[b, 1]))
            slot = assemble_slot(
                j1, j2, sep1, sep2,
                slot_type=SLOT_TYPES[int(np.argmax(pred.st[p]))],
                occupancy=Occupancy.OCCUPIED if pred.socc[p] >= 0.5 else Occupancy.VACANT,
                score=1.0 if scores is None else float(scores[p]),
            )
        except GeometryError:
            degenerate += 1
            continue
        out.append(slot)
    if counter is not None:
        counter["rejected_proposal"] += rejected
        counter["degenerate_slot"] += degenerate
    return out
