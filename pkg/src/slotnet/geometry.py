"""Slot and entrance representations, ROI placement, and duplicate suppression.

Image coordinates: origin top-left, x to the right, y downward. Junction
order is canonical when the slot interior lies to the left of j1 -> j2, i.e.
``cross(j2 - j1, slot_direction) >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

DEFAULT_K1 = 50.0
DEFAULT_K2 = 32.0
DEFAULT_NMS_DIST = 16.0


class GeometryError(ValueError):
    pass


class SlotType(str, Enum):
    PERPENDICULAR = "perpendicular"
    PARALLEL = "parallel"
    SLANTED = "slanted"

    @property
    def index(self) -> int:
        return SLOT_TYPES.index(self)


SLOT_TYPES = (SlotType.PERPENDICULAR, SlotType.PARALLEL, SlotType.SLANTED)


class Occupancy(str, Enum):
    VACANT = "vacant"
    OCCUPIED = "occupied"


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite point ({self.x}, {self.y})")

    def __add__(self, other: "Point2") -> "Point2":
        return Point2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Point2") -> "Point2":
        return Point2(self.x - other.x, self.y - other.y)

    def scaled(self, s: float) -> "Point2":
        return Point2(self.x * s, self.y * s)

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class UnitVec2:
    cx: float
    cy: float

    def __post_init__(self):
        n2 = self.cx * self.cx + self.cy * self.cy
        if not abs(n2 - 1.0) <= 1e-6:
            raise GeometryError(f"not a unit vector: ({self.cx}, {self.cy})")

    @classmethod
    def normalized(cls, x: float, y: float) -> "UnitVec2":
        n = math.hypot(x, y)
        if n == 0.0 or not math.isfinite(n):
            raise GeometryError("cannot normalize a zero-length vector")
        return cls(x / n, y / n)

    @classmethod
    def from_angle(cls, rad: float) -> "UnitVec2":
        return cls(math.cos(rad), math.sin(rad))

    def angle(self) -> float:
        return math.atan2(self.cy, self.cx)

    def as_point(self) -> Point2:
        return Point2(self.cx, self.cy)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy], dtype=np.float64)


def cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def angle_between_deg(u: UnitVec2, v: UnitVec2) -> float:
    """Unsigned angle between two unit vectors, in [0, 180] degrees."""
    c = max(-1.0, min(1.0, u.cx * v.cx + u.cy * v.cy))
    s = cross(u.cx, u.cy, v.cx, v.cy)
    return abs(math.degrees(math.atan2(s, c)))


@dataclass(frozen=True)
class SlotEntrance:
    center: Point2
    eo: UnitVec2
    length: float
    so: UnitVec2
    score: float = 1.0

    def __post_init__(self):
        if not self.length > 0:
            raise GeometryError(f"entrance length must be positive, got {self.length}")
        if not 0.0 <= self.score <= 1.0:
            raise GeometryError(f"score outside [0, 1]: {self.score}")

    def endpoints(self) -> tuple[Point2, Point2]:
        half = self.eo.as_point().scaled(0.5 * self.length)
        return self.center - half, self.center + half


@dataclass(frozen=True)
class ParkingSlot:
    j1: Point2
    j2: Point2
    sep1: UnitVec2
    sep2: UnitVec2
    slot_type: SlotType = SlotType.PERPENDICULAR
    occupancy: Occupancy = Occupancy.VACANT
    score: float = field(default=1.0, compare=True)

    def __post_init__(self):
        if (self.j2 - self.j1).norm() <= 0.0:
            raise GeometryError("zero-length entrance")

    @property
    def slot_direction(self) -> UnitVec2:
        return UnitVec2.normalized(self.sep1.cx + self.sep2.cx, self.sep1.cy + self.sep2.cy)

    def is_canonical(self) -> bool:
        d = self.j2 - self.j1
        so = self.slot_direction
        return cross(d.x, d.y, so.cx, so.cy) >= 0.0

    def polygon(self, depth: float) -> np.ndarray:
        """Quadrilateral j1, j2, j2 + depth*sep2, j1 + depth*sep1 as a (4, 2) array."""
        return np.array([
            [self.j1.x, self.j1.y],
            [self.j2.x, self.j2.y],
            [self.j2.x + depth * self.sep2.cx, self.j2.y + depth * self.sep2.cy],
            [self.j1.x + depth * self.sep1.cx, self.j1.y + depth * self.sep1.cy],
        ])


@dataclass(frozen=True)
class RoiSet:
    loc1: Point2
    loc2: Point2
    ori1: Point2
    ori2: Point2
    cls: Point2


def entrance_from_slot(slot: ParkingSlot) -> SlotEntrance:
    d = slot.j2 - slot.j1
    length = d.norm()
    if length <= 0.0:
        raise GeometryError("zero-length entrance")
    center = Point2(0.5 * (slot.j1.x + slot.j2.x), 0.5 * (slot.j1.y + slot.j2.y))
    return SlotEntrance(
        center=center,
        eo=UnitVec2(d.x / length, d.y / length),
        length=length,
        so=slot.slot_direction,
        score=1.0,
    )


def designate_rois(e: SlotEntrance, k1: float = DEFAULT_K1, k2: float = DEFAULT_K2) -> RoiSet:
    """Place the two location, two orientation and one classification ROI centres."""
    if not (k1 > 0 and k2 > 0):
        raise GeometryError("ROI displacement lengths must be positive")
    loc1, loc2 = e.endpoints()
    so = e.so.as_point()
    return RoiSet(
        loc1=loc1,
        loc2=loc2,
        ori1=loc1 + so.scaled(k1),
        ori2=loc2 + so.scaled(k1),
        cls=e.center + so.scaled(k2),
    )


def nms_entrances(props: list[SlotEntrance], dist_thresh: float = DEFAULT_NMS_DIST) -> list[SlotEntrance]:
    """Greedy centre-distance suppression; highest score wins.

    Ties in score keep input order, so the result is deterministic.
    """
    order = sorted(range(len(props)), key=lambda i: -props[i].score)
    kept: list[SlotEntrance] = []
    for i in order:
        p = props[i]
        if all((p.center - k.center).norm() >= dist_thresh for k in kept):
            kept.append(p)
    return kept


def assemble_slot(refined_j1: Point2, refined_j2: Point2, sep1: UnitVec2, sep2: UnitVec2,
                  slot_type=SlotType.PERPENDICULAR, occupancy=Occupancy.VACANT,
                  score: float = 1.0) -> ParkingSlot:
    """Build a slot from second-stage outputs, swapping junctions into canonical order."""
    slot = ParkingSlot(refined_j1, refined_j2, sep1, sep2, SlotType(slot_type), Occupancy(occupancy), score)
    if slot.is_canonical():
        return slot
    return replace(slot, j1=refined_j2, j2=refined_j1, sep1=sep2, sep2=sep1)


def point_in_polygon(p: Point2, poly: np.ndarray) -> bool:
    """Even-odd rule; points on an edge count as inside."""
    x, y = p.x, p.y
    n = len(poly)
    inside = False
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        # on-segment check
        if abs(cross(x2 - x1, y2 - y1, x - x1, y - y1)) <= 1e-9 * max(1.0, math.hypot(x2 - x1, y2 - y1)):
            if min(x1, x2) - 1e-9 <= x <= max(x1, x2) + 1e-9 and min(y1, y2) - 1e-9 <= y <= max(y1, y2) + 1e-9:
                return True
        if (y1 > y) != (y2 > y):
            xin = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xin:
                inside = not inside
    return inside
