import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slotnet.geometry import (
    GeometryError, Occupancy, ParkingSlot, Point2, SlotEntrance, SlotType, UnitVec2, assemble_slot,
    designate_rois, entrance_from_slot, nms_entrances, point_in_polygon,
)

DOWN = UnitVec2(0.0, 1.0)


def close(p, xy, tol=1e-9):
    return abs(p.x - xy[0]) <= tol and abs(p.y - xy[1]) <= tol


def test_entrance_axis_aligned():
    e = entrance_from_slot(ParkingSlot(Point2(0, 0), Point2(60, 0), DOWN, DOWN))
    assert close(e.center, (30, 0)) and (e.eo.cx, e.eo.cy) == (1, 0) and e.length == 60
    assert (e.so.cx, e.so.cy) == (0, 1)
    left = UnitVec2(-1.0, 0.0)
    e = entrance_from_slot(ParkingSlot(Point2(10, 10), Point2(10, 90), left, left))
    assert close(e.center, (10, 50)) and (e.eo.cx, e.eo.cy) == (0, 1) and e.length == 80
    assert (e.so.cx, e.so.cy) == (-1, 0)


def test_slot_direction_normalises_sum():
    s = ParkingSlot(Point2(0, 0), Point2(60, 0), UnitVec2(0.6, 0.8), UnitVec2(0.8, 0.6))
    so = entrance_from_slot(s).so
    assert so.cx == pytest.approx(math.sqrt(2) / 2) and so.cy == pytest.approx(math.sqrt(2) / 2)


def test_designate_rois_examples():
    e = SlotEntrance(Point2(100, 100), UnitVec2(1, 0), 60, UnitVec2(0, 1))
    r = designate_rois(e, 50, 32)
    assert close(r.loc1, (70, 100)) and close(r.loc2, (130, 100))
    assert close(r.ori1, (70, 150)) and close(r.ori2, (130, 150)) and close(r.cls, (100, 132))
    r = designate_rois(SlotEntrance(Point2(100, 100), UnitVec2(1, 0), 60, UnitVec2(0, -1)), 50, 32)
    assert r.ori1.y == 50 and r.cls.y == 68


def test_invalid_values_rejected():
    with pytest.raises(GeometryError):
        UnitVec2(1.0, 1.0)
    with pytest.raises(GeometryError):
        SlotEntrance(Point2(0, 0), UnitVec2(1, 0), 0.0, DOWN)
    with pytest.raises(GeometryError):
        ParkingSlot(Point2(1, 1), Point2(1, 1), DOWN, DOWN)
    with pytest.raises(GeometryError):
        designate_rois(SlotEntrance(Point2(0, 0), UnitVec2(1, 0), 10, DOWN), 0, 32)


@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(0, 2 * math.pi), st.floats(5, 200))
def test_rois_translation_equivariant(tx, ty, theta, length):
    eo = UnitVec2.from_angle(theta)
    so = UnitVec2.from_angle(theta + 1.2)
    a = designate_rois(SlotEntrance(Point2(10, 20), eo, length, so))
    b = designate_rois(SlotEntrance(Point2(10 + tx, 20 + ty), eo, length, so))
    for f in ("loc1", "loc2", "ori1", "ori2", "cls"):
        pa, pb = getattr(a, f), getattr(b, f)
        assert pb.x - pa.x == pytest.approx(tx, abs=1e-9) and pb.y - pa.y == pytest.approx(ty, abs=1e-9)


def test_nms_examples():
    a = SlotEntrance(Point2(0, 0), UnitVec2(1, 0), 50, DOWN, 0.9)
    b = SlotEntrance(Point2(5, 0), UnitVec2(1, 0), 50, DOWN, 0.8)
    c = SlotEntrance(Point2(40, 0), UnitVec2(1, 0), 50, DOWN, 0.8)
    assert nms_entrances([b, a], 16) == [a]
    assert nms_entrances([a, c], 16) == [a, c]
    assert nms_entrances([], 16) == []


entrances = st.builds(
    lambda x, y, s: SlotEntrance(Point2(x, y), UnitVec2(1, 0), 50, DOWN, s),
    st.floats(0, 100), st.floats(0, 100), st.floats(0, 1),
)


@settings(max_examples=200)
@given(st.lists(entrances, max_size=20), st.floats(1, 50))
def test_nms_properties(props, thresh):
    once = nms_entrances(props, thresh)
    assert nms_entrances(once, thresh) == once
    assert all(any(p is q for q in props) for p in once)
    for i, p in enumerate(once):
        for q in once[i + 1:]:
            assert (p.center - q.center).norm() >= thresh
    assert [p.score for p in once] == sorted((p.score for p in once), reverse=True)


def test_assemble_canonical_and_swapped():
    s = assemble_slot(Point2(0, 0), Point2(60, 0), DOWN, DOWN, SlotType.SLANTED, Occupancy.OCCUPIED)
    assert s.j1 == Point2(0, 0) and s.is_canonical()
    sep1, sep2 = UnitVec2.normalized(0.1, 1), UnitVec2.normalized(-0.1, 1)
    t = assemble_slot(Point2(60, 0), Point2(0, 0), sep1, sep2)
    assert t.j1 == Point2(0, 0) and t.j2 == Point2(60, 0) and t.sep1 == sep2 and t.sep2 == sep1
    with pytest.raises(GeometryError):
        assemble_slot(Point2(3, 3), Point2(3, 3), DOWN, DOWN)


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0, 2 * math.pi), st.floats(10, 100),
       st.floats(0.3, 2.8))
def test_assemble_always_canonical_and_roundtrips(x, y, theta, length, phi):
    eo = UnitVec2.from_angle(theta)
    sep = UnitVec2.from_angle(theta + phi)
    j1 = Point2(x, y)
    j2 = j1 + eo.as_point().scaled(length)
    for a, b in ((j1, j2), (j2, j1)):
        s = assemble_slot(a, b, sep, sep)
        d = s.j2 - s.j1
        assert d.x * s.slot_direction.cy - d.y * s.slot_direction.cx >= 0
    canon = assemble_slot(j1, j2, sep, sep)
    e = entrance_from_slot(canon)
    again = entrance_from_slot(assemble_slot(canon.j1, canon.j2, canon.sep1, canon.sep2))
    assert (e.center - again.center).norm() < 1e-9 and abs(e.length - again.length) < 1e-9


def test_point_in_polygon():
    sq = np.array([[0, 0], [10, 0], [10, 10], [0, 10]], float)
    assert point_in_polygon(Point2(5, 5), sq)
    assert point_in_polygon(Point2(10, 5), sq)
    assert not point_in_polygon(Point2(11, 5), sq)
