import math

import pytest

from slotnet.evalx import (
    LOOSE, TIGHT, EvalReport, MatchCriteria, evaluate, format_table, match_slots, pair_error,
)
from slotnet.geometry import ParkingSlot, Point2, UnitVec2

import suites

DOWN = UnitVec2(0.0, 1.0)


def slot(x=0.0, y=0.0, a1=0.0, a2=0.0, score=1.0, length=60.0):
    s1 = UnitVec2.from_angle(math.pi / 2 + math.radians(a1))
    s2 = UnitVec2.from_angle(math.pi / 2 + math.radians(a2))
    return ParkingSlot(Point2(x, y), Point2(x + length, y), s1, s2, score=score)


def test_identical_is_tight_tp():
    assert match_slots([slot()], [slot()], TIGHT).tp == 1


def test_offsets_loose_but_not_tight():
    gt = slot()
    det = ParkingSlot(Point2(5, 0), Point2(60, 7), UnitVec2.from_angle(math.pi / 2 + math.radians(3)),
                      UnitVec2.from_angle(math.pi / 2 + math.radians(4)))
    assert match_slots([det], [gt], LOOSE).tp == 1
    assert match_slots([det], [gt], TIGHT).tp == 0


def test_one_gt_two_dets():
    r = match_slots([slot(score=0.9), slot(1, 0, score=0.8)], [slot()], LOOSE)
    assert (r.tp, r.fp) == (1, 1)
    assert r.pairs == [(0, 0)]


def test_junction_order_does_not_matter():
    gt = slot()
    flipped = ParkingSlot(gt.j2, gt.j1, gt.sep2, gt.sep1)
    e = pair_error(flipped, gt)
    assert e.swapped and max(e.dist) == 0
    assert match_slots([flipped], [gt], TIGHT).tp == 1


def test_report_ratios():
    gts = [[slot(100 * i)] for i in range(10)]
    dets = [[slot(100 * i)] for i in range(9)] + [[slot(5000)]]
    r = evaluate(dets, gts, LOOSE)
    assert (r.tp, r.fp, r.gt) == (9, 1, 10)
    assert r.recall == 0.9 and r.precision == 0.9
    assert r.location_error_mean == 0 and r.type_rate == 1


def test_report_undefined_values():
    r = evaluate([[]], [[slot()]], LOOSE)
    assert r.recall == 0 and math.isnan(r.precision) and r.notes
    r = evaluate([[slot()]], [[]], LOOSE)
    assert math.isnan(r.recall) and r.precision == 0 and r.fp == 1
    with pytest.raises(ValueError):
        evaluate([[]], [], LOOSE)


def test_report_json_roundtrip():
    r = evaluate([[slot(2)], []], [[slot()], [slot()]], LOOSE)
    back = EvalReport.from_dict(__import__("json").loads(r.to_json()))
    assert back.recall == r.recall and back.tp == r.tp and back.criteria == r.criteria
    assert math.isnan(back.entrance_orientation_error_mean) == math.isnan(r.entrance_orientation_error_mean)
    assert "recall" in format_table([r, evaluate([[slot(2)]], [[slot()]], TIGHT)])


def test_criteria_parse():
    assert MatchCriteria.parse("loose") is LOOSE and MatchCriteria.parse("TIGHT") is TIGHT
    c = MatchCriteria.parse("8,7")
    assert (c.m, c.n) == (8, 7)
    with pytest.raises(ValueError):
        MatchCriteria.parse("8")
    with pytest.raises(ValueError):
        MatchCriteria(0, 5)


def test_translation_invariance():
    import numpy as np
    rng = np.random.default_rng(4)
    for _ in range(100):
        dets, gts = suites.random_instance(rng)
        t = Point2(*rng.uniform(-500, 500, 2))
        move = lambda s: ParkingSlot(s.j1 + t, s.j2 + t, s.sep1, s.sep2, s.slot_type, s.occupancy, s.score)
        assert match_slots(dets, gts, LOOSE).tp == match_slots([move(d) for d in dets], [move(g) for g in gts],
                                                               LOOSE).tp


def test_oracle_and_monotonicity_small():
    res = suites.evaluation_oracle(200)
    assert res.agreement >= 0.99 and res.ratio_violations == 0
    assert suites.monotonicity_violations(200) == 0
