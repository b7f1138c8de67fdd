from collections import Counter

import numpy as np
import pytest

from slotnet.codec import (
    CodecError, GridSpec, RoiSpec, RpnTargets, SdnScnTargets, decode_rpn, decode_sdn_scn, encode_rpn,
    encode_sdn_scn,
)
from slotnet.geometry import Occupancy, ParkingSlot, Point2, SlotEntrance, SlotType, UnitVec2, designate_rois

import suites

DOWN = UnitVec2(0.0, 1.0)


def slot_at(cx, cy, length=60.0, **kw):
    return ParkingSlot(Point2(cx - length / 2, cy), Point2(cx + length / 2, cy), DOWN, DOWN, **kw)


def test_grid_cell_and_exy_example():
    grid = GridSpec.for_image(256, 256, 400)
    assert grid.cell_of(100, 50) == (1, 3)
    assert grid.cell_center(1, 3) == (112, 48)
    t = encode_rpn([slot_at(100, 50)], grid)
    np.testing.assert_allclose(t.exy[1, 3], (0.125, 0.5625))


def test_length_target_and_centre_offset():
    grid = GridSpec.for_image(256, 256, 400)
    t = encode_rpn([slot_at(112, 48, length=120)], grid)
    assert t.el[1, 3] == pytest.approx(0.3)
    np.testing.assert_array_equal(t.exy[1, 3], (0.5, 0.5))


def test_collision_and_outside_rejected():
    grid = GridSpec.for_image(256, 256, 400)
    with pytest.raises(CodecError, match="collision"):
        encode_rpn([slot_at(100, 50), slot_at(105, 52)], grid)
    with pytest.raises(CodecError):
        encode_rpn([slot_at(300, 50)], grid)


def test_decode_rpn_threshold_and_length_bound():
    grid = GridSpec.for_image(64, 64, 400)
    t = encode_rpn([slot_at(20, 20)], grid)
    t.ep[:] *= 0.4
    assert decode_rpn(t, grid, 0.5) == []
    t = encode_rpn([slot_at(20, 20)], grid)
    t.el[0, 0] = 1.0
    assert decode_rpn(t, grid, 0.5)[0].length == 400


def test_decode_rpn_counts_degenerate():
    grid = GridSpec.for_image(64, 64, 400)
    t = encode_rpn([slot_at(20, 20)], grid)
    t.eo[0, 0] = 0.0
    c = Counter()
    assert decode_rpn(t, grid, 0.5, c) == [] and c["degenerate_proposal"] == 1


def test_rpn_targets_channel_roundtrip():
    rng = np.random.default_rng(0)
    arr = rng.random((3, 4, 8))
    np.testing.assert_array_equal(RpnTargets.from_channels(arr).as_channels(), arr)


def test_sdn_junction_target_example():
    spec = RoiSpec()
    gt = ParkingSlot(Point2(66, 92), Point2(126, 92), DOWN, DOWN)
    prop = SlotEntrance(Point2(100, 100), UnitVec2(1, 0), 60, DOWN)
    t = encode_sdn_scn([prop], [gt], spec)
    assert t.jp[0] == 1.0
    np.testing.assert_allclose(t.jxy[0], (0.45, 0.40))


def test_sdn_masks_and_types():
    far = SlotEntrance(Point2(500, 500), UnitVec2(1, 0), 60, DOWN)
    t = encode_sdn_scn([far], [slot_at(100, 100)])
    assert not t.jp.any() and not t.jxy.any() and t.i_slot[0] == 0
    gt = slot_at(100, 100, slot_type=SlotType.SLANTED, occupancy=Occupancy.OCCUPIED)
    e = SlotEntrance(Point2(100, 100), UnitVec2(1, 0), 60, DOWN)
    t = encode_sdn_scn([e], [gt])
    np.testing.assert_array_equal(t.st[0], (0, 0, 1))
    assert t.socc[0] == 1 and t.i_occ[0] == 1 and t.i_vac[0] == 0


def test_orientation_supervised_only_when_patch_sees_the_line():
    gt = slot_at(100, 100)
    aligned = SlotEntrance(Point2(100, 100), UnitVec2(1, 0), 60, DOWN)
    # same junctions, slot direction turned 60 degrees: orientation ROIs land ~43 px off the lines
    turned = SlotEntrance(Point2(100, 100), UnitVec2(1, 0), 60, UnitVec2.from_angle(np.radians(150)))
    t = encode_sdn_scn([aligned, turned], [gt])
    np.testing.assert_array_equal(t.jp, [1, 1, 1, 1])
    np.testing.assert_array_equal(t.ori_mask, [1, 1, 0, 0])
    both = SdnScnTargets.concatenate([t, SdnScnTargets.empty(1)])
    np.testing.assert_array_equal(both.ori_mask, [1, 1, 0, 0, 0, 0])


def test_decode_sdn_rules():
    e = SlotEntrance(Point2(100, 100), UnitVec2(1, 0), 60, DOWN)
    rois = [designate_rois(e)]
    pred = SdnScnTargets(jp=np.array([0.9, 0.3]), jxy=np.full((2, 2), 0.5), jo=np.array([[0, 1.0], [0, 1.0]]),
                         st=np.array([[0.2, 0.5, 0.3]]), socc=np.array([0.7]), i_slot=np.zeros(1))
    c = Counter()
    assert decode_sdn_scn(pred, rois, tau_j=0.5, counter=c) == [] and c["rejected_proposal"] == 1
    pred.jp[:] = 0.9
    (s,) = decode_sdn_scn(pred, rois, tau_j=0.5)
    assert s.slot_type == SlotType.PARALLEL and s.occupancy == Occupancy.OCCUPIED
    assert s.j1 == Point2(70, 100) and s.j2 == Point2(130, 100)


def test_targets_in_documented_ranges():
    for i in range(50):
        gts = suites.random_scene_slots(i)
        t = encode_rpn(gts, GridSpec.for_image(192, 192, 160))
        assert int(t.ep.sum()) == len(gts)
        for a in (t.exy, t.el):
            assert a.min() >= 0 and a.max() <= 1
        for a in (t.eo, t.so):
            assert a.min() >= -1 and a.max() <= 1


def test_roundtrip_small_sample():
    worst = suites.codec_roundtrip_errors(n=100)
    assert worst["count_mismatch"] == 0 and worst["class_mismatch"] == 0
    assert max(v for k, v in worst.items() if not k.endswith("mismatch")) < 1e-6
