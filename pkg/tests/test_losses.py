import math

import numpy as np
import pytest

from slotnet.codec import GridSpec, RpnTargets, SdnScnTargets
from slotnet.diffnet.model import SecondStageOutput
from slotnet.diffnet.tensor import Tensor
from slotnet.geometry import Occupancy, ParkingSlot, Point2, SlotType, UnitVec2
from slotnet.losses import (
    PRESETS, LossError, LossWeights, corpus_lambdas, loss_first, loss_scn, loss_sdn, loss_total,
)

import suites


def one_cell(ep=0.0):
    return RpnTargets(ep=np.array([[[ep]]]), exy=np.full((1, 1, 1, 2), 0.5), el=np.zeros((1, 1, 1)),
                      eo=np.zeros((1, 1, 1, 2)), so=np.zeros((1, 1, 1, 2)))


def second(jp, jxy, jo, st, socc):
    return SecondStageOutput(*(Tensor(np.asarray(a, float)) for a in (jp, jxy, jo, st, socc)))


def targets(jp, st, socc, i_slot, jxy=None, jo=None):
    r = len(jp)
    return SdnScnTargets(jp=np.asarray(jp, float), jxy=np.full((r, 2), 0.5) if jxy is None else np.asarray(jxy),
                         jo=np.zeros((r, 2)) if jo is None else np.asarray(jo), st=np.asarray(st, float),
                         socc=np.asarray(socc, float), i_slot=np.asarray(i_slot, float))


def test_presets_match_published_tables():
    snu, ps = PRESETS["snu"], PRESETS["ps20"]
    w = snu.weights
    assert (w.w_ep, w.w_exy, w.w_el, w.w_eo, w.w_so) == (400, 400, 1000, 1000, 400)
    assert (w.w_jp, w.w_jxy, w.w_jo, w.w_st, w.w_socc) == (1500, 2000, 6000, 0.5, 100)
    assert w.lambda_e == 0.03 and w.lambda_st == (8.33, 1.23, 14.92) and w.lambda_vac == 0.74
    assert snu.l_max == 400 and snu.rois_per_image == 12
    p = ps.weights
    assert (p.w_ep, p.w_exy, p.w_el, p.w_eo, p.w_so) == (500, 400, 1000, 1500, 500)
    assert (p.w_jp, p.w_jxy, p.w_jo) == (1000, 3000, 4000)
    assert p.lambda_e == 0.01 and p.lambda_st == (1.76, 2.86, 31.65) and p.lambda_vac == 0.47
    assert ps.l_max == 291 and ps.rois_per_image == 8


def test_loss_ep_hand_value():
    pred = np.zeros((1, 1, 1, 8))
    pred[..., 0] = 0.5
    pred[..., 1:3] = 0.5
    rep = loss_first(Tensor(pred), one_cell(0.0), PRESETS["snu"].weights)
    assert rep.terms["ep"].item() == 0.03 * 0.25
    assert rep.total.item() == 400 * 0.0075


def test_loss_first_weighted_sum_and_perfect_prediction():
    rng = np.random.default_rng(0)
    t = suites._rpn_targets(rng, (2, 3, 3))
    w = PRESETS["snu"].weights
    rep = loss_first(Tensor(t.as_channels()), t, w)
    assert all(v.item() == 0 for v in rep.terms.values())
    pred = rng.random((2, 3, 3, 8))
    rep = loss_first(Tensor(pred), t, w)
    v = rep.values()
    expect = 400 * v["ep"] + 400 * v["exy"] + 1000 * v["el"] + 1000 * v["eo"] + 400 * v["so"]
    assert v["total"] == pytest.approx(expect, rel=1e-12)
    with pytest.raises(LossError):
        loss_first(Tensor(pred[:1]), t, w)


def test_loss_jp_and_mask():
    t = targets([1.0, 0.0], [[1, 0, 0]], [0.0], [0.0])
    rep = loss_sdn(second([0.6, 0.0], [[0.9, 0.1], [0.3, 0.7]], [[1, 0], [0.2, -0.4]], None, None), t, LossWeights())
    assert rep.terms["jp"].item() == pytest.approx(0.16)
    # the I_j = 0 row contributes nothing to location and orientation
    assert rep.terms["jxy"].item() == pytest.approx(0.4 ** 2 * 2)
    assert rep.terms["jo"].item() == pytest.approx(1.0)
    with pytest.raises(LossError):
        loss_sdn(second([0.6], [[0.5, 0.5]], [[0, 1]], None, None), t, LossWeights())


def test_loss_st_and_socc_hand_values():
    w = PRESETS["snu"].weights
    t = targets([1, 1], [[0, 0, 1]], [0.0], [1.0])
    rep = loss_scn(second([1, 1], np.zeros((2, 2)), np.zeros((2, 2)), [[0.1, 0.1, 0.8]], [0.2]), t, w)
    assert rep.terms["st"].item() == pytest.approx(-14.92 * math.log(0.8), rel=1e-12)
    assert rep.terms["st"].item() == pytest.approx(3.3293, abs=1e-4)
    assert rep.terms["socc"].item() == pytest.approx(0.74 * 0.04, rel=1e-12)
    empty = targets([1, 1], [[0, 0, 1]], [0.0], [0.0])
    rep = loss_scn(second([1, 1], np.zeros((2, 2)), np.zeros((2, 2)), [[0.1, 0.1, 0.8]], [0.2]), empty, w)
    assert rep.terms["st"].item() == 0 and rep.terms["socc"].item() == 0


def test_loss_st_zero_probability_is_clamped():
    t = targets([1, 1], [[1, 0, 0]], [0.0], [1.0])
    rep = loss_scn(second([1, 1], np.zeros((2, 2)), np.zeros((2, 2)), [[0.0, 0.5, 0.5]], [0.0]), t, LossWeights())
    assert math.isfinite(rep.terms["st"].item())


def test_loss_total_and_weight_scaling():
    rng = np.random.default_rng(3)
    t = suites._second_targets(rng, 3)
    arrays = [rng.standard_normal(s) for s in ((6,), (6, 2), (6, 2), (3, 3), (3,))]
    base = LossWeights()
    sdn = loss_sdn(suites._second_pred(*map(Tensor, arrays)), t, base)
    scn = loss_scn(suites._second_pred(*map(Tensor, arrays)), t, base)
    _, ls = loss_total(None, sdn, scn)
    assert ls.item() == sdn.total.item() + scn.total.item()
    doubled = loss_sdn(suites._second_pred(*map(Tensor, arrays)), t, LossWeights(w_jo=2 * base.w_jo))
    diff = doubled.total.item() - sdn.total.item()
    assert diff == pytest.approx(base.w_jo * sdn.terms["jo"].item(), rel=1e-12)
    assert loss_total(None, None, None) == (None, None)


def test_negative_weight_rejected():
    with pytest.raises(LossError):
        LossWeights(w_ep=-1)


def test_corpus_lambdas_ratio_definitions():
    down = UnitVec2(0, 1)
    mk = lambda x, t, o: ParkingSlot(Point2(x, 40), Point2(x + 60, 40), down, down, t, o)
    labels = [[mk(10, SlotType.PERPENDICULAR, Occupancy.VACANT), mk(100, SlotType.PARALLEL, Occupancy.OCCUPIED)],
              [mk(10, SlotType.PERPENDICULAR, Occupancy.VACANT)]]
    lam = corpus_lambdas(labels, GridSpec.for_image(192, 192, 160))
    assert lam["lambda_e"] == 3 / (2 * 36 - 3)
    assert lam["lambda_st"] == (3 / 2, 3 / 1, 1.0)
    assert lam["lambda_vac"] == 1 / 2


def test_gradient_suite_small():
    worst = suites.loss_gradient_errors(range(3))
    assert max(worst.values()) < 1e-4
