"""End-to-end inference: image batch in, parking slots out."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .codec import GridSpec, RoiSpec, RpnTargets, SdnScnTargets, decode_rpn, decode_sdn_scn
from .diffnet.model import SlotDetectorNet
from .geometry import DEFAULT_K1, DEFAULT_K2, DEFAULT_NMS_DIST, ParkingSlot, designate_rois, nms_entrances


@dataclass(frozen=True)
class DetectorSettings:
    l_max: float = 160.0
    tau_prop: float = 0.5
    tau_j: float = 0.5
    nms_dist: float = DEFAULT_NMS_DIST
    k1: float = DEFAULT_K1
    k2: float = DEFAULT_K2
    dedupe_dist: float = 12.0


def preprocess(images) -> np.ndarray:
    """uint8 (N, H, W, 3) or (H, W, 3) to float32 centred on zero."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return arr.astype(np.float32) / np.float32(255.0) - np.float32(0.5)


def dedupe_slots(slots: list[ParkingSlot], dist: float) -> list[ParkingSlot]:
    """Drop a slot when a higher-scoring one already has both junctions within ``dist``.

    Distinct proposals can refine onto the same pair of junctions.
    """
    kept: list[ParkingSlot] = []
    for s in sorted(slots, key=lambda s: -s.score):
        dup = False
        for k in kept:
            a = max((s.j1 - k.j1).norm(), (s.j2 - k.j2).norm())
            b = max((s.j1 - k.j2).norm(), (s.j2 - k.j1).norm())
            if min(a, b) < dist:
                dup = True
                break
        if not dup:
            kept.append(s)
    return kept


def detect(model: SlotDetectorNet, images, settings: DetectorSettings = DetectorSettings(),
           counter: Counter | None = None) -> list[list[ParkingSlot]]:
    x = preprocess(images)
    n, h, w, _ = x.shape
    grid = GridSpec.for_image(w, h, settings.l_max)
    spec = RoiSpec()
    maps = model.backbone_forward(x)
    rpn = model.rpn_head(maps.low).data
    props, rois, owner = [], [], []
    for i in range(n):
        p = decode_rpn(RpnTargets.from_channels(rpn[i]), grid, settings.tau_prop, counter)
        p = nms_entrances(p, settings.nms_dist)
        props.append(p)
        for e in p:
            rois.append(designate_rois(e, settings.k1, settings.k2))
            owner.append(i)
    out: list[list[ParkingSlot]] = [[] for _ in range(n)]
    if not rois:
        return out
    second = model.second_stage(maps, rois, owner, (h, w))
    pred = SdnScnTargets(jp=second.jp.data, jxy=second.jxy.data, jo=second.jo.data, st=second.st.data,
                         socc=second.socc.data, i_slot=np.zeros(len(rois)))
    start = 0
    for i in range(n):
        k = len(props[i])
        if not k:
            continue
        sl = slice(start, start + k)
        part = SdnScnTargets(jp=pred.jp[2 * start:2 * (start + k)], jxy=pred.jxy[2 * start:2 * (start + k)],
                             jo=pred.jo[2 * start:2 * (start + k)], st=pred.st[sl], socc=pred.socc[sl],
                             i_slot=pred.i_slot[sl])
        slots = decode_sdn_scn(part, rois[sl], spec, settings.tau_j, [e.score for e in props[i]], counter)
        out[i] = dedupe_slots(slots, settings.dedupe_dist) if settings.dedupe_dist > 0 else slots
        start += k
    return out
