"""Training objectives for both stages, built on the differentiation tape.

All terms are plain sums over cells or ROIs (and over images in a batch).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .codec import GridSpec, RpnTargets, SdnScnTargets
from .diffnet.tensor import Tensor, log, square, tsum
from .geometry import DEFAULT_K1, DEFAULT_K2, Occupancy, ParkingSlot, entrance_from_slot

LOG_EPS = 1e-12


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    w_ep: float = 400.0
    w_exy: float = 400.0
    w_el: float = 1000.0
    w_eo: float = 1000.0
    w_so: float = 400.0
    lambda_e: float = 0.03
    w_jp: float = 1500.0
    w_jxy: float = 2000.0
    w_jo: float = 6000.0
    w_st: float = 0.5
    w_socc: float = 100.0
    lambda_st: tuple[float, float, float] = (8.33, 1.23, 14.92)
    lambda_vac: float = 0.74

    def __post_init__(self):
        object.__setattr__(self, "lambda_st", tuple(float(v) for v in self.lambda_st))
        if len(self.lambda_st) != 3:
            raise LossError("lambda_st needs one entry per slot type")
        for f in fields(self):
            vals = getattr(self, f.name)
            for v in (vals if isinstance(vals, tuple) else (vals,)):
                if not v >= 0:
                    raise LossError(f"{f.name} must be non-negative, got {v}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda_st"] = list(self.lambda_st)
        return d


@dataclass(frozen=True)
class LossPreset:
    weights: LossWeights
    l_max: float
    rois_per_image: int
    auto_lambda: bool = False
    k1: float = DEFAULT_K1  # ROI displacements, scaled with the slot size in pixels
    k2: float = DEFAULT_K2


PRESETS = {
    "snu": LossPreset(LossWeights(), l_max=400.0, rois_per_image=12),
    "ps20": LossPreset(
        LossWeights(w_ep=500, w_exy=400, w_el=1000, w_eo=1500, w_so=500, lambda_e=0.01,
                    w_jp=1000, w_jxy=3000, w_jo=4000, w_st=0.5, w_socc=100,
                    lambda_st=(1.76, 2.86, 31.65), lambda_vac=0.47),
        l_max=291.0, rois_per_image=8),
    # SNU weights; imbalance factors are re-derived from the training corpus. Desk
    # slots are ~0.6x the size the defaults assume, and k1/k2 follow.
    "desk": LossPreset(LossWeights(), l_max=160.0, rois_per_image=48, auto_lambda=True, k1=30.0, k2=19.0),
}


@dataclass
class LossReport:
    """Named loss terms (tape tensors) and the stage total they add up to."""

    terms: dict[str, Tensor] = field(default_factory=dict)
    total: Tensor | None = None

    def values(self) -> dict[str, float]:
        out = {k: float(v.data) for k, v in self.terms.items()}
        if self.total is not None:
            out["total"] = float(self.total.data)
        return out


def _weighted(terms: dict[str, Tensor], weights: dict[str, float]) -> Tensor:
    total = None
    for name, t in terms.items():
        part = t * weights[name]
        total = part if total is None else total + part
    return total


def loss_first(pred: Tensor, targets: RpnTargets, w: LossWeights) -> LossReport:
    """Entrance-proposal loss over every grid cell.

    ``pred`` holds activated outputs with channels
    ``[ep, ex, ey, eox, eoy, el, sox, soy]`` (any leading batch dims).
    """
    tgt = targets.as_channels()
    if pred.shape != tgt.shape:
        raise LossError(f"prediction shape {pred.shape} does not match targets {tgt.shape}")
    dt = pred.dtype
    ie = np.asarray(targets.ep, dtype=dt)
    resid = square(pred - tgt.astype(dt))

    def masked(ch, cell_weight):
        m = np.zeros(tgt.shape, dtype=dt)
        m[..., ch] = cell_weight[..., None]
        return tsum(resid * m)

    # ex, ey channels compare (pred - 0.5) with offset/cell, and the stored
    # target is offset/cell + 0.5, so the shift cancels in the residual.
    terms = {
        "ep": masked([0], ie + w.lambda_e * (1.0 - ie)),
        "exy": masked([1, 2], ie),
        "el": masked([5], ie),
        "eo": masked([3, 4], ie),
        "so": masked([6, 7], ie),
    }
    total = _weighted(terms, {"ep": w.w_ep, "exy": w.w_exy, "el": w.w_el, "eo": w.w_eo, "so": w.w_so})
    return LossReport(terms, total)


def loss_sdn(pred, targets: SdnScnTargets, w: LossWeights) -> LossReport:
    """Junction presence, location and separating-line orientation losses.

    ``pred`` exposes tensors ``jp`` (R,), ``jxy`` (R, 2) and ``jo`` (R, 2).
    """
    if pred.jp.shape[0] != targets.R:
        raise LossError(f"R mismatch: prediction {pred.jp.shape[0]} vs targets {targets.R}")
    dt = pred.jp.dtype
    ij = np.asarray(targets.jp, dtype=dt)[:, None]
    io = np.asarray(targets.ori_mask, dtype=dt)[:, None]
    terms = {
        "jp": tsum(square(pred.jp - targets.jp.astype(dt))),
        "jxy": tsum(square(pred.jxy - targets.jxy.astype(dt)) * ij),
        "jo": tsum(square(pred.jo - targets.jo.astype(dt)) * io),
    }
    total = _weighted(terms, {"jp": w.w_jp, "jxy": w.w_jxy, "jo": w.w_jo})
    return LossReport(terms, total)


def loss_scn(pred, targets: SdnScnTargets, w: LossWeights) -> LossReport:
    """Class-weighted type cross-entropy and imbalance-weighted occupancy error.

    ``pred`` exposes ``st`` (R/2, 3) softmax probabilities and ``socc`` (R/2,).
    """
    if pred.st.shape[0] != targets.R // 2 or pred.st.shape[0] != targets.st.shape[0]:
        raise LossError(f"classification rows mismatch: {pred.st.shape[0]} vs {targets.st.shape[0]}")
    dt = pred.st.dtype
    coef = (np.asarray(w.lambda_st, dtype=dt)[None, :] * targets.st * targets.i_slot[:, None]).astype(dt)
    occ_w = (targets.i_occ + w.lambda_vac * targets.i_vac).astype(dt)
    terms = {
        "st": tsum(log(pred.st, LOG_EPS) * (-coef)),
        "socc": tsum(square(pred.socc - targets.socc.astype(dt)) * occ_w),
    }
    total = _weighted(terms, {"st": w.w_st, "socc": w.w_socc})
    return LossReport(terms, total)


def loss_total(first: LossReport | None, sdn: LossReport | None, scn: LossReport | None):
    """Return ``(loss_first, loss_second)``; missing stages contribute nothing."""
    lf = first.total if first is not None else None
    parts = [r.total for r in (sdn, scn) if r is not None]
    ls = None
    for p in parts:
        ls = p if ls is None else ls + p
    return lf, ls


# ------------------------------------------------------- corpus statistics

def corpus_lambdas(label_sets: list[list[ParkingSlot]], grid: GridSpec) -> dict:
    """Imbalance factors from label counts.

    lambda_e = positive cells / negative cells, lambda_st[c] = slots / slots
    of type c, lambda_vac = occupied / vacant. Absent classes get 1.0.
    """
    n_pos = 0
    n_cells = 0
    type_counts = np.zeros(3, dtype=np.int64)
    n_occ = n_vac = 0
    for slots in label_sets:
        cells = {grid.cell_of(entrance_from_slot(s).center.x, entrance_from_slot(s).center.y) for s in slots}
        n_pos += len(cells)
        n_cells += grid.h * grid.w
        for s in slots:
            type_counts[s.slot_type.index] += 1
            if s.occupancy == Occupancy.OCCUPIED:
                n_occ += 1
            else:
                n_vac += 1
    n_neg = n_cells - n_pos
    total = int(type_counts.sum())
    return {
        "lambda_e": n_pos / n_neg if n_neg else 1.0,
        "lambda_st": tuple(total / c if c else 1.0 for c in type_counts.tolist()),
        "lambda_vac": n_occ / n_vac if (n_vac and n_occ) else 1.0,
    }


def weights_with_corpus(w: LossWeights, label_sets, grid: GridSpec) -> LossWeights:
    return replace(w, **corpus_lambdas(label_sets, grid))

