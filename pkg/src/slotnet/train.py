"""Adam optimisation with the alternating two-stage schedule."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .codec import GridSpec, RoiSpec, RpnTargets, SdnScnTargets, decode_rpn, encode_rpn, encode_sdn_scn
from .diffnet import checkpoint
from .diffnet.model import STAGE1_PREFIXES, STAGE2_PREFIXES, BackboneConfig, ModelConfig, SlotDetectorNet
from .evalx import LOOSE, TIGHT, evaluate
from .geometry import (
    ParkingSlot,
    Point2,
    SlotEntrance,
    UnitVec2,
    designate_rois,
    entrance_from_slot,
    nms_entrances,
)
from .losses import PRESETS, LossWeights, loss_first, loss_scn, loss_sdn, weights_with_corpus
from .pipeline import DetectorSettings, detect, preprocess
from .synth import FormatError, read_manifest, read_sample, sample_paths

log = logging.getLogger(__name__)


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    batch_size: int = 32
    alternate_epochs: int = 60
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 1
    loss_preset: str = "snu"
    holdout: int = 100
    jitter_px: float = 4.0
    jitter_deg: float = 3.0
    jitter_len: float = 0.0
    positive_share: float = 0.5
    augment: bool = False  # random flips and quarter turns per image
    live_proposals: int = 0  # top RPN proposals per image added to the stage-two batch
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainError("epochs and batch_size must be positive")
        if not 0 <= self.alternate_epochs <= self.epochs:
            raise TrainError("alternate_epochs must lie in [0, epochs]")
        if self.loss_preset not in PRESETS:
            raise TrainError(f"unknown loss preset {self.loss_preset!r}; choose from {sorted(PRESETS)}")
        if self.holdout < 0:
            raise TrainError("holdout must be non-negative")
        if self.live_proposals < 0:
            raise TrainError("live_proposals must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise TrainError(f"unknown train config keys: {sorted(extra)}")
        return cls(**d)


# published schedule at full scale, and the desk-scale variant used for synthetic runs
TRAIN_PRESETS = {
    "snu": TrainConfig(loss_preset="snu"),
    "ps20": TrainConfig(loss_preset="ps20"),
    "desk": TrainConfig(batch_size=8, lr=1e-3, loss_preset="desk", jitter_px=10.0, jitter_deg=8.0,
                        jitter_len=12.0, positive_share=0.75, augment=True, live_proposals=8),
}


def phase_of(epoch: int, cfg: TrainConfig) -> str:
    """'first', 'second' or 'joint' for a 1-based epoch number."""
    if epoch <= cfg.alternate_epochs:
        return "first" if epoch % 2 == 1 else "second"
    return "joint"


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)
    skipped: int = 0


def adam_step(params: dict, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig) -> bool:
    """Bias-corrected Adam update of ``params[name]`` for every name in ``grads``.

    A step with any non-finite gradient is skipped entirely and counted.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            log.warning("non-finite gradient in %s; step skipped", name)
            return False
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise TrainError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        g = g.astype(p.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        t = state.t.get(name, 0) + 1
        state.t[name] = t
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        mhat = m / (1.0 - cfg.beta1 ** t)
        vhat = v / (1.0 - cfg.beta2 ** t)
        p.data -= (cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)).astype(p.dtype)
    return True


# ---------------------------------------------------------------- corpus

@dataclass
class Corpus:
    images: np.ndarray                # (N, H, W, 3) uint8
    labels: list[list[ParkingSlot]]
    skipped: int = 0

    def __len__(self):
        return len(self.labels)

    def split(self, holdout: int) -> tuple["Corpus", "Corpus"]:
        n = len(self) - holdout
        if n <= 0:
            raise TrainError(f"holdout {holdout} leaves no training samples out of {len(self)}")
        return Corpus(self.images[:n], self.labels[:n]), Corpus(self.images[n:], self.labels[n:])


def load_corpus(root) -> Corpus:
    """Read every sample listed by the manifest; unreadable samples are skipped and counted."""
    count = int(read_manifest(root)["count"])
    images, labels, skipped = [], [], 0
    for i in range(count):
        try:
            s = read_sample(*sample_paths(root, i))
        except (FormatError, OSError) as exc:
            log.warning("skipping sample %d: %s", i, exc)
            skipped += 1
            continue
        images.append(s.image)
        labels.append(s.slots)
    if not images:
        raise TrainError(f"{root}: no readable samples")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise TrainError(f"{root}: mixed image sizes {sorted(shapes)}")
    return Corpus(np.stack(images), labels, skipped)


# ---------------------------------------------------------------- proposals

def _rotate(u: UnitVec2, deg: float) -> UnitVec2:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return UnitVec2.normalized(c * u.cx - s * u.cy, s * u.cx + c * u.cy)


def _rot90_slot(s: ParkingSlot, w: int) -> ParkingSlot:
    # matches np.rot90 on (H, W, C): (x, y) -> (y, W - x)
    def p(q):
        return Point2(q.y, w - q.x)

    def u(v):
        return UnitVec2(v.cy, -v.cx)
    return replace(s, j1=p(s.j1), j2=p(s.j2), sep1=u(s.sep1), sep2=u(s.sep2))


def _flip_slot(s: ParkingSlot, w: int) -> ParkingSlot:
    # a mirror reverses handedness, so the junction order swaps to stay canonical
    def p(q):
        return Point2(w - q.x, q.y)

    def u(v):
        return UnitVec2(-v.cx, v.cy)
    return replace(s, j1=p(s.j2), j2=p(s.j1), sep1=u(s.sep2), sep2=u(s.sep1))


def dihedral(image: np.ndarray, slots: list[ParkingSlot], k: int) -> tuple[np.ndarray, list[ParkingSlot]]:
    """Apply one of the 8 square symmetries to an (H, W, C) image and its labels.

    ``k % 4`` quarter turns counter-clockwise, then a left-right mirror when
    ``k >= 4``. Quarter turns need a square image.
    """
    h, w = image.shape[:2]
    turns, mirror = k % 4, k >= 4
    if turns and h != w:
        raise TrainError("quarter-turn augmentation needs square images")
    for _ in range(turns):
        image = np.rot90(image)
        slots = [_rot90_slot(s, w) for s in slots]
    if mirror:
        image = image[:, ::-1]
        slots = [_flip_slot(s, w) for s in slots]
    return np.ascontiguousarray(image), slots


def training_proposals(gts: list[ParkingSlot], n: int, image_hw: tuple[int, int], rng: np.random.Generator,
                       jitter_px: float, jitter_deg: float, length_range=(48.0, 128.0),
                       jitter_len: float = 0.0, positive_share: float = 0.5) -> list[SlotEntrance]:
    """``n`` proposals for one image: jittered GT entrances first, random ones after.

    GT entrances are visited in random order, cycling until ``positive_share``
    of the slots is used. Random proposals supply junction-free ROIs for the
    possibility output.
    """
    h, w = image_hw
    out = []
    n_pos = min(n, max(len(gts), int(round(positive_share * n)))) if gts else 0
    order = rng.permutation(len(gts))
    for k in range(n_pos):
        e = entrance_from_slot(gts[int(order[k % len(gts)])])
        dx, dy = rng.uniform(-jitter_px, jitter_px, size=2)
        out.append(SlotEntrance(
            center=Point2(e.center.x + dx, e.center.y + dy),
            eo=_rotate(e.eo, rng.uniform(-jitter_deg, jitter_deg)),
            length=max(1.0, e.length + rng.uniform(-jitter_len, jitter_len)),
            so=_rotate(e.so, rng.uniform(-jitter_deg, jitter_deg)),
        ))
    while len(out) < n:
        theta = rng.uniform(0, 2 * math.pi)
        eo = UnitVec2.from_angle(theta)
        out.append(SlotEntrance(
            center=Point2(rng.uniform(0, w), rng.uniform(0, h)),
            eo=eo,
            length=rng.uniform(*length_range),
            so=UnitVec2.from_angle(theta + math.radians(rng.uniform(30, 150))),
        ))
    return out


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: SlotDetectorNet
    metrics: list[dict]
    weights: LossWeights
    adam: AdamState
    settings: DetectorSettings  # ROI geometry used in training; pass it on to detect()


def _stack_rpn(targets: list[RpnTargets]) -> RpnTargets:
    return RpnTargets(*(np.stack([getattr(t, f) for t in targets]) for f in ("ep", "exy", "el", "eo", "so")))


def _mean(vals):
    return float(np.mean(vals)) if vals else 0.0


def train(model: SlotDetectorNet, train_set: Corpus, cfg: TrainConfig, out_dir=None,
          test_set: Corpus | None = None, settings: DetectorSettings | None = None,
          on_epoch=None) -> TrainResult:
    """Run the full schedule.

    Epochs 1..alternate_epochs alternate stage-one (odd) and stage-two
    (even) updates; the backbone moves in both. Later epochs update all
    parameters on the summed loss. One metrics record per epoch is appended
    to ``out_dir/metrics.jsonl`` and the checkpoint is rewritten each epoch.
    """
    preset = PRESETS[cfg.loss_preset]
    n, h, w, _ = train_set.images.shape
    grid = GridSpec.for_image(w, h, preset.l_max)
    spec = RoiSpec()
    weights = preset.weights
    if preset.auto_lambda:
        weights = weights_with_corpus(weights, train_set.labels, grid)
    settings = settings or DetectorSettings(l_max=preset.l_max, k1=preset.k1, k2=preset.k2)
    per_image = preset.rois_per_image // 2

    rpn_targets = [encode_rpn(lbl, grid) for lbl in train_set.labels]
    names1, names2 = model.names(STAGE1_PREFIXES), model.names(STAGE2_PREFIXES)
    adam = AdamState()
    metrics: list[dict] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text("")
    lo = min(min(entrance_from_slot(s).length for s in lbl) for lbl in train_set.labels if lbl) \
        if any(train_set.labels) else 48.0
    hi = max(max(entrance_from_slot(s).length for s in lbl) for lbl in train_set.labels if lbl) \
        if any(train_set.labels) else 128.0

    for epoch in range(1, cfg.epochs + 1):
        phase = phase_of(epoch, cfg)
        active = {"first": names1, "second": names2, "joint": list(model.params)}[phase]
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sums: dict[str, list[float]] = {}
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            rng = np.random.default_rng([cfg.seed, epoch, b])
            if cfg.augment:
                ks = rng.integers(0, 8, len(idx)) if h == w else 4 * rng.integers(0, 2, len(idx))
                pairs = [dihedral(train_set.images[i], train_set.labels[i], int(k)) for i, k in zip(idx, ks)]
                batch_images = np.stack([p[0] for p in pairs])
                batch_labels = [p[1] for p in pairs]
                batch_rpn = [encode_rpn(lbl, grid) for lbl in batch_labels]
            else:
                batch_images = train_set.images[idx]
                batch_labels = [train_set.labels[i] for i in idx]
                batch_rpn = [rpn_targets[i] for i in idx]
            maps = model.backbone_forward(preprocess(batch_images))

            rpn_out = model.rpn_head(maps.low)
            rep1 = loss_first(rpn_out, _stack_rpn(batch_rpn), weights)

            props, owner, tgts = [], [], []
            for k, lbl in enumerate(batch_labels):
                p = training_proposals(lbl, per_image, (h, w), rng,
                                       cfg.jitter_px, cfg.jitter_deg, (lo, hi), cfg.jitter_len, cfg.positive_share)
                if cfg.live_proposals:
                    live = decode_rpn(RpnTargets.from_channels(rpn_out.data[k]), grid, settings.tau_prop)
                    p = p + nms_entrances(live, settings.nms_dist)[:cfg.live_proposals]
                props += p
                owner += [k] * len(p)
                tgts.append(encode_sdn_scn(p, lbl, spec, k1=settings.k1, k2=settings.k2))
            rois = [designate_rois(e, settings.k1, settings.k2) for e in props]
            second = model.second_stage(maps, rois, owner, (h, w))
            t2 = SdnScnTargets.concatenate(tgts)
            rep_sdn = loss_sdn(second, t2, weights)
            rep_scn = loss_scn(second, t2, weights)
            l2 = rep_sdn.total + rep_scn.total

            total = {"first": rep1.total, "second": l2, "joint": rep1.total + l2}[phase]
            model.zero_grad()
            total.backward()
            grads = {name: model.params[name].grad for name in active if model.params[name].grad is not None}
            adam_step(model.params, grads, adam, cfg)

            for key, val in (("loss_first", rep1.total), ("loss_second", l2)):
                sums.setdefault(key, []).append(float(val.data))
            for pref, rep in (("first", rep1), ("sdn", rep_sdn), ("scn", rep_scn)):
                for k, v in rep.terms.items():
                    sums.setdefault(f"{pref}.{k}", []).append(float(v.data))

        record = {
            "epoch": epoch,
            "phase": phase,
            "train": {k: sum(v) / n for k, v in sums.items()},
            "skipped_steps": adam.skipped,
        }
        if test_set is not None and len(test_set) and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            record["eval"] = evaluate_model(model, test_set, settings)
        metrics.append(record)
        if out is not None:
            with open(out / "metrics.jsonl", "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
            checkpoint.save(model, out / "model.ckpt",
                            meta={"epoch": epoch, "train": cfg.to_dict(), "weights": weights.to_dict(),
                                  "detector": asdict(settings)})
        if on_epoch is not None:
            on_epoch(record)
    return TrainResult(model, metrics, weights, adam, settings)


def detect_corpus(model: SlotDetectorNet, corpus: Corpus, settings: DetectorSettings,
                  batch: int = 16, counter: Counter | None = None) -> list[list[ParkingSlot]]:
    dets = []
    for start in range(0, len(corpus), batch):
        dets += detect(model, corpus.images[start:start + batch], settings, counter)
    return dets


def evaluate_model(model: SlotDetectorNet, corpus: Corpus, settings: DetectorSettings) -> dict:
    dets = detect_corpus(model, corpus, settings)
    out = {}
    for c in (LOOSE, TIGHT):
        r = evaluate(dets, corpus.labels, c)
        out[c.label] = {"recall": r.recall, "precision": r.precision, "tp": r.tp, "fp": r.fp, "gt": r.gt}
    return out


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})


# backbone widths per preset; the full-scale presets keep the library default
MODEL_PRESETS = {
    "snu": ModelConfig(),
    "ps20": ModelConfig(),
    "desk": ModelConfig(BackboneConfig(stage_channels=(8, 16, 48, 96, 128)), hidden=64),
}
