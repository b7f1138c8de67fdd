"""Dual-tap convolutional backbone, the three heads, and ROI patch gathering."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..geometry import RoiSet
from . import tensor as T
from .tensor import Tensor

JUNCTION_PATCH = 5
CLASS_PATCH = 3


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (16, 32, 64, 96, 128)
    high_tap: int = 4  # 1-based stage whose pooled output is the stride-16 map

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if len(self.stage_channels) != 5:
            raise ModelError("backbone needs exactly 5 stages (total stride 32)")
        if self.high_tap != 4:
            raise ModelError("high-resolution tap must be stage 4 (stride 16)")

    @property
    def c_high(self) -> int:
        return self.stage_channels[self.high_tap - 1]

    @property
    def c_low(self) -> int:
        return self.stage_channels[-1]


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    hidden: int = 64  # width of the hidden layer in every fully connected set

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"]["stage_channels"] = list(self.backbone.stage_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        bb = dict(d.get("backbone", {}))
        return cls(backbone=BackboneConfig(**bb), hidden=int(d.get("hidden", 64)))


@dataclass
class FeatureMaps:
    high: Tensor  # (N, H/16, W/16, c_high)
    low: Tensor   # (N, H/32, W/32, c_low)


@dataclass
class SecondStageOutput:
    jp: Tensor    # (R,)
    jxy: Tensor   # (R, 2)
    jo: Tensor    # (R, 2)
    st: Tensor    # (R/2, 3)
    socc: Tensor  # (R/2,)


STAGE1_PREFIXES = ("backbone.", "rpn.")
STAGE2_PREFIXES = ("backbone.", "sdn.", "scn.")


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class SlotDetectorNet:
    """Parameter container plus forward functions for both stages.

    Parameters live in ``self.params`` as leaf tensors keyed by dotted name;
    the dict order is the checkpoint order.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        bb = self.config.backbone
        cin = bb.in_channels
        for s, cout in enumerate(bb.stage_channels, start=1):
            self._add(f"backbone.s{s}.w", xavier_uniform(rng, (3, 3, cin, cout), 9 * cin, 9 * cout))
            self._add(f"backbone.s{s}.b", np.zeros(cout))
            cin = cout
        self._add("rpn.w", xavier_uniform(rng, (3, 3, bb.c_low, 8), 9 * bb.c_low, 9 * 8))
        self._add("rpn.b", np.zeros(8))
        n_j = JUNCTION_PATCH * JUNCTION_PATCH * bb.c_high
        n_c = CLASS_PATCH * CLASS_PATCH * bb.c_low
        for name, n_in, n_out in (("sdn.jp", n_j, 1), ("sdn.jxy", n_j, 2), ("sdn.jo", n_j, 2),
                                  ("scn.occ", n_c, 1), ("scn.type", n_c, 3)):
            self._add_mlp(rng, name, n_in, self.config.hidden, n_out)

    def _add(self, name, arr):
        self.params[name] = Tensor(np.asarray(arr, dtype=self.dtype), requires_grad=True)

    def _add_mlp(self, rng, name, n_in, n_hidden, n_out):
        self._add(f"{name}.fc1.w", xavier_uniform(rng, (n_in, n_hidden), n_in, n_hidden))
        self._add(f"{name}.fc1.b", np.zeros(n_hidden))
        self._add(f"{name}.fc2.w", xavier_uniform(rng, (n_hidden, n_out), n_hidden, n_out))
        self._add(f"{name}.fc2.b", np.zeros(n_out))

    def _mlp(self, name, x):
        p = self.params
        h = T.relu(T.matmul(x, p[f"{name}.fc1.w"]) + p[f"{name}.fc1.b"])
        return T.matmul(h, p[f"{name}.fc2.w"]) + p[f"{name}.fc2.b"]

    def names(self, prefixes) -> list[str]:
        return [n for n in self.params if n.startswith(tuple(prefixes))]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "SlotDetectorNet":
        self.dtype = np.dtype(dtype)
        for k, p in self.params.items():
            self.params[k] = Tensor(p.data.astype(self.dtype), requires_grad=True)
        return self

    # -------------------------------------------------------------- forward

    def backbone_forward(self, images) -> FeatureMaps:
        """``images``: (N, H, W, C) with H and W divisible by 32."""
        x = T.as_tensor(images)
        if x.ndim != 4:
            raise ModelError(f"expected NHWC input, got shape {x.shape}")
        n, h, w, c = x.shape
        if h % 32 or w % 32:
            raise ModelError(f"image size {w}x{h} is not divisible by 32")
        if c != self.config.backbone.in_channels:
            raise ModelError(f"expected {self.config.backbone.in_channels} input channels, got {c}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        high = None
        for s in range(1, 6):
            x = T.conv2d(x, self.params[f"backbone.s{s}.w"], self.params[f"backbone.s{s}.b"], stride=1, pad=1)
            x = T.relu(T.maxpool2(x))  # same as pool(relu(x)), on a quarter of the cells
            if s == self.config.backbone.high_tap:
                high = x
        return FeatureMaps(high=high, low=x)

    def rpn_head(self, low: Tensor) -> Tensor:
        """Activated (N, h, w, 8) map ``[ep, ex, ey, eox, eoy, el, sox, soy]``."""
        z = T.conv2d(low, self.params["rpn.w"], self.params["rpn.b"], stride=1, pad=1)
        sig = T.sigmoid(z[..., 0:3])
        return T.concat([sig, T.tanh(z[..., 3:5]), T.sigmoid(z[..., 5:6]), T.tanh(z[..., 6:8])], axis=-1)

    def sdn_head(self, junction_patches: Tensor, orientation_patches: Tensor):
        """Per-ROI junction possibility, relative location and line orientation.

        Both inputs are (R, 5, 5, c_high); the same weights serve every ROI.
        """
        jx = T.reshape(junction_patches, (junction_patches.shape[0], -1))
        ox = T.reshape(orientation_patches, (orientation_patches.shape[0], -1))
        jp = T.sigmoid(self._mlp("sdn.jp", jx))
        jxy = T.sigmoid(self._mlp("sdn.jxy", jx))
        jo = T.tanh(self._mlp("sdn.jo", ox))
        return T.reshape(jp, (-1,)), jxy, jo

    def scn_head(self, cls_patch: Tensor):
        """Occupancy probability (P,) and type distribution (P, 3) from (P, 3, 3, c_low)."""
        x = T.reshape(cls_patch, (cls_patch.shape[0], -1))
        socc = T.sigmoid(self._mlp("scn.occ", x))
        st = T.softmax(self._mlp("scn.type", x), axis=-1)
        return T.reshape(socc, (-1,)), st

    def second_stage(self, maps: FeatureMaps, rois: list[RoiSet], image_index: list[int],
                     image_hw: tuple[int, int]) -> SecondStageOutput:
        jpatch, opatch, cpatch = extract_patches(maps, rois, image_index, image_hw)
        jp, jxy, jo = self.sdn_head(jpatch, opatch)
        socc, st = self.scn_head(cpatch)
        return SecondStageOutput(jp=jp, jxy=jxy, jo=jo, st=st, socc=socc)


def _cells(points: np.ndarray, stride: float) -> tuple[np.ndarray, np.ndarray]:
    rows = np.floor(points[:, 1] / stride).astype(np.intp)
    cols = np.floor(points[:, 0] / stride).astype(np.intp)
    return rows, cols


def extract_patches(maps: FeatureMaps, rois: list[RoiSet], image_index: list[int],
                    image_hw: tuple[int, int]):
    """Gather ROI neighbourhoods from the two feature maps.

    Returns (junction patches, orientation patches, classification patches):
    junction/orientation are (2P, 5, 5, c_high) ordered ``loc1, loc2`` per
    proposal, classification is (P, 3, 3, c_low). Centres are image pixels;
    each is mapped to the map cell that contains it.
    """
    h, w = image_hw
    hs = h / maps.high.shape[1]
    ls = h / maps.low.shape[1]
    if w / maps.high.shape[2] != hs:
        raise ModelError("feature map aspect does not match the image")
    if not len(rois):
        c_high, c_low = maps.high.shape[-1], maps.low.shape[-1]
        z = maps.high.dtype
        return (Tensor(np.zeros((0, 5, 5, c_high), z)), Tensor(np.zeros((0, 5, 5, c_high), z)),
                Tensor(np.zeros((0, 3, 3, c_low), z)))
    idx = np.asarray(image_index, dtype=np.intp)
    loc = np.array([[(r.loc1.x, r.loc1.y), (r.loc2.x, r.loc2.y)] for r in rois]).reshape(-1, 2)
    ori = np.array([[(r.ori1.x, r.ori1.y), (r.ori2.x, r.ori2.y)] for r in rois]).reshape(-1, 2)
    cls = np.array([(r.cls.x, r.cls.y) for r in rois]).reshape(-1, 2)
    idx2 = np.repeat(idx, 2)
    jpatch = T.gather_patches(maps.high, idx2, *_cells(loc, hs), JUNCTION_PATCH)
    opatch = T.gather_patches(maps.high, idx2, *_cells(ori, hs), JUNCTION_PATCH)
    cpatch = T.gather_patches(maps.low, idx, *_cells(cls, ls), CLASS_PATCH)
    return jpatch, opatch, cpatch
