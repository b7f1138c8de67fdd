"""Procedural top-view parking scenes with analytically exact labels.

A scene is one row of adjacent slots along a guiding line, placed at a
random position and rotation. Labels come from the layout, never from
pixels. Each (seed, index) pair always renders the same bytes.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    SLOT_TYPES,
    Occupancy,
    ParkingSlot,
    Point2,
    SlotType,
    UnitVec2,
)

LABEL_VERSION = 1
BACKGROUNDS = ("asphalt", "brick", "reflective", "night")
CELL = 32
VISIBLE_SEP = 40.0


class SynthError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    image_w: int = 192
    image_h: int = 192
    slot_type_mix: tuple[float, float, float] = (0.5, 0.3, 0.2)
    occupied_prob: float = 0.35
    entrance_length_range: tuple[float, float] = (52.0, 72.0)
    parallel_length_range: tuple[float, float] = (96.0, 128.0)
    slant_angle_range: tuple[float, float] = (40.0, 65.0)
    line_width_range: tuple[float, float] = (3.0, 6.0)
    noise_level: float = 0.3
    background_styles: tuple[str, ...] = BACKGROUNDS
    seed: int = 1
    max_slots: int = 4
    margin: float = 10.0
    nms_dist: float = 16.0

    def __post_init__(self):
        for name in ("slot_type_mix", "entrance_length_range", "parallel_length_range",
                     "slant_angle_range", "line_width_range", "background_styles"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        mix = self.slot_type_mix
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise SynthError(f"slot_type_mix must be 3 probabilities summing to 1, got {mix}")
        if not 0.0 <= self.occupied_prob <= 1.0:
            raise SynthError("occupied_prob must lie in [0, 1]")
        if not 0.0 <= self.noise_level <= 1.0:
            raise SynthError("noise_level must lie in [0, 1]")
        if self.image_w % CELL or self.image_h % CELL:
            raise SynthError("image size must be divisible by 32")
        for name in ("entrance_length_range", "parallel_length_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise SynthError(f"{name} must be an increasing positive interval")
            # keeps neighbouring entrance centres >= 1.5 cells apart and NMS-separable
            if lo < max(1.5 * CELL, 2 * self.nms_dist + 1e-9):
                raise SynthError(f"{name} lower bound {lo} is below the one-entrance-per-cell spacing")
        lo, hi = self.slant_angle_range
        if not 0 < lo <= hi < 90:
            raise SynthError("slant_angle_range must lie inside (0, 90) degrees")
        if not 0 < self.line_width_range[0] <= self.line_width_range[1]:
            raise SynthError("line_width_range must be positive")
        unknown = set(self.background_styles) - set(BACKGROUNDS)
        if unknown or not self.background_styles:
            raise SynthError(f"unknown background styles {sorted(unknown)}")
        if self.max_slots < 1:
            raise SynthError("max_slots must be at least 1")
        longest_needed = min(self.entrance_length_range[0], self.parallel_length_range[0])
        if longest_needed + 2 * self.margin > min(self.image_w, self.image_h) * math.sqrt(2):
            raise SynthError("image cannot fit a single slot entrance")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise SynthError(f"unknown scene config keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class SceneSample:
    image: np.ndarray  # (H, W, 3) uint8
    slots: list[ParkingSlot] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, SceneSample):
            return NotImplemented
        return (self.image.shape == other.image.shape and np.array_equal(self.image, other.image)
                and self.slots == other.slots)


@dataclass
class _Layout:
    slot_type: SlotType
    junctions: np.ndarray   # (n + 1, 2)
    eo: np.ndarray          # (2,)
    sep: np.ndarray         # (2,)
    depth: float
    occupied: list[bool]
    guiding: bool


def _rng(cfg: SceneConfig, index: int) -> np.random.Generator:
    return np.random.default_rng([int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def sample_layout(cfg: SceneConfig, rng: np.random.Generator) -> _Layout:
    stype = SLOT_TYPES[int(rng.choice(3, p=cfg.slot_type_mix))]
    theta = rng.uniform(0.0, 2.0 * math.pi)
    eo = np.array([math.cos(theta), math.sin(theta)])
    if stype == SlotType.PARALLEL:
        length = rng.uniform(*cfg.parallel_length_range)
        phi = 90.0
        depth = length * rng.uniform(0.42, 0.5)
    elif stype == SlotType.PERPENDICULAR:
        length = rng.uniform(*cfg.entrance_length_range)
        phi = 90.0
        depth = length * rng.uniform(1.8, 2.2)
    else:
        length = rng.uniform(*cfg.entrance_length_range)
        a = rng.uniform(*cfg.slant_angle_range)
        phi = a if rng.random() < 0.5 else 180.0 - a
        depth = length * rng.uniform(1.6, 2.0)
    ang = theta + math.radians(phi)
    sep = np.array([math.cos(ang), math.sin(ang)])

    w, h, m = cfg.image_w, cfg.image_h, cfg.margin
    n_fit = int((min(w, h) - 2 * m) // length)
    n_max = max(1, min(cfg.max_slots, n_fit if n_fit >= 1 else 1))
    n = int(rng.integers(1, n_max + 1))
    while n >= 1:
        for _ in range(200):
            c = np.array([rng.uniform(m, w - m), rng.uniform(m, h - m)])
            offs = (np.arange(n + 1) - n / 2.0) * length
            junctions = c[None, :] + offs[:, None] * eo[None, :]
            # junctions and a visible stretch of every separating line stay in frame
            tips = junctions + min(depth, VISIBLE_SEP) * sep[None, :]
            pts = np.concatenate([junctions, tips])
            if (pts[:, 0].min() >= m and pts[:, 0].max() <= w - m
                    and pts[:, 1].min() >= m and pts[:, 1].max() <= h - m):
                occupied = [bool(rng.random() < cfg.occupied_prob) for _ in range(n)]
                return _Layout(stype, junctions, eo, sep, float(depth), occupied, bool(rng.random() < 0.75))
        n -= 1
    raise SynthError("configuration cannot fit a single slot in the image")


def layout_slots(layout: _Layout) -> list[ParkingSlot]:
    sep = UnitVec2(float(layout.sep[0]), float(layout.sep[1]))
    out = []
    for k in range(len(layout.junctions) - 1):
        a, b = layout.junctions[k], layout.junctions[k + 1]
        out.append(ParkingSlot(
            j1=Point2(float(a[0]), float(a[1])),
            j2=Point2(float(b[0]), float(b[1])),
            sep1=sep,
            sep2=sep,
            slot_type=layout.slot_type,
            occupancy=Occupancy.OCCUPIED if layout.occupied[k] else Occupancy.VACANT,
        ))
    return out


# ------------------------------------------------------------------ rendering

def _background(style: str, rng: np.random.Generator, h: int, w: int, noise: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if style == "night":
        base = rng.uniform(20, 45)
    elif style == "reflective":
        base = rng.uniform(80, 120)
    else:
        base = rng.uniform(70, 125)
    img = np.full((h, w, 3), base) + rng.uniform(-8, 8, size=3)
    if style == "brick":
        bw, bh = rng.uniform(14, 24), rng.uniform(7, 12)
        row = np.floor(yy / bh)
        col = np.floor((xx + (row % 2) * bw / 2) / bw)
        tint = np.sin(row * 12.9898 + col * 78.233) * 43758.5453
        tint = (tint - np.floor(tint) - 0.5) * 24
        img += tint[..., None]
        mortar = (np.mod(yy, bh) < 1.2) | (np.mod(xx + (row % 2) * bw / 2, bw) < 1.2)
        img[mortar] -= 18
    elif style == "reflective":
        for _ in range(int(rng.integers(1, 4))):
            cx, cy = rng.uniform(0, w), rng.uniform(0, h)
            r = rng.uniform(20, 70)
            img += (rng.uniform(30, 70) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r)))[..., None]
    # texture and low-frequency illumination
    img += rng.normal(0.0, 6.0 + 10.0 * noise, size=(h, w, 1))
    gx, gy = rng.uniform(-1, 1, size=2) * 40 * noise
    img += (gx * (xx / w - 0.5) + gy * (yy / h - 0.5))[..., None]
    return img


def _segment_distance(xx, yy, a, b):
    ab = b - a
    t = ((xx - a[0]) * ab[0] + (yy - a[1]) * ab[1]) / max(float(ab @ ab), 1e-12)
    t = np.clip(t, 0.0, 1.0)
    px = a[0] + t * ab[0]
    py = a[1] + t * ab[1]
    return np.hypot(xx - px, yy - py)


def _paint(img, alpha, color):
    img *= (1.0 - alpha[..., None])
    img += alpha[..., None] * np.asarray(color, dtype=np.float64)


def _convex_mask(xx, yy, poly):
    inside = np.ones(xx.shape, dtype=bool)
    n = len(poly)
    sign = None
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        c = (b[0] - a[0]) * (yy - a[1]) - (b[1] - a[1]) * (xx - a[0])
        if sign is None:
            s = (b[0] - a[0]) * (poly[(i + 2) % n][1] - a[1]) - (b[1] - a[1]) * (poly[(i + 2) % n][0] - a[0])
            sign = 1.0 if s >= 0 else -1.0
        inside &= c * sign >= 0
    return inside


def render_layout(layout: _Layout, cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = cfg.image_h, cfg.image_w
    style = cfg.background_styles[int(rng.integers(len(cfg.background_styles)))]
    noise = cfg.noise_level
    img = _background(style, rng, h, w, noise)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5

    eo, sep, depth = layout.eo, layout.sep, layout.depth
    js = layout.junctions
    n = len(js) - 1

    # vehicles first so markings stay visible on top
    spacing = float(np.linalg.norm(js[1] - js[0]))
    normal = np.array([-sep[1], sep[0]])
    for k in range(n):
        if not layout.occupied[k]:
            continue
        mid = 0.5 * (js[k] + js[k + 1])
        sin_phi = abs(eo[0] * sep[1] - eo[1] * sep[0])
        width = 0.72 * spacing * sin_phi
        near, far = 0.12 * depth, 0.95 * depth
        if layout.slot_type == SlotType.PARALLEL:
            width, near, far = 0.75 * depth, 0.1 * depth, 0.85 * depth
            normal_dir = eo
            half = 0.4 * spacing
            c0 = mid + sep * (0.5 * (near + far))
            quad = [c0 - normal_dir * half - sep * (far - near) / 2, c0 + normal_dir * half - sep * (far - near) / 2,
                    c0 + normal_dir * half + sep * (far - near) / 2, c0 - normal_dir * half + sep * (far - near) / 2]
        else:
            quad = [mid + sep * near - normal * width / 2, mid + sep * near + normal * width / 2,
                    mid + sep * far + normal * width / 2, mid + sep * far - normal * width / 2]
        mask = _convex_mask(xx, yy, quad)
        color = rng.uniform(10, 60, size=3) if rng.random() < 0.6 else rng.uniform(120, 230, size=3)
        img[mask] = color
        # darker cabin block
        cq = [quad[0] * 0.7 + quad[2] * 0.3, quad[1] * 0.7 + quad[3] * 0.3,
              quad[2] * 0.7 + quad[0] * 0.3, quad[3] * 0.7 + quad[1] * 0.3]
        img[_convex_mask(xx, yy, cq)] *= 0.6

    lw = rng.uniform(*cfg.line_width_range)
    if rng.random() < 0.8:
        color = rng.uniform(200, 250) + rng.uniform(-5, 5, size=3)
    else:
        color = np.array([rng.uniform(200, 240), rng.uniform(170, 210), rng.uniform(30, 80)])
    if style == "night":
        color = color * rng.uniform(0.55, 0.8)
    strength = 1.0 - 0.35 * noise * rng.random()

    alpha = np.zeros((h, w))
    if layout.guiding:
        diag = math.hypot(w, h)
        a, b = js[0] - eo * 2 * diag, js[-1] + eo * 2 * diag
        alpha = np.maximum(alpha, np.clip(lw / 2 + 0.5 - _segment_distance(xx, yy, a, b), 0, 1))
    for j in js:
        alpha = np.maximum(alpha, np.clip(lw / 2 + 0.5 - _segment_distance(xx, yy, j, j + sep * depth), 0, 1))
    _paint(img, alpha * strength, color)

    # sensor noise and occasional blotches
    img += rng.normal(0.0, 18.0 * noise, size=img.shape)
    for _ in range(int(rng.poisson(2 * noise))):
        cx, cy, r = rng.uniform(0, w), rng.uniform(0, h), rng.uniform(6, 20)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))
        img *= (1.0 - 0.5 * blob)[..., None]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_scene(cfg: SceneConfig, index: int) -> SceneSample:
    rng = _rng(cfg, index)
    layout = sample_layout(cfg, rng)
    image = render_layout(layout, cfg, rng)
    return SceneSample(image=image, slots=layout_slots(layout))


# ------------------------------------------------------------------ file I/O

def write_ppm(path, image: np.ndarray) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"expected (H, W, 3) image, got {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def _ppm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError(f"pixmap header truncated at byte {start}")
    return buf[start:pos], pos


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic, pos = _ppm_token(buf, 0)
    if magic != b"P6":
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected b'P6'")
    vals = []
    for what in ("width", "height", "max value"):
        start = pos
        tok, pos = _ppm_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"{path}: invalid {what} {tok!r} near byte {start}")
        vals.append(int(tok))
    w, h, maxval = vals
    if maxval != 255:
        raise FormatError(f"{path}: max value {maxval} at byte {pos} unsupported, expected 255")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after header at byte {pos}")
    pos += 1
    expected = w * h * 3
    actual = len(buf) - pos
    if actual != expected:
        raise FormatError(f"{path}: pixel data at byte {pos} has {actual} bytes, expected {expected}")
    return np.frombuffer(buf, dtype=np.uint8, count=expected, offset=pos).reshape(h, w, 3).copy()


def slot_to_json(s: ParkingSlot, with_score: bool = False) -> dict:
    d = {
        "j1": [s.j1.x, s.j1.y],
        "j2": [s.j2.x, s.j2.y],
        "sep1": [s.sep1.cx, s.sep1.cy],
        "sep2": [s.sep2.cx, s.sep2.cy],
        "type": s.slot_type.value,
        "occupancy": s.occupancy.value,
    }
    if with_score:
        d["score"] = s.score
    return d


def slot_from_json(d: dict) -> ParkingSlot:
    try:
        return ParkingSlot(
            j1=Point2(float(d["j1"][0]), float(d["j1"][1])),
            j2=Point2(float(d["j2"][0]), float(d["j2"][1])),
            sep1=UnitVec2(float(d["sep1"][0]), float(d["sep1"][1])),
            sep2=UnitVec2(float(d["sep2"][0]), float(d["sep2"][1])),
            slot_type=SlotType(d["type"]),
            occupancy=Occupancy(d["occupancy"]),
            score=float(d.get("score", 1.0)),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed slot record {d!r}: {exc}") from exc


def labels_to_json(slots: list[ParkingSlot], w: int, h: int, with_score: bool = False) -> dict:
    return {"version": LABEL_VERSION, "image": {"w": int(w), "h": int(h)},
            "slots": [slot_to_json(s, with_score) for s in slots]}


def parse_labels(text: str, source="<labels>") -> tuple[list[ParkingSlot], int, int]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise FormatError(f"{source}: missing schema version")
    if doc["version"] != LABEL_VERSION:
        raise FormatError(f"{source}: unsupported label schema version {doc['version']!r} "
                          f"(this reader understands version {LABEL_VERSION})")
    try:
        w, h = int(doc["image"]["w"]), int(doc["image"]["h"])
        slots = [slot_from_json(s) for s in doc["slots"]]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{source}: missing field {exc}") from exc
    return slots, w, h


def write_labels(path, slots, w, h, with_score=False) -> None:
    Path(path).write_text(json.dumps(labels_to_json(slots, w, h, with_score), indent=1))


def read_labels(path) -> tuple[list[ParkingSlot], int, int]:
    return parse_labels(Path(path).read_text(), source=str(path))


def write_sample(image_path, label_path, s: SceneSample) -> None:
    write_ppm(image_path, s.image)
    h, w, _ = s.image.shape
    write_labels(label_path, s.slots, w, h)


def read_sample(image_path, label_path) -> SceneSample:
    image = read_ppm(image_path)
    slots, w, h = read_labels(label_path)
    if (h, w) != image.shape[:2]:
        raise FormatError(f"{label_path}: label image size {w}x{h} != pixmap {image.shape[1]}x{image.shape[0]}")
    return SceneSample(image=image, slots=slots)


# ------------------------------------------------------------------ corpora

def sample_paths(root, index: int) -> tuple[Path, Path]:
    root = Path(root)
    return root / "images" / f"{index:06d}.ppm", root / "labels" / f"{index:06d}.json"


def _write_one(args):
    cfg, root, i = args
    img_p, lab_p = sample_paths(root, i)
    write_sample(img_p, lab_p, generate_scene(cfg, i))
    return i


def default_workers() -> int:
    env = os.environ.get("SLOT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def write_corpus(cfg: SceneConfig, count: int, root, workers: int | None = None) -> Path:
    """Render ``count`` scenes under ``root`` with a manifest."""
    if count <= 0:
        raise SynthError("empty corpus requested")
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    workers = default_workers() if workers is None else workers
    jobs = [(cfg, root, i) for i in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            list(ex.map(_write_one, jobs, chunksize=8))
    else:
        for j in jobs:
            _write_one(j)
    manifest = {"count": count, "seed": cfg.seed, "config": cfg.to_dict()}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return root


def read_manifest(root) -> dict:
    p = Path(root) / "manifest.json"
    try:
        return json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{root}: no manifest.json") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
