"""Command line front end: ``slotnet gen|train|detect|eval``.

Every command accepts ``--config run.json``. The file holds optional
sections ``scene``, ``train``, ``model``, ``detector`` and ``criteria``;
command-line flags override values from the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diffnet import checkpoint
from .diffnet.model import ModelConfig, SlotDetectorNet
from .evalx import LOOSE, TIGHT, MatchCriteria, evaluate, format_table
from .geometry import SlotType, entrance_from_slot
from .losses import PRESETS
from .pipeline import DetectorSettings, detect
from .synth import FormatError, SceneConfig, read_labels, read_ppm, write_corpus, write_labels, write_ppm
from .train import MODEL_PRESETS, TRAIN_PRESETS, TrainConfig, load_corpus, train

log = logging.getLogger("slotnet")

# overlay colours per slot type: perpendicular, parallel, slanted
TYPE_COLORS = {
    SlotType.PERPENDICULAR: (0, 255, 0),
    SlotType.PARALLEL: (255, 0, 0),
    SlotType.SLANTED: (0, 0, 255),
}


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    scene: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    detector: dict = field(default_factory=dict)
    criteria: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise CliError("run config must be a JSON object")
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise CliError(f"unknown run config keys: {sorted(extra)}")
        rc = cls(**d)
        # validate every section up front, before any work starts
        SceneConfig.from_dict(rc.scene)
        TrainConfig.from_dict({**TRAIN_PRESETS["desk"].to_dict(), **rc.train})
        if rc.model:
            ModelConfig.from_dict(rc.model)
        bad = set(rc.detector) - set(DetectorSettings.__dataclass_fields__)
        if bad:
            raise CliError(f"unknown detector keys: {sorted(bad)}")
        if rc.criteria is not None:
            MatchCriteria.parse(rc.criteria)
        return rc

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc


# ---------------------------------------------------------------- gen

def cmd_gen(args, rc: RunConfig) -> int:
    scene = dict(rc.scene)
    if args.seed is not None:
        scene["seed"] = args.seed
    cfg = SceneConfig.from_dict(scene)
    write_corpus(cfg, args.count, args.out)
    print(f"wrote {args.count} scenes to {args.out}")
    return 0


# ---------------------------------------------------------------- train

def cmd_train(args, rc: RunConfig) -> int:
    base = TRAIN_PRESETS[args.preset].to_dict()
    tcfg = {**base, **rc.train}
    for key in ("seed", "epochs", "holdout"):
        if getattr(args, key) is not None:
            tcfg[key] = getattr(args, key)
    # a shortened run keeps alternating for as long as it lasts
    if "alternate_epochs" not in rc.train:
        tcfg["alternate_epochs"] = min(tcfg["alternate_epochs"], tcfg["epochs"])
    cfg = TrainConfig.from_dict(tcfg)
    mcfg = ModelConfig.from_dict(rc.model) if rc.model else MODEL_PRESETS[args.preset]

    corpus = load_corpus(args.corpus)
    if corpus.skipped:
        print(f"skipped {corpus.skipped} unreadable samples")
    train_set, test_set = corpus.split(cfg.holdout) if cfg.holdout else (corpus, None)
    settings = _settings(rc, args, _preset_settings(cfg))
    model = SlotDetectorNet(mcfg, seed=cfg.seed)

    def report(rec):
        ev = rec.get("eval", {}).get("loose")
        tail = f" recall {ev['recall']:.3f} precision {ev['precision']:.3f}" if ev else ""
        print(f"epoch {rec['epoch']:3d} {rec['phase']:<6} loss1 {rec['train']['loss_first']:.2f} "
              f"loss2 {rec['train']['loss_second']:.2f}{tail}", flush=True)

    result = train(model, train_set, cfg, out_dir=args.out, test_set=test_set, settings=settings,
                   on_epoch=None if args.quiet else report)
    last = result.metrics[-1].get("eval")
    if last:
        lo, ti = last["loose"], last["tight"]
        print(f"final loose recall {lo['recall']:.4f} precision {lo['precision']:.4f}; "
              f"tight recall {ti['recall']:.4f} precision {ti['precision']:.4f}")
    return 0


def _preset_settings(cfg: TrainConfig) -> DetectorSettings:
    p = PRESETS[cfg.loss_preset]
    return DetectorSettings(l_max=p.l_max, k1=p.k1, k2=p.k2)


def _settings(rc: RunConfig, args, base: DetectorSettings) -> DetectorSettings:
    s = replace(base, **rc.detector)
    if getattr(args, "tau_prop", None) is not None:
        s = replace(s, tau_prop=args.tau_prop)
    if getattr(args, "tau_j", None) is not None:
        s = replace(s, tau_j=args.tau_j)
    return s


# ---------------------------------------------------------------- detect

def _image_files(spec: str) -> list[Path]:
    p = Path(spec)
    if p.is_dir():
        files = sorted(p.glob("*.ppm"))
        if not files:
            raise CliError(f"{p}: no .ppm images")
        return files
    if not p.exists():
        raise CliError(f"{p}: no such file or directory")
    return [p]


def _draw_line(img: np.ndarray, a, b, color, width: int = 1) -> None:
    h, w, _ = img.shape
    n = int(max(abs(b[0] - a[0]), abs(b[1] - a[1]))) + 1
    for t in np.linspace(0.0, 1.0, n + 1):
        x, y = a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])
        c, r = int(round(x)), int(round(y))
        img[max(r - width, 0):min(r + width + 1, h), max(c - width, 0):min(c + width + 1, w)] = color


def render_overlay(image: np.ndarray, slots, depth: float = 40.0) -> np.ndarray:
    """Entrance and separating lines drawn in the slot type colour."""
    out = image.copy()
    for s in slots:
        col = TYPE_COLORS[s.slot_type]
        j1, j2 = (s.j1.x, s.j1.y), (s.j2.x, s.j2.y)
        _draw_line(out, j1, j2, col)
        for j, sep in ((j1, s.sep1), (j2, s.sep2)):
            _draw_line(out, j, (j[0] + depth * sep.cx, j[1] + depth * sep.cy), col)
        e = entrance_from_slot(s)
        _draw_line(out, (e.center.x, e.center.y), (e.center.x, e.center.y), (255, 255, 255), width=2)
    return out


def cmd_detect(args, rc: RunConfig) -> int:
    model, meta = checkpoint.load(args.model)
    settings = _settings(rc, args, DetectorSettings(**meta.get("detector", {})))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overlay = Path(args.overlay) if args.overlay else None
    if overlay:
        overlay.mkdir(parents=True, exist_ok=True)
    failures = 0
    counter: Counter = Counter()
    for path in _image_files(args.images):
        try:
            img = read_ppm(path)
            h, w, _ = img.shape
            if h % 32 or w % 32:
                raise CliError(f"image size {w}x{h} is not divisible by 32")
        except (CliError, FormatError, OSError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        slots = detect(model, img, settings, counter)[0]
        write_labels(out / f"{path.stem}.json", slots, w, h, with_score=True)
        if overlay:
            write_ppm(overlay / f"{path.stem}.ppm", render_overlay(img, slots))
    if counter:
        print("degenerate decodes: " + ", ".join(f"{k}={v}" for k, v in sorted(counter.items())))
    return 1 if failures else 0


# ---------------------------------------------------------------- eval

def cmd_eval(args, rc: RunConfig) -> int:
    det_dir, lab_dir = Path(args.detections), Path(args.labels)
    if not lab_dir.is_dir():
        raise CliError(f"{lab_dir}: not a directory")
    if not det_dir.is_dir():
        raise CliError(f"{det_dir}: not a directory")
    lab_files = {p.stem: p for p in lab_dir.glob("*.json")}
    det_files = {p.stem: p for p in det_dir.glob("*.json")}
    if not lab_files:
        raise CliError(f"{lab_dir}: no label files")
    # an empty detection directory means nothing was detected
    if det_files:
        missing = sorted(set(lab_files) - set(det_files))
        extra = sorted(set(det_files) - set(lab_files))
        if missing or extra:
            parts = []
            if missing:
                parts.append(f"no detections for {', '.join(missing)}")
            if extra:
                parts.append(f"no labels for {', '.join(extra)}")
            raise CliError("; ".join(parts))
    keys = sorted(lab_files)
    gts = [read_labels(lab_files[k])[0] for k in keys]
    dets = [read_labels(det_files[k])[0] if k in det_files else [] for k in keys]

    criteria = [LOOSE, TIGHT]
    extra_c = args.criteria or rc.criteria
    if extra_c:
        c = MatchCriteria.parse(extra_c)
        if c not in criteria:
            criteria.append(c)
    reports = [evaluate(dets, gts, c) for c in criteria]
    table = format_table(reports)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True))
        (out / "report.txt").write_text(table + "\n")
    return 0


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slotnet", description="Synthetic parking slot detection toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render a synthetic corpus")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--config")

    t = sub.add_parser("train", help="train a detector on a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True, help="directory for model.ckpt and metrics.jsonl")
    t.add_argument("--preset", choices=sorted(TRAIN_PRESETS), default="desk")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--holdout", type=int, help="trailing samples held out for per-epoch evaluation")
    t.add_argument("--tau-prop", type=float)
    t.add_argument("--tau-j", type=float)
    t.add_argument("--config")
    t.add_argument("--quiet", action="store_true")

    d = sub.add_parser("detect", help="run a trained detector on images")
    d.add_argument("--model", required=True)
    d.add_argument("--images", required=True, help="a .ppm file or a directory of them")
    d.add_argument("--out", required=True)
    d.add_argument("--overlay", help="directory for annotated copies of the inputs")
    d.add_argument("--tau-prop", type=float)
    d.add_argument("--tau-j", type=float)
    d.add_argument("--config")

    e = sub.add_parser("eval", help="score detections against labels")
    e.add_argument("--detections", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--criteria", help="extra criteria besides loose and tight: loose, tight or M,N")
    e.add_argument("--out")
    e.add_argument("--config")
    return p


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = RunConfig.load(args.config)
        return COMMANDS[args.command](args, rc)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
