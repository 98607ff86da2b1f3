"""Command-line entry point: gen-data, train, eval, gradcheck, infer.

Every command accepts ``--config FILE`` with ``key = value`` lines ('#' starts
a comment); keys are the long option names with or without dashes. Flags
given on the command line override the file.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 gradcheck failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo
from .checkpoint import load_checkpoint
from .detector import DetectorConfig, IncepText, config_from_params, params_from_arrays
from .evaluate import EvalReport, evaluate
from .gradcheck import CASES, run_gradcheck
from .synth import SceneConfig, image_to_ppm_bytes, load_dataset, read_manifest, read_ppm, write_dataset
from .train import TrainConfig, pad_to_multiple, train

log = logging.getLogger("inceptext")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3


class ValidationError(Exception):
    """Bad arguments, config or inputs, detected before any work starts."""


# ----------------------------------------------------------------------------
# config file


def read_config_file(path) -> dict:
    out = {}
    try:
        fh = open(path)
    except OSError as e:
        raise ValidationError(f"cannot read config file: {e}") from None
    with fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{n}: expected 'key = value', got {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ValidationError(f"{path}:{n}: empty key")
            out[key.replace("-", "_")] = val
    return out


def _apply_config(parser: argparse.ArgumentParser, values: dict) -> None:
    """Install file values as parser defaults, converting them like the flag would."""
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        if key not in actions:
            raise ValidationError(f"unknown config key {key!r} for this command")
        act = actions[key]
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValidationError(f"config key {key!r} needs a boolean, got {raw!r}")
            defaults[key] = low in ("1", "true", "yes", "on")
            continue
        try:
            defaults[key] = act.type(raw) if act.type else raw
        except (TypeError, ValueError):
            raise ValidationError(f"config key {key!r}: cannot parse {raw!r}") from None
        if act.choices is not None and defaults[key] not in act.choices:
            raise ValidationError(f"config key {key!r} must be one of {sorted(act.choices)}")
    parser.set_defaults(**defaults)


# ----------------------------------------------------------------------------
# validation helpers


def _check_range(name: str, value, lo=None, hi=None, lo_open=False) -> None:
    if value is None:
        return
    if lo is not None and (value < lo or (lo_open and value == lo)):
        raise ValidationError(f"{name} must be {'>' if lo_open else '>='} {lo}, got {value}")
    if hi is not None and value > hi:
        raise ValidationError(f"{name} must be <= {hi}, got {value}")


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ValidationError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} {p} does not exist")
    return p


def _require_out_dir(path) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise ValidationError(f"output directory {parent} does not exist")


def _load_model(path, score_threshold: Optional[float] = None) -> IncepText:
    _require_file(path, "checkpoint")
    try:
        arrays = load_checkpoint(path)
        cfg = config_from_params(arrays)
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from None
    if score_threshold is not None:
        cfg = dataclasses.replace(cfg, score_threshold=score_threshold)
    return IncepText(cfg, params_from_arrays(arrays))


def _load_scenes(path) -> list:
    p = Path(path) if path is not None else None
    if p is None:
        raise ValidationError("--data is required")
    manifest = p / "manifest.txt" if p.is_dir() else p
    if not manifest.is_file():
        raise ValidationError(f"dataset manifest {manifest} not found")
    try:
        _, pairs = read_manifest(manifest)
        for img, gt in pairs:
            if not img.is_file() or not gt.is_file():
                raise ValidationError(f"dataset entry missing: {img} / {gt}")
        return load_dataset(manifest)
    except ValueError as e:
        raise ValidationError(f"{manifest}: {e}") from None


# ----------------------------------------------------------------------------
# the operations


def detect_image(model: IncepText, image: np.ndarray, score_threshold: Optional[float] = None) -> tuple:
    """Detect on an arbitrary-size image; returns (detections in image frame, (top, left) padding)."""
    _, H, W = image.shape
    padded, (top, left) = pad_to_multiple(image, model.config.backbone.total_stride)
    dets = model.detect(padded, score_threshold)
    out = []
    for d in dets:
        q = geo.clip_quad(np.asarray(d.quad) - np.array([left, top]), W, H)
        if geo.polygon_area(q) < 1.0:
            continue
        out.append(dataclasses.replace(d, quad=geo.canonical_quad(q)))
    return out, (top, left)


def run_training(data, out_dir, iterations: int = 2000, lr: float = 1e-3, lambda_m: float = 2.0,
                 seed: int = 0, log_interval: int = 20, checkpoint_interval: int = 0,
                 multiscale: bool = True, plain: bool = False, checkpoint=None):
    scenes = _load_scenes(data)
    if not scenes:
        raise ValidationError("dataset is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = DetectorConfig(lambda_m=lambda_m)
    if plain:
        cfg = cfg.ablated()
    model = IncepText(cfg, seed=seed)
    tc = TrainConfig(iterations=iterations, lr=lr, seed=seed, log_interval=log_interval,
                     checkpoint_interval=checkpoint_interval, multiscale=multiscale)
    ckpt = Path(checkpoint) if checkpoint is not None else out / "model.ckpt"
    result = train(model, scenes, tc, log_path=out / "metrics.log", checkpoint_path=ckpt)
    return model, result, ckpt


def run_evaluation(checkpoint, data, iou_threshold: float = 0.5, score_threshold: Optional[float] = None,
                   detections_dir=None) -> EvalReport:
    model = _load_model(checkpoint, score_threshold)
    scenes = _load_scenes(data)
    dets = []
    for i, scene in enumerate(scenes):
        found, _ = detect_image(model, scene.image)
        dets.append([(d.quad, d.score) for d in found])
        if detections_dir is not None:
            Path(detections_dir).mkdir(parents=True, exist_ok=True)
            geo.write_detections(Path(detections_dir) / f"det_{i}.txt", found)
    return evaluate(dets, [s.quads for s in scenes], iou_threshold)


def draw_quads(image: np.ndarray, quads, color=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Copy of ``image`` with each quad drawn as a closed 1-pixel outline."""
    out = image.copy()
    _, H, W = out.shape
    col = np.asarray(color, dtype=out.dtype)[:, None]
    for q in quads:
        q = np.asarray(q, dtype=np.float64)
        for a, b in zip(q, np.roll(q, -1, axis=0)):
            steps = int(np.ceil(2 * np.abs(b - a).max())) + 1
            t = np.linspace(0.0, 1.0, steps)[:, None]
            pts = np.floor(a + t * (b - a)).astype(int)
            pts[:, 0] = np.clip(pts[:, 0], 0, W - 1)
            pts[:, 1] = np.clip(pts[:, 1], 0, H - 1)
            out[:, pts[:, 1], pts[:, 0]] = col
    return out


def run_inference(checkpoint, image_path, out_path, dump_visuals: bool = False,
                  score_threshold: Optional[float] = None) -> list:
    model = _load_model(checkpoint, score_threshold)
    _require_file(image_path, "image")
    _require_out_dir(out_path)
    try:
        image = read_ppm(image_path)
    except (ValueError, OSError) as e:
        raise ValidationError(f"{image_path}: {e}") from None
    _, H, W = image.shape
    dets, (top, left) = detect_image(model, image)
    ts = model.config.backbone.total_stride
    ph, pw = -(-H // ts) * ts, -(-W // ts) * ts
    header = [f"image {Path(image_path).name} {W}x{H}",
              f"padding top={top} left={left} bottom={ph - H - top} right={pw - W - left} padded={pw}x{ph}"]
    geo.write_detections(out_path, dets, header)
    if dump_visuals:
        vis = draw_quads(image, [d.quad for d in dets])
        geo.atomic_write_bytes(visual_path(out_path), image_to_ppm_bytes(vis))
    return dets


def visual_path(out_path) -> Path:
    p = Path(out_path)
    return p.with_name(p.stem + ".vis.ppm")


# ----------------------------------------------------------------------------
# argparse wiring


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="inceptext", description="Oriented text detector toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    _common(g)
    g.add_argument("--out", required=False, help="output directory")
    g.add_argument("--count", type=int, default=200)
    g.add_argument("--start", type=int, default=0, help="first scene index")
    for f in dataclasses.fields(SceneConfig):
        if f.name != "seed":
            typ = int if f.type in (int, "int") else float
            g.add_argument(f"--{f.name.replace('_', '-')}", type=typ, default=f.default)

    t = sub.add_parser("train", help="train a detector")
    _common(t)
    t.add_argument("--data", help="dataset directory or manifest")
    t.add_argument("--out", help="run directory (metrics.log, model.ckpt)")
    t.add_argument("--checkpoint", help="checkpoint path (default OUT/model.ckpt)")
    t.add_argument("--iterations", type=int, default=2000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lambda-m", type=float, default=2.0)
    t.add_argument("--log-interval", type=int, default=20)
    t.add_argument("--checkpoint-interval", type=int, default=0)
    t.add_argument("--no-multiscale", action="store_true")
    t.add_argument("--plain", action="store_true", help="replace deformable ops by plain ones")

    e = sub.add_parser("eval", help="precision / recall / F-measure on a dataset")
    _common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--iou-threshold", type=float, default=0.5)
    e.add_argument("--score-threshold", type=float, default=None)
    e.add_argument("--out", help="write the report here")
    e.add_argument("--detections-dir", help="also write one detection file per image")

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(c)
    c.add_argument("--scope", default="all", choices=["all", *CASES])
    c.add_argument("--seeds", type=int, default=5, help="number of random seeds per operator")
    c.add_argument("--out", help="write the report here")

    i = sub.add_parser("infer", help="detect text in one PPM image")
    _common(i)
    i.add_argument("--checkpoint")
    i.add_argument("--image")
    i.add_argument("--out")
    i.add_argument("--score-threshold", type=float, default=None)
    i.add_argument("--dump-visuals", action="store_true")
    return ap


def _subparser(ap: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for act in ap._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices[name]
    raise KeyError(name)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        _apply_config(_subparser(ap, args.command), read_config_file(args.config))
        args = ap.parse_args(argv)
    return args


def _validate(args) -> None:
    _check_range("--seed", args.seed, 0)
    cmd = args.command
    if cmd == "gen-data":
        _check_range("--count", args.count, 0)
        _check_range("--start", args.start, 0)
        if args.out is None:
            raise ValidationError("--out is required")
    elif cmd == "train":
        _check_range("--iterations", args.iterations, 0)
        _check_range("--lr", args.lr, 0, lo_open=True)
        _check_range("--lambda-m", args.lambda_m, 0)
        _check_range("--log-interval", args.log_interval, 1)
        _check_range("--checkpoint-interval", args.checkpoint_interval, 0)
        if args.out is None:
            raise ValidationError("--out is required")
    elif cmd == "eval":
        _check_range("--iou-threshold", args.iou_threshold, 0, 1, lo_open=True)
        _check_range("--score-threshold", args.score_threshold, 0, 1)
    elif cmd == "gradcheck":
        _check_range("--seeds", args.seeds, 1)
    elif cmd == "infer":
        _check_range("--score-threshold", args.score_threshold, 0, 1)
        if args.out is None:
            raise ValidationError("--out is required")


def _cmd_gen(args) -> int:
    kw = {f.name: getattr(args, f.name) for f in dataclasses.fields(SceneConfig) if f.name != "seed"}
    cfg = SceneConfig(seed=args.seed, **kw)
    try:
        cfg.validate()
    except ValueError as e:
        raise ValidationError(str(e)) from None
    manifest = write_dataset(cfg, args.count, args.out, args.start)
    print(f"wrote {args.count} scenes to {manifest.parent}")
    return EXIT_OK


def _cmd_train(args) -> int:
    _, result, ckpt = run_training(args.data, args.out, args.iterations, args.lr, args.lambda_m, args.seed,
                                   args.log_interval, args.checkpoint_interval, not args.no_multiscale,
                                   args.plain, args.checkpoint)
    if result.records:
        first, last = result.records[0]["total"], result.records[-1]["total"]
        print(f"total loss {first:.4f} -> {last:.4f} over {args.iterations} iterations "
              f"({result.seconds:.1f}s); identity failures {result.identity_failures}")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    if args.out is not None:
        _require_out_dir(args.out)
    rep = run_evaluation(args.checkpoint, args.data, args.iou_threshold, args.score_threshold,
                         args.detections_dir)
    print(rep.summary())
    if args.out is not None:
        lines = [f"{k} = {getattr(rep, k)!r}" for k in ("recall", "precision", "f_measure", "iou_threshold",
                                                       "n_detections", "n_ground_truth", "n_matched")]
        for i, pairs in enumerate(rep.matches):
            lines.append(f"image {i}: " + " ".join(f"{d}-{g}:{iou:.4f}" for d, g, iou in pairs))
        geo.atomic_write_text(args.out, "".join(line + "\n" for line in lines))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    if args.out is not None:
        _require_out_dir(args.out)
    reports = run_gradcheck(args.scope, seeds=range(args.seed, args.seed + args.seeds))
    lines = [r.line() for r in reports]
    failed = [r.op for r in reports if not r.passed]
    lines.append(f"{len(reports) - len(failed)}/{len(reports)} operators passed")
    text = "".join(line + "\n" for line in lines)
    sys.stdout.write(text)
    if args.out is not None:
        geo.atomic_write_text(args.out, text)
    return EXIT_GRADCHECK if failed else EXIT_OK


def _cmd_infer(args) -> int:
    dets = run_inference(args.checkpoint, args.image, args.out, args.dump_visuals, args.score_threshold)
    print(f"{len(dets)} detections -> {args.out}")
    return EXIT_OK


COMMANDS = {"gen-data": _cmd_gen, "train": _cmd_train, "eval": _cmd_eval,
            "gradcheck": _cmd_gradcheck, "infer": _cmd_infer}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as e:
        # argparse already printed its message
        return EXIT_OK if e.code == 0 else EXIT_INVALID
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
        return COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001 - any failure past validation is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
