"""Deterministic synthetic scenes with oriented, striped "text" rectangles.

Every scene is a pure function of ``(config.seed, index)``: the random stream
is numpy's Philox4x64 counter-based generator keyed by those two words, which
gives the same bits on every platform.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (atomic_write_bytes, atomic_write_text, canonical_quad, polygon_area,
                       polygon_iou)

MARGIN = 2.0
MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class SceneConfig:
    height: int = 320
    width: int = 320
    min_boxes: int = 1
    max_boxes: int = 4
    min_short: float = 12.0
    max_short: float = 80.0
    min_aspect: float = 1.0
    max_aspect: float = 8.0
    min_angle: float = -90.0
    max_angle: float = 90.0
    contrast: float = 0.3
    noise: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.height < 16 or self.width < 16:
            raise ValueError("image too small")
        if not 1 <= self.min_boxes <= self.max_boxes:
            raise ValueError("need 1 <= min_boxes <= max_boxes")
        if not 0 < self.min_short <= self.max_short:
            raise ValueError("invalid short-side range")
        if not 1 <= self.min_aspect <= self.max_aspect:
            raise ValueError("invalid aspect range")
        if not -90 <= self.min_angle <= self.max_angle <= 90:
            raise ValueError("angles must lie in [-90, 90]")
        if not 0 < self.contrast <= 0.5 or not 0 <= self.noise <= 0.1:
            raise ValueError("contrast must be in (0, 0.5] and noise in [0, 0.1]")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in d.items():
            if k in fields:
                kw[k] = int(v) if fields[k] in (int, "int") else float(v)
        return cls(**kw)


@dataclass
class AnnotatedScene:
    image: np.ndarray  # (3, H, W) float32 in [0, 1], 8-bit quantised
    quads: list  # of (4, 2) float arrays, clockwise


def scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def rotated_rect(cx: float, cy: float, long_side: float, short_side: float, angle_deg: float) -> np.ndarray:
    t = math.radians(angle_deg)
    u = np.array([math.cos(t), math.sin(t)])
    v = np.array([-math.sin(t), math.cos(t)])
    hl, hs = long_side / 2, short_side / 2
    c = np.array([cx, cy])
    return canonical_quad(np.array([c - hl * u - hs * v, c + hl * u - hs * v,
                                    c + hl * u + hs * v, c - hl * u + hs * v]))


def generate_scene(config: SceneConfig, index: int) -> AnnotatedScene:
    config.validate()
    rng = scene_rng(config.seed, index)
    H, W = config.height, config.width
    n = int(rng.integers(config.min_boxes, config.max_boxes + 1))
    boxes = []  # (quad, long, short, angle, period, level)
    max_long = 0.9 * min(H, W) - 2 * MARGIN
    for _ in range(n):
        for _attempt in range(MAX_ATTEMPTS):
            short = rng.uniform(config.min_short, config.max_short)
            hi_aspect = max(config.min_aspect, min(config.max_aspect, max_long / short))
            aspect = rng.uniform(config.min_aspect, hi_aspect)
            angle = rng.uniform(config.min_angle, config.max_angle)
            if angle <= -90.0:
                angle = 90.0
            long_side = short * aspect
            cx = rng.uniform(0, W)
            cy = rng.uniform(0, H)
            quad = rotated_rect(cx, cy, long_side, short, angle)
            if (quad.min() < MARGIN or quad[:, 0].max() > W - MARGIN
                    or quad[:, 1].max() > H - MARGIN):
                continue
            grown = rotated_rect(cx, cy, long_side + 6.0, short + 6.0, angle)
            if any(polygon_iou(grown, b[0]) > 0 for b in boxes):
                continue
            period = short * rng.uniform(0.35, 0.7)
            extra = rng.uniform(0.1, 0.3)
            boxes.append((quad, long_side, short, angle, period, extra))
            break
        else:
            raise RuntimeError(f"could not place box {len(boxes) + 1} of {n} after {MAX_ATTEMPTS} attempts")

    bg = rng.uniform(0.05, 0.3)
    img = np.full((H, W), bg)
    ys, xs = np.mgrid[0:H, 0:W] + 0.5
    for quad, long_side, short, angle, period, extra in boxes:
        t = math.radians(angle)
        c = quad.mean(0)
        du = (xs - c[0]) * math.cos(t) + (ys - c[1]) * math.sin(t)
        dv = -(xs - c[0]) * math.sin(t) + (ys - c[1]) * math.cos(t)
        inside = (np.abs(du) <= long_side / 2) & (np.abs(dv) <= short / 2)
        stripe = np.floor((du + long_side / 2) / (period / 2)) % 2 == 0
        level = np.where(stripe, bg + config.contrast + extra, bg + config.contrast)
        img = np.where(inside, level, img)
    noise = rng.uniform(-config.noise, config.noise, size=(H, W))
    img = np.clip(img + noise, 0.0, 1.0)
    img8 = np.round(img * 255).astype(np.uint8)
    image = np.repeat(img8[None], 3, axis=0).astype(np.float32) / np.float32(255)
    return AnnotatedScene(image=image, quads=[b[0] for b in boxes])


# ----------------------------------------------------------------------------
# files


def _num(v: float) -> str:
    return np.format_float_positional(float(v), unique=True, trim="-")


def format_quad_line(quad) -> str:
    return ",".join(_num(v) for v in np.asarray(quad, dtype=np.float64).reshape(-1))


def parse_quad_line(line: str) -> np.ndarray:
    parts = line.strip().split(",")
    if len(parts) != 8:
        raise ValueError(f"annotation line needs 8 coordinates, got {len(parts)}: {line.strip()!r}")
    return np.array([float(p) for p in parts]).reshape(4, 2)


def write_annotations(path, quads) -> None:
    atomic_write_text(path, "".join(format_quad_line(q) + "\n" for q in quads))


def read_annotations(path) -> list:
    with open(path) as fh:
        return [parse_quad_line(line) for line in fh if line.strip() and not line.startswith("#")]


def image_to_ppm_bytes(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"image must be (3, H, W), got {img.shape}")
    _, H, W = img.shape
    px = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    return f"P6\n{W} {H}\n255\n".encode("ascii") + px.tobytes()


def write_ppm(path, image: np.ndarray) -> None:
    atomic_write_bytes(path, image_to_ppm_bytes(image))


def read_ppm(path) -> np.ndarray:
    """Binary 8-bit PPM (P6) -> (3, H, W) float32 in [0, 1]."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    try:
        W, H, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PPM header") from None
    if maxval != 255 or W <= 0 or H <= 0:
        raise ValueError(f"{path}: only 8-bit PPM images are supported")
    pos += 1
    body = data[pos:pos + W * H * 3]
    if len(body) != W * H * 3:
        raise ValueError(f"{path}: truncated pixel data")
    px = np.frombuffer(body, dtype=np.uint8).reshape(H, W, 3)
    return px.transpose(2, 0, 1).astype(np.float32) / np.float32(255)


MANIFEST = "manifest.txt"


def write_dataset(config: SceneConfig, count: int, directory, start: int = 0) -> Path:
    """Write ``count`` scenes (indices start..start+count-1) plus a manifest; returns its path."""
    if count < 0:
        raise ValueError("count must be non-negative")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in config.to_dict().items()]
    lines.append(f"count = {count}")
    lines.append(f"start = {start}")
    for index in range(start, start + count):
        scene = generate_scene(config, index)
        img_name = f"img_{index}.ppm"
        gt_name = f"gt_{index}.txt"
        write_ppm(d / img_name, scene.image)
        write_annotations(d / gt_name, scene.quads)
        lines.append(f"pair = {img_name} {gt_name}")
    manifest = d / MANIFEST
    atomic_write_text(manifest, "".join(line + "\n" for line in lines))
    return manifest


def read_manifest(path) -> tuple:
    """Returns (SceneConfig, [(image_path, gt_path), ...])."""
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST
    values = {}
    pairs = []
    with open(p) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{p}: bad manifest line {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "pair":
                img, gt = val.split()
                pairs.append((p.parent / img, p.parent / gt))
            else:
                values[key] = val
    return SceneConfig.from_dict(values), pairs


def load_scene(image_path, gt_path) -> AnnotatedScene:
    return AnnotatedScene(image=read_ppm(image_path), quads=read_annotations(gt_path))


def load_dataset(path) -> list:
    _, pairs = read_manifest(path)
    return [load_scene(i, g) for i, g in pairs]


def scene_is_valid(scene: AnnotatedScene) -> bool:
    _, H, W = scene.image.shape
    for q in scene.quads:
        if polygon_area(q) <= 0 or q.min() < 0 or q[:, 0].max() > W or q[:, 1].max() > H:
            return False
    return bool(scene.quads)


__all__ = ["SceneConfig", "AnnotatedScene", "generate_scene", "write_dataset", "read_manifest",
           "load_scene", "load_dataset", "read_ppm", "write_ppm", "read_annotations",
           "write_annotations", "parse_quad_line", "format_quad_line", "scene_rng"]
