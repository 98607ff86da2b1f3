"""Training loop: Adam with one step decay, multi-scale augmentation, metric logging."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .detector import IncepText, LossBreakdown
from .geometry import atomic_write_text
from .synth import AnnotatedScene

log = logging.getLogger(__name__)

LOG_KEYS = ("l_rcls", "l_rbox", "l_cls", "l_box", "l_mask", "total")


@dataclass
class TrainConfig:
    iterations: int = 2000
    lr: float = 1e-3
    decay_at: float = 2.0 / 3.0
    decay_factor: float = 0.1
    seed: int = 0
    log_interval: int = 20
    checkpoint_interval: int = 0
    multiscale: bool = True
    short_edges: tuple = (160, 200, 240, 280)

    def lr_at(self, it: int) -> float:
        if self.iterations and it >= int(self.decay_at * self.iterations):
            return self.lr * self.decay_factor
        return self.lr


class Adam:
    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    t = src - lo
    M = np.zeros((n_out, n_in))
    M[np.arange(n_out), lo] += 1 - t
    M[np.arange(n_out), hi] += t
    return M


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    _, H, W = image.shape
    My = _resize_matrix(H, out_h)
    Mx = _resize_matrix(W, out_w)
    return np.matmul(np.matmul(My, image.astype(np.float64)), Mx.T).astype(np.float32)


def augment(scene: AnnotatedScene, rng: np.random.Generator, short_edges: Sequence[int],
            multiple: int) -> tuple:
    """Rescale to a random short edge, then zero-pad to a multiple of the stride at a random offset."""
    _, H, W = scene.image.shape
    s = int(short_edges[int(rng.integers(len(short_edges)))])
    f = s / min(H, W)
    h, w = max(1, int(round(H * f))), max(1, int(round(W * f)))
    img = resize_image(scene.image, h, w)
    ph = -(-h // multiple) * multiple
    pw = -(-w // multiple) * multiple
    oy = int(rng.integers(ph - h + 1))
    ox = int(rng.integers(pw - w + 1))
    out = np.zeros((3, ph, pw), dtype=np.float32)
    out[:, oy:oy + h, ox:ox + w] = img
    quads = [np.asarray(q) * np.array([w / W, h / H]) + np.array([ox, oy]) for q in scene.quads]
    return out, quads


def pad_to_multiple(image: np.ndarray, multiple: int) -> tuple:
    """Symmetric zero padding so both sides divide ``multiple``; returns (image, (top, left))."""
    _, H, W = image.shape
    ph = -(-H // multiple) * multiple - H
    pw = -(-W // multiple) * multiple - W
    top, left = ph // 2, pw // 2
    if ph == 0 and pw == 0:
        return image, (0, 0)
    out = np.zeros((3, H + ph, W + pw), dtype=image.dtype)
    out[:, top:top + H, left:left + W] = image
    return out, (top, left)


def format_record(it: int, values: dict, lr: float) -> str:
    parts = [f"iter={it}"] + [f"{k}={values[k]!r}" for k in LOG_KEYS] + [f"lr={lr!r}"]
    return " ".join(parts)


def parse_record(line: str) -> dict:
    out = {}
    for tok in line.split():
        k, v = tok.split("=", 1)
        out[k] = int(v) if k == "iter" else float(v)
    return out


@dataclass
class TrainResult:
    records: list = field(default_factory=list)
    identity_checks: int = 0
    identity_failures: int = 0
    seconds: float = 0.0


def train(model: IncepText, scenes: Sequence[AnnotatedScene], cfg: TrainConfig,
          log_path=None, checkpoint_path=None,
          on_step: Optional[Callable[[int, LossBreakdown], None]] = None) -> TrainResult:
    """Train in place. Writes the metrics log (rewritten atomically per record) and checkpoints."""
    if not scenes:
        raise ValueError("no training scenes")
    opt = Adam(model.params)
    result = TrainResult()
    ts = model.config.backbone.total_stride
    order_rng = np.random.Generator(np.random.Philox(key=np.array([cfg.seed, 0xDA7A], dtype=np.uint64)))
    order: list = []
    window: list = []
    lines: list = []
    start = time.perf_counter()

    def flush():
        if log_path is not None:
            atomic_write_text(log_path, "".join(line + "\n" for line in lines))

    flush()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model.params)
    for it in range(cfg.iterations):
        if not order:
            order = list(order_rng.permutation(len(scenes)))
        scene = scenes[order.pop(0)]
        rng = np.random.Generator(np.random.Philox(key=np.array([cfg.seed, it + 1], dtype=np.uint64)))
        if cfg.multiscale:
            image, quads = augment(scene, rng, cfg.short_edges, ts)
        else:
            image, (top, left) = pad_to_multiple(scene.image, ts)
            quads = [np.asarray(q) + np.array([left, top]) for q in scene.quads]
        opt.zero_grad()
        lb = model.loss(image, quads, rng)
        result.identity_checks += 1
        if not lb.identity_holds():
            result.identity_failures += 1
        if lb.tensor is not None:
            lb.tensor.backward()
            opt.step(cfg.lr_at(it))
        if on_step is not None:
            on_step(it, lb)
        window.append(lb.as_dict())
        done = it + 1
        if done % cfg.log_interval == 0 or done == cfg.iterations:
            avg = {k: float(np.mean([w[k] for w in window])) for k in LOG_KEYS}
            rec = format_record(done, avg, cfg.lr_at(it))
            lines.append(rec)
            result.records.append(parse_record(rec))
            window = []
            flush()
            log.info(rec)
        if checkpoint_path is not None and cfg.checkpoint_interval and done % cfg.checkpoint_interval == 0:
            save_checkpoint(checkpoint_path, model.params)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model.params)
    result.seconds = time.perf_counter() - start
    return result
