"""Finite-difference gradient suite over every differentiable operator.

Each case builds a scalar function of a few float64 arrays drawn uniformly
from [-1, 1]. The scalar is a fixed random projection of the op output so
that no gradient entry is trivially constant. Ops built on bilinear sampling
or ReLU use a small step so the central difference rarely straddles a kink.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from . import ops
from .network import InceptionTextConfig, inception_text_forward, init_inception_text
from .tensor import Tensor, gradient_check, mul, tsum

TOLERANCE = 1e-3
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class GradCase:
    fn: Callable[..., Tensor]
    inputs: list
    h: float = 1e-3
    wrt: Optional[list] = None


@dataclass
class OpReport:
    op: str
    errors: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else float("nan")

    @property
    def passed(self) -> bool:
        return bool(self.errors) and all(np.isfinite(e) and e < TOLERANCE for e in self.errors)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.op:24s} seeds={len(self.errors)} max_rel_err={self.max_error:.3e} {status}"


def _u(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def _project(out: Tensor, rng) -> Tensor:
    """sum(out * R) for a fixed random R."""
    r = Tensor(rng.uniform(-1.0, 1.0, size=out.shape), dtype=out.dtype)
    return tsum(mul(out, r))


def _rois(rng, n, size, min_side=1.5):
    x0 = rng.uniform(-0.5, size - min_side - 1, n)
    y0 = rng.uniform(-0.5, size - min_side - 1, n)
    w = rng.uniform(min_side, size - x0)
    h = rng.uniform(min_side, size - y0)
    return np.stack([x0, y0, x0 + w, y0 + h], axis=1)


def _fixed_projection(seed):
    def proj(out):
        return _project(out, np.random.default_rng(seed))
    return proj


def case_conv2d_dilated(rng) -> GradCase:
    proj = _fixed_projection(int(rng.integers(1 << 31)))
    stride = int(rng.integers(1, 3))

    def f(x, w, b):
        return proj(ops.conv2d(x, w, b, stride=stride, pad=2, dilation=2))
    return GradCase(f, [_u(rng, 2, 3, 7, 6), _u(rng, 4, 3, 3, 3), _u(rng, 4)])


def case_conv2d_plain(rng) -> GradCase:
    proj = _fixed_projection(int(rng.integers(1 << 31)))
    stride = int(rng.integers(1, 3))

    def f(x, w, b):
        return proj(ops.conv2d(x, w, b, stride=stride, pad=1))
    return GradCase(f, [_u(rng, 2, 3, 7, 6), _u(rng, 4, 3, 3, 3), _u(rng, 4)])


def case_factorized(rng) -> GradCase:
    proj = _fixed_projection(int(rng.integers(1 << 31)))
    n = int(rng.choice([3, 5]))

    def f(x, wr, wc, br, bc):
        return proj(ops.factorized_conv(x, n, wr, wc, br, bc))
    return GradCase(f, [_u(rng, 1, 2, 6, 7), _u(rng, 3, 2, 1, n), _u(rng, 2, 3, n, 1), _u(rng, 3), _u(rng, 2)])


def case_bilinear(rng) -> GradCase:
    proj = _fixed_projection(int(rng.integers(1 << 31)))
    H, W = 5, 6
    # coordinates strictly inside cells so the floor never flips under the step
    px = rng.integers(-1, W, 12) + rng.uniform(0.05, 0.95, 12)
    py = rng.integers(-1, H, 12) + rng.uniform(0.05, 0.95, 12)

    def f(m, x, y):
        return proj(ops.bilinear_sample(m, x, y))
    return GradCase(f, [_u(rng, 2, H, W), px, py], h=1e-6)


def case_deformable_conv(rng) -> GradCase:
    proj = _fixed_projection(int(rng.integers(1 << 31)))
    stride = int(rng.integers(1, 3))
    H, W = 6, 5
    oh, ow = (H + 2 - 3) // stride + 1, (W + 2 - 3) // stride + 1

    def f(x, off, w, b):
        return proj(ops.deformable_conv2d(x, off, w, b, stride=stride, pad=1))
    off = 2.0 * _u(rng, 1, 18, oh, ow)
    return GradCase(f, [_u(rng, 1, 2, H, W), off, _u(rng, 3, 2, 3, 3), _u(rng, 3)], h=1e-6)


def case_psroi(rng) -> GradCase:
    proj = _fixed_projection(int(rng.integers(1 << 31)))
    k, cpb, S = 3, 2, 8
    rois = _rois(rng, 3, S)

    def f(m):
        return proj(ops.psroi_pool(m, rois, ops.PsMapSpec(k, cpb)))
    return GradCase(f, [_u(rng, k * k * cpb, S, S)], h=1e-6)


def case_deformable_psroi(rng) -> GradCase:
    proj = _fixed_projection(int(rng.integers(1 << 31)))
    k, cpb, S = 3, 2, 8
    rois = _rois(rng, 3, S)
    gamma = float(rng.uniform(0.05, 0.5))

    def f(m, off):
        return proj(ops.deformable_psroi_pool(m, rois, off, ops.PsMapSpec(k, cpb), gamma))
    return GradCase(f, [_u(rng, k * k * cpb, S, S), _u(rng, 3, 2, k, k)], h=1e-6)


def case_upsample(rng) -> GradCase:
    proj = _fixed_projection(int(rng.integers(1 << 31)))
    mode = "bilinear" if rng.random() < 0.5 else "nearest"

    def f(x):
        return proj(ops.upsample2x(x, mode))
    return GradCase(f, [_u(rng, 2, 3, 4, 5)])


def case_softmax_ce(rng) -> GradCase:
    labels = rng.integers(0, 3, 7)

    def f(z):
        return ops.softmax_cross_entropy(z, labels)
    return GradCase(f, [3 * _u(rng, 7, 3)])


def case_smooth_l1(rng) -> GradCase:
    target = _u(rng, 6, 4)
    pred = target + 2.5 * _u(rng, 6, 4)
    # keep every residual away from the |d| = 1 switch
    d = pred - target
    d = np.where(np.abs(np.abs(d) - 1) < 0.05, d * 1.2, d)

    def f(p):
        return ops.smooth_l1(p, target)
    return GradCase(f, [target + d])


def case_bce(rng) -> GradCase:
    target = rng.uniform(0, 1, (5, 9))

    def f(z):
        return ops.binary_cross_entropy(z, target)
    return GradCase(f, [4 * _u(rng, 5, 9)])


_IT_NAMES = ("it.left.offset.w", "it.right.row.w", "it.middle.deform.w", "it.proj.w")


def case_inception_text(rng) -> GradCase:
    proj = _fixed_projection(int(rng.integers(1 << 31)))
    cfg = InceptionTextConfig(in_channels=4, reduce_channels=2)
    init = np.random.Generator(np.random.Philox(key=np.array([int(rng.integers(1 << 31)), 7], dtype=np.uint64)))
    params = {k: v.data.astype(np.float64) for k, v in init_inception_text(cfg, init, "it").items()}
    # random offset weights so the deformable taps actually move
    for name in params:
        if ".offset." in name:
            params[name] = 0.3 * _u(rng, *params[name].shape)

    def f(x, *checked):
        p = {k: Tensor(v, dtype=np.float64) for k, v in params.items()}
        for name, t in zip(_IT_NAMES, checked):
            p[name] = t
        return proj(inception_text_forward(x, p, cfg, "it"))
    return GradCase(f, [_u(rng, 1, 4, 6, 6)] + [params[n] for n in _IT_NAMES], h=1e-6)


CASES: Dict[str, Callable[[np.random.Generator], GradCase]] = {
    "conv2d": case_conv2d_plain,
    "conv2d_dilated": case_conv2d_dilated,
    "factorized_conv": case_factorized,
    "bilinear_sample": case_bilinear,
    "deformable_conv2d": case_deformable_conv,
    "psroi_pool": case_psroi,
    "deformable_psroi_pool": case_deformable_psroi,
    "upsample2x": case_upsample,
    "softmax_cross_entropy": case_softmax_ce,
    "smooth_l1": case_smooth_l1,
    "binary_cross_entropy": case_bce,
    "inception_text": case_inception_text,
}


def check_case(case: GradCase) -> float:
    return gradient_check(case.fn, case.inputs, case.h, case.wrt)


def run_gradcheck(scope: str = "all", seeds: Iterable[int] = DEFAULT_SEEDS,
                  cases: Optional[Dict[str, Callable]] = None) -> list:
    """One OpReport per operator in scope; ``cases`` overrides the registry (test fixtures)."""
    registry = CASES if cases is None else cases
    if scope == "all":
        names = list(registry)
    elif scope in registry:
        names = [scope]
    else:
        raise KeyError(f"unknown operator {scope!r}; choose from {', '.join(['all', *registry])}")
    reports = []
    for name in names:
        rep = OpReport(name)
        t0 = time.perf_counter()
        for seed in seeds:
            rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x6C], dtype=np.uint64)))
            try:
                rep.errors.append(check_case(registry[name](rng)))
            except FloatingPointError:
                rep.errors.append(float("inf"))
        rep.seconds = time.perf_counter() - t0
        reports.append(rep)
    return reports
