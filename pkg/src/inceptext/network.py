"""Inception-Text block and the fused, dilated backbone it sits on.

Parameters are plain ``dict[str, Tensor]`` keyed by dotted names so they can
be checkpointed and optimised without a module system.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import ops
from .tensor import Tensor, add, backward, concat, mul, relu, tsum

Params = Dict[str, Tensor]

BRANCHES = ("left", "middle", "right")
BRANCH_KERNELS = {"left": 1, "middle": 3, "right": 5}


@dataclass(frozen=True)
class InceptionTextConfig:
    in_channels: int
    reduce_channels: Optional[int] = None
    deform_kernel: int = 3
    out_channels: Optional[int] = None
    deformable: bool = True

    def __post_init__(self):
        if self.reduce_channels is None:
            object.__setattr__(self, "reduce_channels", max(1, self.in_channels // 4))
        if self.out_channels is None:
            object.__setattr__(self, "out_channels", self.in_channels)
        if self.deform_kernel < 1 or self.deform_kernel % 2 == 0:
            raise ValueError("deform_kernel must be odd and positive")
        if self.out_channels != self.in_channels:
            raise ValueError("the shortcut needs out_channels == in_channels")

    @property
    def concat_channels(self) -> int:
        return 3 * self.reduce_channels


@dataclass(frozen=True)
class BackboneConfig:
    widths: tuple = (16, 32, 64, 128, 128)
    strides: tuple = (2, 2, 2, 2, 1)
    convs_per_stage: tuple = (1, 1, 2, 2, 2)
    final_dilation: int = 2
    upsample_mode: str = "bilinear"
    deformable: bool = True
    reduce_channels: Optional[int] = None

    def __post_init__(self):
        n = len(self.widths)
        if n < 3 or len(self.strides) != n or len(self.convs_per_stage) != n:
            raise ValueError("widths, strides and convs_per_stage need equal length >= 3")
        if self.strides[-1] != 1 or self.final_dilation < 2:
            raise ValueError("final stage must have stride 1 and dilation >= 2")

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.strides))

    @property
    def feature_stride(self) -> int:
        """Stride of the third-from-last stage, where the fused maps live."""
        return int(np.prod(self.strides[:-2]))

    @property
    def fused_channels(self) -> int:
        return self.widths[-3]

    def inception_config(self) -> InceptionTextConfig:
        return InceptionTextConfig(self.fused_channels, self.reduce_channels, deformable=self.deformable)


def _he(rng: np.random.Generator, shape) -> Tensor:
    fan_in = int(np.prod(shape[1:]))
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def _conv_params(params: Params, name: str, rng, cout, cin, kh, kw, zero=False) -> None:
    params[f"{name}.w"] = _zeros((cout, cin, kh, kw)) if zero else _he(rng, (cout, cin, kh, kw))
    params[f"{name}.b"] = _zeros((cout,))


# ----------------------------------------------------------------------------
# Inception-Text


def init_inception_text(config: InceptionTextConfig, rng: np.random.Generator, prefix: str = "it") -> Params:
    C, r, d = config.in_channels, config.reduce_channels, config.deform_kernel
    p: Params = {}
    for branch in BRANCHES:
        n = BRANCH_KERNELS[branch]
        b = f"{prefix}.{branch}"
        _conv_params(p, f"{b}.reduce", rng, r, C, 1, 1)
        if n > 1:
            _conv_params(p, f"{b}.row", rng, r, r, 1, n)
            _conv_params(p, f"{b}.col", rng, r, r, n, 1)
        _conv_params(p, f"{b}.deform", rng, r, r, d, d)
        if config.deformable:
            _conv_params(p, f"{b}.offset", rng, 2 * d * d, r, 3, 3, zero=True)
    _conv_params(p, f"{prefix}.proj", rng, C, config.concat_channels, 1, 1)
    return p


def inception_branch(x: Tensor, params: Params, config: InceptionTextConfig, branch: str,
                     prefix: str = "it") -> Tensor:
    """1x1 reduce, optional factorized nxn, then a (deformable) conv."""
    if branch not in BRANCHES:
        raise ValueError(f"unknown branch {branch!r}")
    b = f"{prefix}.{branch}"
    n = BRANCH_KERNELS[branch]
    h = relu(ops.conv2d(x, params[f"{b}.reduce.w"], params[f"{b}.reduce.b"]))
    if n > 1:
        h = relu(ops.factorized_conv(h, n, params[f"{b}.row.w"], params[f"{b}.col.w"],
                                     params[f"{b}.row.b"], params[f"{b}.col.b"]))
    pad = config.deform_kernel // 2
    if config.deformable:
        off = ops.conv2d(h, params[f"{b}.offset.w"], params[f"{b}.offset.b"], pad=1)
        h = ops.deformable_conv2d(h, off, params[f"{b}.deform.w"], params[f"{b}.deform.b"], pad=pad)
    else:
        h = ops.conv2d(h, params[f"{b}.deform.w"], params[f"{b}.deform.b"], pad=pad)
    return relu(h)


def inception_text_forward(x: Tensor, params: Params, config: InceptionTextConfig,
                           prefix: str = "it") -> Tensor:
    if x.ndim != 4 or x.shape[1] != config.in_channels:
        raise ValueError(f"Inception-Text expects {config.in_channels} input channels, got shape {x.shape}")
    branches = [inception_branch(x, params, config, b, prefix) for b in BRANCHES]
    h = concat(branches, axis=1)
    h = ops.conv2d(h, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"])
    return add(x, h)


def branch_receptive_footprint(params: Params, config: InceptionTextConfig, branch: str,
                               prefix: str = "it") -> int:
    """Side of the input window that influences one output pixel of a branch.

    Offsets are zeroed, weights replaced by their magnitudes plus a small
    constant and the input is all ones, so every ReLU is active and the
    result is the structural footprint rather than an accident of dead units.
    """
    probe: Params = {}
    for name, t in params.items():
        if not name.startswith(f"{prefix}."):
            continue
        if ".offset." in name:
            probe[name] = Tensor(np.zeros_like(t.data, dtype=np.float64))
        else:
            probe[name] = Tensor(np.abs(t.data).astype(np.float64) + 1e-3)
    size = 4 * (config.deform_kernel + max(BRANCH_KERNELS.values())) + 1
    x = Tensor(np.ones((1, config.in_channels, size, size)), requires_grad=True, dtype=np.float64)
    y = inception_branch(x, probe, config, branch, prefix)
    c = size // 2
    sel = np.zeros(y.shape)
    sel[0, 0, c, c] = 1.0
    backward(tsum(mul(y, Tensor(sel))))
    nz = np.argwhere(np.abs(x.grad[0]).sum(axis=0) > 0)
    if nz.size == 0:
        return 0
    return int(max(nz[:, 0].max() - nz[:, 0].min(), nz[:, 1].max() - nz[:, 1].min()) + 1)


# ----------------------------------------------------------------------------
# backbone


def init_backbone(config: BackboneConfig, rng: np.random.Generator, in_channels: int = 3) -> Params:
    p: Params = {}
    cin = in_channels
    for s, (w, n) in enumerate(zip(config.widths, config.convs_per_stage)):
        for j in range(n):
            _conv_params(p, f"backbone.s{s}.c{j}", rng, w, cin, 3, 3)
            cin = w
    fc = config.fused_channels
    _conv_params(p, "lat4", rng, fc, config.widths[-2], 1, 1)
    _conv_params(p, "lat5", rng, fc, config.widths[-1], 1, 1)
    itc = config.inception_config()
    p.update(init_inception_text(itc, rng, "it_a"))
    p.update(init_inception_text(itc, rng, "it_b"))
    return p


def backbone_stages(image: Tensor, params: Params, config: BackboneConfig) -> list:
    feats = []
    h = image
    last = len(config.widths) - 1
    for s, (stride, n) in enumerate(zip(config.strides, config.convs_per_stage)):
        dil = config.final_dilation if s == last else 1
        for j in range(n):
            st = stride if j == 0 else 1
            h = relu(ops.conv2d(h, params[f"backbone.s{s}.c{j}.w"], params[f"backbone.s{s}.c{j}.b"],
                                stride=st, pad=dil, dilation=dil))
        feats.append(h)
    return feats


def fused_backbone_forward(image: Tensor, params: Params, config: BackboneConfig) -> tuple:
    """Returns the two Inception-Text-refined fused maps (A for the RPN, B for the heads)."""
    if image.ndim != 4:
        raise ValueError(f"image must be (N,C,H,W), got {image.shape}")
    H, W = image.shape[2:]
    ts = config.total_stride
    if H % ts or W % ts:
        raise ValueError(f"image size {H}x{W} is not divisible by the total stride {ts}")
    feats = backbone_stages(image, params, config)
    s3, s4, s5 = feats[-3], feats[-2], feats[-1]
    l4 = ops.conv2d(s4, params["lat4.w"], params["lat4.b"])
    l5 = ops.conv2d(s5, params["lat5.w"], params["lat5.b"])
    fa = add(s3, ops.upsample2x(l4, config.upsample_mode))
    fb = add(s3, ops.upsample2x(l5, config.upsample_mode))
    itc = config.inception_config()
    return (inception_text_forward(fa, params, itc, "it_a"),
            inception_text_forward(fb, params, itc, "it_b"))


def count_params(params: Params, prefix: str = "") -> int:
    return int(sum(t.size for n, t in params.items() if n.startswith(prefix)))
