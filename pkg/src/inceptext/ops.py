"""Layer primitives with hand-written backward passes.

Feature maps are (N, C, H, W). Sampling coordinates are in map pixels with
pixel ``i`` centred at coordinate ``i``; anything read outside the map is 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, make_node

IntPair = Union[int, tuple]


def _pair(v) -> tuple:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected a pair, got {v}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(size: int, k: int, stride: int, pad: int, dilation: int) -> int:
    return (size + 2 * pad - dilation * (k - 1) - 1) // stride + 1


@dataclass(frozen=True)
class ConvSpec:
    kernel_h: int
    kernel_w: int
    stride: IntPair = 1
    pad: IntPair = 0
    dilation: IntPair = 1
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError("kernel sizes must be positive")
        if min(_pair(self.stride)) < 1 or min(_pair(self.dilation)) < 1 or min(_pair(self.pad)) < 0:
            raise ValueError(f"invalid stride/pad/dilation in {self}")

    def output_shape(self, h: int, w: int) -> tuple:
        sh, sw = _pair(self.stride)
        ph, pw = _pair(self.pad)
        dh, dw = _pair(self.dilation)
        oh = conv_output_size(h, self.kernel_h, sh, ph, dh)
        ow = conv_output_size(w, self.kernel_w, sw, pw, dw)
        if oh < 1 or ow < 1:
            raise ValueError(f"non-positive conv output size {oh}x{ow} for input {h}x{w} and {self}")
        return oh, ow


def _check_conv(x: Tensor, weight: Tensor, bias: Optional[Tensor]):
    if x.ndim != 4:
        raise ValueError(f"conv input must be (N,C,H,W), got {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv weight must be (Cout,Cin,kh,kw), got {weight.shape}")
    if weight.shape[1] != x.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels but weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {weight.shape[0]} output channels")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: IntPair = 1,
           pad: IntPair = 0, dilation: IntPair = 1) -> Tensor:
    """Zero-padded cross-correlation with stride and dilation (atrous when dilation > 1)."""
    _check_conv(x, weight, bias)
    N, C, H, W = x.shape
    Co, _, kh, kw = weight.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    dh, dw = _pair(dilation)
    oh, ow = ConvSpec(kh, kw, (sh, sw), (ph, pw), (dh, dw)).output_shape(H, W)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    s = xp.strides
    view = as_strided(xp, shape=(C, kh, kw, N, oh, ow),
                      strides=(s[1], s[2] * dh, s[3] * dw, s[0], s[2] * sh, s[3] * sw),
                      writeable=False)
    cols = view.reshape(C * kh * kw, N * oh * ow)
    w2 = weight.data.reshape(Co, -1)
    out = (w2 @ cols).reshape(Co, N, oh, ow)
    if bias is not None:
        out += bias.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    Hp, Wp = xp.shape[2], xp.shape[3]

    def vjp(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(Co, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(C, kh, kw, N, oh, ow)
            gxp = np.zeros((N, C, Hp, Wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    y0, x0 = i * dh, j * dw
                    gxp[:, :, y0:y0 + sh * (oh - 1) + 1:sh, x0:x0 + sw * (ow - 1) + 1:sw] += \
                        gcols[:, i, j].transpose(1, 0, 2, 3)
            gx = np.ascontiguousarray(gxp[:, :, ph:ph + H, pw:pw + W])
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_node("conv2d", out, inputs, vjp)


def conv2d_spec(x: Tensor, weight: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    if weight.shape != (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w):
        raise ValueError(f"weight {weight.shape} inconsistent with {spec}")
    return conv2d(x, weight, bias, spec.stride, spec.pad, spec.dilation)


def factorized_conv(x: Tensor, n: int, w_row: Tensor, w_col: Tensor,
                    b_row: Optional[Tensor] = None, b_col: Optional[Tensor] = None) -> Tensor:
    """A 1xn convolution followed by an nx1 one; same receptive field as nxn, size preserved."""
    if n < 3 or n % 2 == 0:
        raise ValueError(f"factorized conv needs odd n >= 3, got {n}")
    if w_row.shape[2:] != (1, n) or w_col.shape[2:] != (n, 1):
        raise ValueError(f"expected 1x{n} and {n}x1 kernels, got {w_row.shape} and {w_col.shape}")
    r = n // 2
    return conv2d(conv2d(x, w_row, b_row, pad=(0, r)), w_col, b_col, pad=(r, 0))


# ----------------------------------------------------------------------------
# bilinear sampling core shared by sample / deformable conv / pooling


class _Bilinear:
    """Four-neighbour bilinear weights for a batch of sample points on an HxW grid.

    Neighbours outside the grid get zero weight.
    """

    def __init__(self, xs: np.ndarray, ys: np.ndarray, H: int, W: int):
        x0 = np.floor(xs)
        y0 = np.floor(ys)
        lx = xs - x0
        ly = ys - y0
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        self.shape = xs.shape
        self.idx = []
        self.w = []
        self.dwx = []
        self.dwy = []
        for dy in (0, 1):
            wy = ly if dy else 1 - ly
            sy = 1.0 if dy else -1.0
            yy = y0 + dy
            for dx in (0, 1):
                wx = lx if dx else 1 - lx
                sx = 1.0 if dx else -1.0
                xx = x0 + dx
                valid = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
                self.idx.append(np.where(valid, yy * W + xx, 0))
                self.w.append(wy * wx * valid)
                self.dwx.append(sx * wy * valid)
                self.dwy.append(sy * wx * valid)

    def sample(self, flat: np.ndarray) -> np.ndarray:
        """flat: (C, H*W) -> values (C, *shape)."""
        out = 0
        for idx, w in zip(self.idx, self.w):
            out = out + flat[:, idx] * w
        return out

    def coord_grads(self, flat: np.ndarray, g: np.ndarray) -> tuple:
        """d/dx and d/dy of sum(g * sample(flat)), summed over channels."""
        gx = 0
        gy = 0
        for idx, dwx, dwy in zip(self.idx, self.dwx, self.dwy):
            v = (flat[:, idx] * g).sum(axis=0)
            gx = gx + v * dwx
            gy = gy + v * dwy
        return gx, gy

    def scatter(self, g: np.ndarray, C: int, HW: int) -> np.ndarray:
        """Adjoint of ``sample``: g (C, *shape) -> (C, H*W)."""
        chan = (np.arange(C) * HW).reshape((C,) + (1,) * len(self.shape))
        index = np.concatenate([(chan + idx).reshape(-1) for idx in self.idx])
        weights = np.concatenate([(g * w).reshape(-1) for w in self.w])
        return np.bincount(index, weights=weights, minlength=C * HW).reshape(C, HW)


def bilinear_sample(fmap: Tensor, x, y) -> Tensor:
    """Sample a (C,H,W) map at points (x, y); returns (C,) for scalars or (C, P) for vectors.

    Differentiable w.r.t. the map and, when given as tensors, the coordinates.
    """
    if fmap.ndim != 3:
        raise ValueError(f"bilinear_sample expects (C,H,W), got {fmap.shape}")
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=fmap.dtype))
    yt = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=fmap.dtype))
    if xt.shape != yt.shape:
        raise ValueError(f"coordinate shapes differ: {xt.shape} vs {yt.shape}")
    C, H, W = fmap.shape
    flat = fmap.data.reshape(C, H * W)
    xs = xt.data.reshape(-1).astype(fmap.dtype)
    ys = yt.data.reshape(-1).astype(fmap.dtype)
    bl = _Bilinear(xs, ys, H, W)
    out = bl.sample(flat).reshape((C,) + xt.shape)

    def vjp(g):
        g2 = g.reshape(C, -1)
        gm = bl.scatter(g2, C, H * W).reshape(C, H, W).astype(g.dtype) if fmap.requires_grad else None
        gx = gy = None
        if xt.requires_grad or yt.requires_grad:
            cx, cy = bl.coord_grads(flat, g2)
            gx = cx.reshape(xt.shape)
            gy = cy.reshape(yt.shape)
        return gm, gx, gy

    return make_node("bilinear_sample", np.asarray(out, dtype=fmap.dtype), (fmap, xt, yt), vjp)


def deformable_conv2d(x: Tensor, offsets: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
                      stride: IntPair = 1, pad: IntPair = 0, dilation: IntPair = 1) -> Tensor:
    """Convolution whose taps sample at regular grid + learned (dx, dy).

    ``offsets`` is (N, 2*kh*kw, out_h, out_w) with channel 2k holding dx and
    2k+1 holding dy for tap k (row-major over the kernel).
    """
    _check_conv(x, weight, bias)
    N, C, H, W = x.shape
    Co, _, kh, kw = weight.shape
    K = kh * kw
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    dh, dw = _pair(dilation)
    oh, ow = ConvSpec(kh, kw, (sh, sw), (ph, pw), (dh, dw)).output_shape(H, W)
    if offsets.shape != (N, 2 * K, oh, ow):
        raise ValueError(f"offset shape {offsets.shape} != expected {(N, 2 * K, oh, ow)}")

    dt = x.dtype
    ky, kx = np.meshgrid(np.arange(kh) * dh, np.arange(kw) * dw, indexing="ij")
    base_y = (np.arange(oh) * sh - ph)[None, :, None] + ky.reshape(K, 1, 1)
    base_x = (np.arange(ow) * sw - pw)[None, None, :] + kx.reshape(K, 1, 1)
    off = offsets.data.reshape(N, K, 2, oh, ow)
    w2 = weight.data.reshape(Co, C * K)
    samplers = []
    per_image = []
    for n in range(N):
        xs = (base_x + off[n, :, 0]).astype(dt)
        ys = (base_y + off[n, :, 1]).astype(dt)
        bl = _Bilinear(xs, ys, H, W)
        flat = x.data[n].reshape(C, H * W)
        per_image.append(bl.sample(flat).reshape(C * K, oh * ow).astype(dt))
        samplers.append(bl)
    # one GEMM over the whole batch, laid out like conv2d's columns
    cols = np.concatenate(per_image, axis=1)
    out = (w2 @ cols).reshape(Co, N, oh, ow)
    if bias is not None:
        out += bias.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def vjp(g):
        gx = np.zeros_like(x.data) if x.requires_grad else None
        goff = np.zeros_like(offsets.data) if offsets.requires_grad else None
        g2 = g.transpose(1, 0, 2, 3).reshape(Co, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        if gx is not None or goff is not None:
            gcols_all = (w2.T @ g2).reshape(C, K, N, oh, ow)
            for n in range(N):
                gcols = np.ascontiguousarray(gcols_all[:, :, n])
                bl = samplers[n]
                if gx is not None:
                    gx[n] = bl.scatter(gcols, C, H * W).reshape(C, H, W)
                if goff is not None:
                    cx, cy = bl.coord_grads(x.data[n].reshape(C, H * W), gcols)
                    go = goff[n].reshape(K, 2, oh, ow)
                    go[:, 0] = cx
                    go[:, 1] = cy
        return gx, goff, gw, gb

    inputs = (x, offsets, weight) if bias is None else (x, offsets, weight, bias)
    return make_node("deformable_conv2d", out, inputs, vjp)


# ----------------------------------------------------------------------------
# position-sensitive ROI pooling


@dataclass(frozen=True)
class PsMapSpec:
    k: int = 7
    channels_per_bin: int = 1

    @property
    def channels(self) -> int:
        return self.k * self.k * self.channels_per_bin


def _rois_array(rois) -> tuple:
    """Accept one box (x0,y0,x1,y1) or an (R,4+) array; returns (array, was_single)."""
    arr = np.asarray(getattr(rois, "as_array", lambda: rois)(), dtype=np.float64)
    single = arr.ndim == 1
    arr = arr.reshape(-1, arr.shape[-1])[:, :4]
    if np.any(arr[:, 2] <= arr[:, 0]) or np.any(arr[:, 3] <= arr[:, 1]):
        raise ValueError("degenerate ROI: need x_max > x_min and y_max > y_min")
    return arr, single


def deformable_psroi_pool(maps: Tensor, rois, offsets: Optional[Tensor], spec: PsMapSpec,
                          gamma: float = 0.1, out_size: Optional[int] = None) -> Tensor:
    """Position-sensitive ROI pooling with optional learned per-bin offsets.

    ``maps`` is (C,H,W) or (1,C,H,W) with C = k*k*channels_per_bin, channel
    ``(i*k + j) * channels_per_bin + c`` feeding bin (i, j). ``rois`` are in map
    coordinates. Each output cell averages a fixed 2x2 bilinear sub-grid.
    ``offsets`` (R,2,k,k) are normalised; the pixel shift of bin (i,j) is
    ``gamma * offsets[:, :, i, j] * (roi_w, roi_h)``. ``out_size`` (a multiple of
    k, default k) refines the output grid; every cell still reads the channel
    group and offset of the bin containing it.

    Returns (R, channels_per_bin, out, out), or without the R axis for a single ROI.
    """
    if maps.ndim == 4:
        if maps.shape[0] != 1:
            raise ValueError("pooling works on a single image")
        mt = maps
        C, H, W = maps.shape[1:]
    elif maps.ndim == 3:
        mt = maps
        C, H, W = maps.shape
    else:
        raise ValueError(f"maps must be (C,H,W), got {maps.shape}")
    k, cpb = spec.k, spec.channels_per_bin
    if C != k * k * cpb:
        raise ValueError(f"maps have {C} channels, expected k*k*channels_per_bin = {k * k * cpb}")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    O = k if out_size is None else int(out_size)
    if O % k:
        raise ValueError(f"out_size {O} is not a multiple of k={k}")
    m = O // k
    boxes, single = _rois_array(rois)
    R = boxes.shape[0]
    if offsets is not None and offsets.shape != (R, 2, k, k):
        raise ValueError(f"offset shape {offsets.shape} != {(R, 2, k, k)}")

    dt = maps.dtype
    x0, y0 = boxes[:, 0], boxes[:, 1]
    rw = boxes[:, 2] - boxes[:, 0]
    rh = boxes[:, 3] - boxes[:, 1]
    sub = (np.arange(2) + 0.5) / 2.0
    # cell-local sample positions, (O, 2)
    frac = (np.arange(O)[:, None] + sub[None, :]) / O
    ys = y0[:, None, None, None, None] + rh[:, None, None, None, None] * frac[None, :, None, :, None]
    xs = x0[:, None, None, None, None] + rw[:, None, None, None, None] * frac[None, None, :, None, :]
    ys, xs = np.broadcast_arrays(ys, xs)  # (R, O, O, 2, 2)
    bin_of = np.arange(O) // m
    if offsets is not None:
        off = offsets.data.astype(np.float64)
        ox = gamma * off[:, 0] * rw[:, None, None]  # (R,k,k)
        oy = gamma * off[:, 1] * rh[:, None, None]
        xs = xs + ox[:, bin_of][:, :, bin_of][..., None, None]
        ys = ys + oy[:, bin_of][:, :, bin_of][..., None, None]
    xs = np.ascontiguousarray(xs, dtype=dt)
    ys = np.ascontiguousarray(ys, dtype=dt)
    bl = _Bilinear(xs, ys, H, W)
    group = (bin_of[:, None] * k + bin_of[None, :])  # (O,O)
    # channel offset per sample: (cpb, 1, O, O, 1, 1) added to pixel index
    chan = (group[None] * cpb + np.arange(cpb)[:, None, None]) * (H * W)
    chan = chan[:, None, :, :, None, None]
    flat = mt.data.reshape(-1)
    out = 0
    for idx, w in zip(bl.idx, bl.w):
        out = out + flat[chan + idx[None]] * w[None]
    out = (out.sum(axis=(-1, -2)) * 0.25).astype(dt)  # (cpb, R, O, O)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    result = out[0] if single else out

    def vjp(g):
        g = g.reshape(R, cpb, O, O).transpose(1, 0, 2, 3)[..., None, None] * 0.25
        gmaps = None
        if mt.requires_grad:
            index = np.concatenate([(chan + idx[None]).reshape(-1) for idx in bl.idx])
            weights = np.concatenate([np.broadcast_to(g * w[None], (cpb,) + w.shape).reshape(-1)
                                      for w in bl.w])
            gmaps = np.bincount(index, weights=weights, minlength=C * H * W)
            gmaps = gmaps.reshape(mt.shape).astype(dt)
        goff = None
        if offsets is not None and offsets.requires_grad:
            gxs = 0
            gys = 0
            for idx, dwx, dwy in zip(bl.idx, bl.dwx, bl.dwy):
                v = (flat[chan + idx[None]] * g).sum(axis=0)
                gxs = gxs + v * dwx
                gys = gys + v * dwy
            # reduce (R,O,O,2,2) -> (R,k,k)
            gxs = gxs.sum(axis=(-1, -2)).reshape(R, k, m, k, m).sum(axis=(2, 4))
            gys = gys.sum(axis=(-1, -2)).reshape(R, k, m, k, m).sum(axis=(2, 4))
            goff = np.stack([gxs * gamma * rw[:, None, None], gys * gamma * rh[:, None, None]], axis=1)
            goff = goff.astype(offsets.dtype)
        return (gmaps, goff) if offsets is not None else (gmaps,)

    inputs = (mt, offsets) if offsets is not None else (mt,)
    return make_node("deformable_psroi_pool" if offsets is not None else "psroi_pool",
                     result, inputs, vjp)


def psroi_pool(maps: Tensor, rois, spec: PsMapSpec, out_size: Optional[int] = None) -> Tensor:
    """Position-sensitive ROI pooling: bin (i, j) averages its own channel group."""
    return deformable_psroi_pool(maps, rois, None, spec, out_size=out_size)


# ----------------------------------------------------------------------------
# upsampling


def _interp_matrix(n: int, dtype) -> np.ndarray:
    """(2n, n) linear interpolation, half-pixel centres, edge-clamped."""
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0, n - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    t = src - lo
    M = np.zeros((2 * n, n), dtype=np.float64)
    M[np.arange(2 * n), lo] += 1 - t
    M[np.arange(2 * n), hi] += t
    return M.astype(dtype)


def upsample2x(x: Tensor, mode: str = "bilinear") -> Tensor:
    """Double H and W by pixel replication or by linear interpolation between pixel centres."""
    if x.ndim != 4:
        raise ValueError(f"upsample2x expects (N,C,H,W), got {x.shape}")
    N, C, H, W = x.shape
    if mode == "nearest":
        out = x.data.repeat(2, axis=2).repeat(2, axis=3)

        def vjp(g):
            return (g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)),)

        return make_node("upsample2x", out, (x,), vjp)
    if mode != "bilinear":
        raise ValueError(f"unknown upsample mode {mode!r}")
    My = _interp_matrix(H, x.dtype)
    Mx = _interp_matrix(W, x.dtype)
    out = np.matmul(np.matmul(My, x.data), Mx.T)

    def vjp(g):
        return (np.matmul(np.matmul(My.T, g), Mx),)

    return make_node("upsample2x", out, (x,), vjp)


# ----------------------------------------------------------------------------
# losses (mean-reduced)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean over rows of -log softmax(logits)[target]."""
    if logits.ndim != 2:
        raise ValueError(f"logits must be (N, classes), got {logits.shape}")
    t = np.asarray(target)
    if t.shape != (logits.shape[0],) or t.dtype.kind not in "iu":
        raise ValueError("targets must be one integer class index per row")
    if t.size and (t.min() < 0 or t.max() >= logits.shape[1]):
        raise ValueError("class index out of range")
    n = max(logits.shape[0], 1)
    logp = _log_softmax(logits.data)
    rows = np.arange(logits.shape[0])
    loss = -logp[rows, t].sum() / n

    def vjp(g):
        p = np.exp(logp)
        p[rows, t] -= 1
        return (p * (g / n),)

    return make_node("softmax_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), vjp)


def smooth_l1(pred: Tensor, target, beta: float = 1.0) -> Tensor:
    """Huber-style loss summed over the last axis and averaged over rows."""
    t = np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"target shape {t.shape} != prediction shape {pred.shape}")
    d = pred.data - t
    ad = np.abs(d)
    quad = ad < beta
    per = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    n = max(pred.shape[0], 1) if pred.ndim > 1 else 1
    loss = per.sum() / n

    def vjp(g):
        return (np.where(quad, d / beta, np.sign(d)) * (g / n),)

    return make_node("smooth_l1", np.asarray(loss, dtype=pred.dtype), (pred,), vjp)


def binary_cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean sigmoid cross-entropy; ``logits`` are pre-sigmoid scores."""
    t = np.asarray(target, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ValueError(f"target shape {t.shape} != prediction shape {logits.shape}")
    if t.size and (t.min() < 0 or t.max() > 1):
        raise ValueError("binary targets must lie in [0, 1]")
    z = logits.data
    n = max(z.size, 1)
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    loss = per.sum() / n

    def vjp(g):
        return ((sigmoid(z) - t) * (g / n),)

    return make_node("binary_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), vjp)


def sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(z))


LOSSES = {
    "softmax_cross_entropy": softmax_cross_entropy,
    "smooth_l1": smooth_l1,
    "binary_cross_entropy": binary_cross_entropy,
}


def loss_primitives(kind: str, pred: Tensor, target) -> Tensor:
    try:
        fn = LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss kind {kind!r}") from None
    return fn(pred, target)


__all__: Sequence[str] = [
    "ConvSpec", "PsMapSpec", "conv2d", "conv2d_spec", "factorized_conv", "bilinear_sample",
    "deformable_conv2d", "psroi_pool", "deformable_psroi_pool", "upsample2x",
    "softmax_cross_entropy", "smooth_l1", "binary_cross_entropy", "loss_primitives",
    "sigmoid", "softmax",
]
