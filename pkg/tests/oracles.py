"""Brute-force reference implementations shared by the unit and acceptance tests.

Everything here is written with plain loops or direct formulas and shares no
code with the package, except that the NMS reference reuses polygon_iou
(checked separately against the Monte-Carlo estimate below).
"""
import math

import numpy as np

from inceptext.geometry import polygon_iou


def naive_conv(x, w, b, stride, pad, dil):
    N, C, H, W = x.shape
    Co, _, kh, kw = w.shape
    oh = (H + 2 * pad - dil * (kh - 1) - 1) // stride + 1
    ow = (W + 2 * pad - dil * (kw - 1) - 1) // stride + 1
    out = np.zeros((N, Co, oh, ow))
    for n in range(N):
        for o in range(Co):
            for i in range(oh):
                for j in range(ow):
                    acc = b[o] if b is not None else 0.0
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                y = i * stride - pad + u * dil
                                xx = j * stride - pad + v * dil
                                if 0 <= y < H and 0 <= xx < W:
                                    acc += w[o, c, u, v] * x[n, c, y, xx]
                    out[n, o, i, j] = acc
    return out


def ref_bilinear(img, x, y):
    """img (H,W); zero outside the grid, per neighbour."""
    H, W = img.shape
    x0, y0 = math.floor(x), math.floor(y)
    total = 0.0
    for yy in (y0, y0 + 1):
        for xx in (x0, x0 + 1):
            if 0 <= yy < H and 0 <= xx < W:
                total += (1 - abs(x - xx)) * (1 - abs(y - yy)) * img[yy, xx]
    return total


def ref_deform_conv(x, off, w, b, pad):
    N, C, H, W = x.shape
    Co, _, kh, kw = w.shape
    oh, ow = off.shape[2:]
    out = np.zeros((N, Co, oh, ow))
    for n in range(N):
        for i in range(oh):
            for j in range(ow):
                for o in range(Co):
                    acc = b[o]
                    for u in range(kh):
                        for v in range(kw):
                            t = u * kw + v
                            sx = j - pad + v + off[n, 2 * t, i, j]
                            sy = i - pad + u + off[n, 2 * t + 1, i, j]
                            for c in range(C):
                                acc += w[o, c, u, v] * ref_bilinear(x[n, c], sx, sy)
                    out[n, o, i, j] = acc
    return out


def ref_deformable_psroi(maps, roi, offsets, k, cpb, gamma):
    """r_c(i,j) = sum over the bin's sample points of z_{i,j}(p + p0 + shift) / n, n = 4."""
    x0, y0, x1, y1 = roi
    rw, rh = x1 - x0, y1 - y0
    out = np.zeros((cpb, k, k))
    for i in range(k):
        for j in range(k):
            dx = dy = 0.0
            if offsets is not None:
                dx = gamma * offsets[0, i, j] * rw
                dy = gamma * offsets[1, i, j] * rh
            for c in range(cpb):
                z = maps[(i * k + j) * cpb + c]
                acc = 0.0
                for a in (0.25, 0.75):
                    for bb in (0.25, 0.75):
                        px = x0 + (j + bb) * rw / k + dx
                        py = y0 + (i + a) * rh / k + dy
                        acc += ref_bilinear(z, px, py)
                out[c, i, j] = acc / 4
    return out


def _inside(points, poly):
    # half-plane test written out independently of the library
    p = np.asarray(poly, dtype=np.float64)
    area2 = np.sum(p[:, 0] * np.roll(p[:, 1], -1) - np.roll(p[:, 0], -1) * p[:, 1])
    if area2 < 0:
        p = p[::-1]
    ok = np.ones(len(points), dtype=bool)
    for a, b in zip(p, np.roll(p, -1, axis=0)):
        ok &= (b[0] - a[0]) * (points[:, 1] - a[1]) - (b[1] - a[1]) * (points[:, 0] - a[0]) >= 0
    return ok


def mc_iou(a, b, n, rng):
    both = np.vstack([a, b])
    lo, hi = both.min(0), both.max(0)
    pts = rng.uniform(lo, hi, size=(n, 2))
    ia, ib = _inside(pts, a), _inside(pts, b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def brute_min_rect_area(points):
    """Every point pair defines a candidate direction; hull edges are among them."""
    pts = np.asarray(points, dtype=np.float64)
    best = np.inf
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            d = pts[j] - pts[i]
            n = np.hypot(*d)
            if n < 1e-12:
                continue
            u = d / n
            v = np.array([-u[1], u[0]])
            pu, pv = pts @ u, pts @ v
            best = min(best, (pu.max() - pu.min()) * (pv.max() - pv.min()))
    return best


def ref_nms(quads, scores, thr):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(polygon_iou(quads[i], quads[k]) <= thr for k in kept):
            kept.append(i)
    return kept
