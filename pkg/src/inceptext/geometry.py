"""Polygon IoU, quad NMS, mask merging and min-area rectangle extraction.

Coordinates are image pixels with y pointing down, so a quad listed
clockwise on screen has positive shoelace area.
"""
from __future__ import annotations

import math
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

from .structures import Detection, RoiBox

EPS = 1e-9


def signed_area(poly) -> float:
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(poly) -> float:
    """Absolute shoelace area."""
    p = np.asarray(poly, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 3:
        raise ValueError("polygon needs at least 3 vertices")
    return abs(signed_area(p))


def is_convex(poly) -> bool:
    p = np.asarray(poly, dtype=np.float64)
    n = len(p)
    sign = 0
    for i in range(n):
        a, b, c = p[i], p[(i + 1) % n], p[(i + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) < EPS:
            continue
        s = 1 if cross > 0 else -1
        if sign and s != sign:
            return False
        sign = s
    return sign != 0


def canonical_quad(quad) -> np.ndarray:
    """Clockwise order starting at the vertex with the smallest x + y."""
    q = np.asarray(quad, dtype=np.float64).reshape(4, 2)
    if signed_area(q) < 0:
        q = q[::-1]
    start = int(np.argmin(q[:, 0] + q[:, 1]))
    return np.roll(q, -start, axis=0).copy()


def validate_quad(quad) -> np.ndarray:
    q = np.asarray(quad, dtype=np.float64)
    if q.shape != (4, 2) or not np.all(np.isfinite(q)):
        raise ValueError(f"quad must be 4 finite (x, y) points, got shape {q.shape}")
    if polygon_area(q) <= 0 or not is_convex(q):
        raise ValueError("quad must be convex, non-self-intersecting and of positive area")
    return q


def _ccw(poly: np.ndarray) -> np.ndarray:
    """Clockwise-on-screen (positive area) orientation used by the clipper."""
    return poly if signed_area(poly) >= 0 else poly[::-1]


def clip_polygon(subject, clip) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by convex ``clip``."""
    out = [tuple(p) for p in _ccw(np.asarray(subject, dtype=np.float64))]
    c = _ccw(np.asarray(clip, dtype=np.float64))
    n = len(c)
    for i in range(n):
        if not out:
            break
        ax, ay = c[i]
        bx, by = c[(i + 1) % n]

        def side(p):
            # >= 0 means inside for positive-area orientation
            return (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax)

        inp = out
        out = []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
            prev, sp = cur, sc
    if not out:
        return np.zeros((0, 2))
    pts = [out[0]]
    for p in out[1:]:
        if abs(p[0] - pts[-1][0]) > EPS or abs(p[1] - pts[-1][1]) > EPS:
            pts.append(p)
    if len(pts) > 1 and abs(pts[0][0] - pts[-1][0]) <= EPS and abs(pts[0][1] - pts[-1][1]) <= EPS:
        pts.pop()
    return np.asarray(pts, dtype=np.float64)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def polygon_iou(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    area_a = polygon_area(a)
    area_b = polygon_area(b)
    if (a.min(0) > b.max(0)).any() or (b.min(0) > a.max(0)).any():
        return 0.0
    inter_poly = clip_polygon(a, b)
    inter = polygon_area(inter_poly) if len(inter_poly) >= 3 else 0.0
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def nms_quads(quads: Sequence, scores: Sequence[float], iou_threshold: float):
    """Greedy NMS by descending score (stable on ties).

    Returns ``(kept, suppressed)`` where ``kept`` lists indices in score
    order and ``suppressed`` maps each suppressed index to the kept index that
    removed it. A candidate is suppressed when its IoU exceeds the threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    order = np.argsort(-scores, kind="stable")
    kept: list[int] = []
    suppressed: dict[int, int] = {}
    for i in order:
        i = int(i)
        if i in suppressed:
            continue
        kept.append(i)
        for j in order:
            j = int(j)
            if j == i or j in suppressed or j in kept:
                continue
            if polygon_iou(quads[i], quads[j]) > iou_threshold:
                suppressed[j] = i
    return kept, suppressed


# ----------------------------------------------------------------------------
# masks


def resample_mask(mask: np.ndarray, src: RoiBox, dst: RoiBox, size: int) -> np.ndarray:
    """Bilinearly resample a mask defined over ``src`` onto a size x size grid over ``dst``.

    Cells falling outside ``src`` read 0.
    """
    m = np.asarray(mask, dtype=np.float64)
    mh, mw = m.shape
    centres = (np.arange(size) + 0.5) / size
    xs = dst.x_min + centres * dst.width
    ys = dst.y_min + centres * dst.height
    # continuous index in src mask where cell c is centred at c
    u = (xs - src.x_min) / src.width * mw - 0.5
    v = (ys - src.y_min) / src.height * mh - 0.5
    uu, vv = np.meshgrid(u, v)
    x0 = np.floor(uu).astype(int)
    y0 = np.floor(vv).astype(int)
    lx = uu - x0
    ly = vv - y0
    inside = (uu >= -0.5) & (uu <= mw - 0.5) & (vv >= -0.5) & (vv <= mh - 0.5)
    out = np.zeros((size, size))
    for dy, wy in ((0, 1 - ly), (1, ly)):
        for dx, wx in ((0, 1 - lx), (1, lx)):
            yy = np.clip(y0 + dy, 0, mh - 1)
            xx = np.clip(x0 + dx, 0, mw - 1)
            out += wy * wx * m[yy, xx]
    return np.where(inside, out, 0.0)


def merge_similar_masks(kept: Detection, suppressed: Iterable[Detection], iou_min: float = 0.5) -> np.ndarray:
    """Score-weighted pixelwise average of the kept mask and its similar boxes' masks.

    Similar boxes are suppressed ones whose ROI overlaps the kept ROI with
    IoU >= ``iou_min``; their masks are resampled into the kept ROI frame first.
    """
    size = kept.mask.shape[0]
    acc = kept.score * np.asarray(kept.mask, dtype=np.float64)
    total = kept.score
    kq = kept.roi.as_quad()
    for det in suppressed:
        if polygon_iou(kq, det.roi.as_quad()) < iou_min:
            continue
        acc = acc + det.score * resample_mask(det.mask, det.roi, kept.roi, size)
        total += det.score
    if total <= 0:
        return np.asarray(kept.mask, dtype=np.float64).copy()
    return acc / total


# ----------------------------------------------------------------------------
# hull and rotating calipers


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices with positive (clockwise-on-screen) area."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    return hull


def min_area_rect(points) -> tuple:
    """Minimum-area enclosing rectangle by rotating calipers.

    Returns ``(corners (4,2), area)``. Needs at least 3 non-collinear points.
    """
    hull = convex_hull(points)
    n = len(hull)
    if n < 3:
        raise ValueError("need 3 non-collinear points")
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    dirs = edges / lengths[:, None]

    def proj(i, d):
        return hull[i % n] @ d

    # caliper pointers: farthest along edge dir, farthest from edge, farthest against edge dir
    best = (math.inf, None)
    j = k = l = None
    for i in range(n):
        u = dirs[i]
        v = np.array([-u[1], u[0]])  # inward normal for positive-area hulls is +v or -v; use |.|
        if j is None:
            j = int(np.argmax(hull @ u))
            k = int(np.argmax(np.abs((hull - hull[i]) @ v)))
            l = int(np.argmin(hull @ u))
        while proj(j + 1, u) > proj(j, u) + EPS:
            j += 1
        while abs((hull[(k + 1) % n] - hull[i]) @ v) > abs((hull[k % n] - hull[i]) @ v) + EPS:
            k += 1
        while proj(l + 1, u) < proj(l, u) - EPS:
            l += 1
        umax = proj(j, u)
        umin = proj(l, u)
        vs = (hull[k % n] - hull[i]) @ v
        v0 = hull[i] @ v
        vlo, vhi = (v0, v0 + vs) if vs >= 0 else (v0 + vs, v0)
        area = (umax - umin) * (vhi - vlo)
        if area < best[0]:
            corners = np.array([umin * u + vlo * v, umax * u + vlo * v,
                                umax * u + vhi * v, umin * u + vhi * v])
            best = (area, corners)
    return best[1], best[0]


def min_area_quadrilateral(mask: np.ndarray, roi: RoiBox, binarize_threshold: float = 0.5,
                           expand: bool = False) -> np.ndarray:
    """Oriented rectangle around a mask's foreground, in image coordinates.

    Foreground cells are those above the threshold; their centres, mapped from
    the ROI frame to the image, are enclosed by the minimum-area rectangle.
    With ``expand`` each side is pushed out by half a mask cell so the
    rectangle covers whole cells rather than their centres. Two or fewer
    distinct points (or a collinear set) yield the axis-aligned bounding box
    grown to at least one pixel per side.
    """
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("mask must be a non-empty 2-D grid")
    rows, cols = np.nonzero(m > binarize_threshold)
    if rows.size == 0:
        raise ValueError("no instance: mask has no foreground above threshold")
    mh, mw = m.shape
    cw = roi.width / mw
    ch = roi.height / mh
    pts = np.stack([roi.x_min + (cols + 0.5) * cw, roi.y_min + (rows + 0.5) * ch], axis=1)
    hull = convex_hull(pts)
    if len(hull) < 3 or polygon_area(hull) < EPS:
        lo = pts.min(0)
        hi = pts.max(0)
        if expand:
            lo = lo - 0.5 * np.array([cw, ch])
            hi = hi + 0.5 * np.array([cw, ch])
        centre = 0.5 * (lo + hi)
        half = np.maximum(0.5 * (hi - lo), 0.5)
        lo, hi = centre - half, centre + half
        rect = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
        return canonical_quad(rect)
    rect, _ = min_area_rect(hull)
    if expand:
        c = rect.mean(0)
        e1 = rect[1] - rect[0]
        e2 = rect[3] - rect[0]
        u = e1 / np.linalg.norm(e1)
        v = e2 / np.linalg.norm(e2)
        su = 0.5 * (abs(u[0]) * cw + abs(u[1]) * ch)
        sv = 0.5 * (abs(v[0]) * cw + abs(v[1]) * ch)
        hu = 0.5 * np.linalg.norm(e1) + su
        hv = 0.5 * np.linalg.norm(e2) + sv
        rect = np.array([c - hu * u - hv * v, c + hu * u - hv * v, c + hu * u + hv * v, c - hu * u + hv * v])
    return canonical_quad(rect)


def clip_quad(quad, width: float, height: float) -> np.ndarray:
    q = np.asarray(quad, dtype=np.float64).copy()
    q[:, 0] = np.clip(q[:, 0], 0, width)
    q[:, 1] = np.clip(q[:, 1], 0, height)
    return q


def point_in_convex(points, poly, slack: float = 0.0) -> np.ndarray:
    """Boolean per point: inside (or within ``slack`` of) a convex polygon."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    c = _ccw(np.asarray(poly, dtype=np.float64))
    ok = np.ones(len(p), dtype=bool)
    for i in range(len(c)):
        a, b = c[i], c[(i + 1) % len(c)]
        e = b - a
        cross = e[0] * (p[:, 1] - a[1]) - e[1] * (p[:, 0] - a[0])
        ok &= cross >= -slack * np.hypot(*e)
    return ok


# ----------------------------------------------------------------------------
# detection file format: "x1,y1,...,x4,y4,score" per line; '#' lines are comments


def format_detection_line(quad, score: float) -> str:
    q = np.asarray(quad, dtype=np.float64).reshape(-1)
    vals = list(q) + [float(score)]
    # shortest round-tripping decimal, so a reparse gives back the same floats
    return ",".join(np.format_float_positional(float(v), unique=True, trim="-") for v in vals)


def write_detections(path, items, header: Sequence[str] = ()) -> None:
    """Atomically write (quad, score) pairs or Detections."""
    lines = [f"# {h}" for h in header]
    for it in items:
        quad, score = (it.quad, it.score) if isinstance(it, Detection) else it
        lines.append(format_detection_line(quad, score))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_detections(path) -> list:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 9:
                raise ValueError(f"{path}:{n}: expected 9 comma-separated values, got {len(parts)}")
            vals = [float(p) for p in parts]
            out.append((np.array(vals[:8]).reshape(4, 2), vals[8]))
    return out


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
