"""Two-stage detector: RPN on fused map A, position-sensitive heads on fused map B.

The heads pool classification, box and mask score maps through (deformable)
PSROI pooling. Training combines five loss terms
``L = L_rcls + L_rbox + L_cls + L_box + lambda_m * L_mask`` with OHEM on the
ROI stage; inference merges similar masks and fits oriented rectangles.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from . import boxes as bx
from . import geometry as geo
from . import ops
from .network import BackboneConfig, Params, fused_backbone_forward, init_backbone
from .structures import Detection, RoiBox
from .tensor import Tensor, add, mean, no_grad, relu, reshape, scale, take, transpose


@dataclass(frozen=True)
class DetectorConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    k: int = 7
    mask_size: int = 28
    gamma: float = 0.1
    deformable_psroi: bool = True
    head_channels: int = 64
    lambda_m: float = 2.0
    anchor_scales: tuple = bx.ANCHOR_SCALES
    anchor_ratios: tuple = bx.ANCHOR_RATIOS
    rpn_pos_iou: float = 0.7
    rpn_neg_iou: float = 0.3
    rpn_batch: int = 256
    rpn_pos_fraction: float = 0.5
    train_proposals: bx.ProposalConfig = field(default_factory=bx.ProposalConfig)
    test_proposals: bx.ProposalConfig = field(default_factory=bx.ProposalConfig)
    roi_pos_iou: float = 0.5
    ohem_keep: int = 128
    bbox_stds: tuple = (1.0, 1.0, 1.0, 1.0)
    score_threshold: float = 0.5
    nms_iou: float = 0.5
    final_nms_iou: float = 0.5
    similar_iou: float = 0.5
    mask_threshold: float = 0.5

    @property
    def stride(self) -> int:
        return self.backbone.feature_stride

    @property
    def num_anchors(self) -> int:
        return len(self.anchor_scales) * len(self.anchor_ratios)

    def ablated(self) -> "DetectorConfig":
        """Same detector with every deformable op replaced by its plain counterpart."""
        return replace(self, deformable_psroi=False, backbone=replace(self.backbone, deformable=False))


@dataclass
class LossBreakdown:
    l_rcls: float
    l_rbox: float
    l_cls: float
    l_box: float
    l_mask: float
    lambda_m: float = 2.0
    total: float = 0.0
    tensor: Optional[Tensor] = field(default=None, repr=False)

    def identity_holds(self) -> bool:
        return self.total == self.l_rcls + self.l_rbox + self.l_cls + self.l_box + self.lambda_m * self.l_mask

    def as_dict(self) -> dict:
        return {"l_rcls": self.l_rcls, "l_rbox": self.l_rbox, "l_cls": self.l_cls, "l_box": self.l_box,
                "l_mask": self.l_mask, "total": self.total}


@dataclass
class LossTargets:
    """Row selections and targets for each term; empty selections give a 0 term."""

    rpn_index: np.ndarray
    rpn_labels: np.ndarray
    rpn_box_index: np.ndarray
    rpn_box_targets: np.ndarray
    roi_index: np.ndarray
    roi_labels: np.ndarray
    box_index: np.ndarray
    box_targets: np.ndarray
    mask_index: np.ndarray
    mask_targets: np.ndarray


def compute_loss(predictions: Dict[str, Tensor], targets: LossTargets, lambda_m: float = 2.0) -> LossBreakdown:
    """Evaluate the five mean-reduced terms and their weighted total.

    ``predictions`` holds rpn_logits (A,2), rpn_deltas (A,4), cls_logits (R,2),
    box_deltas (R,4) and mask_logits (P, M*M).
    """
    terms = []
    specs = [
        ("rpn_logits", targets.rpn_index, targets.rpn_labels, ops.softmax_cross_entropy),
        ("rpn_deltas", targets.rpn_box_index, targets.rpn_box_targets, ops.smooth_l1),
        ("cls_logits", targets.roi_index, targets.roi_labels, ops.softmax_cross_entropy),
        ("box_deltas", targets.box_index, targets.box_targets, ops.smooth_l1),
        ("mask_logits", targets.mask_index, targets.mask_targets, ops.binary_cross_entropy),
    ]
    for key, index, target, fn in specs:
        index = np.asarray(index, dtype=np.int64)
        if index.size == 0:
            terms.append(None)
            continue
        terms.append(fn(take(predictions[key], index), target))
    values = [0.0 if t is None else t.item() for t in terms]
    l_rcls, l_rbox, l_cls, l_box, l_mask = values
    total = l_rcls + l_rbox + l_cls + l_box + lambda_m * l_mask
    tensor = None
    weighted = terms[:4] + [None if terms[4] is None else scale(terms[4], lambda_m)]
    for t in weighted:
        if t is not None:
            tensor = t if tensor is None else add(tensor, t)
    return LossBreakdown(l_rcls, l_rbox, l_cls, l_box, l_mask, lambda_m, total, tensor)


def ohem_select(per_roi_losses, n_keep: int) -> np.ndarray:
    """Indices of the n_keep largest losses (lower index wins ties), in ascending index order."""
    if n_keep <= 0:
        raise ValueError("n_keep must be positive")
    losses = np.asarray(per_roi_losses, dtype=np.float64)
    order = np.argsort(-losses, kind="stable")[:n_keep]
    return np.sort(order)


def _ce_rows(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    return lse - z[np.arange(len(z)), labels]


def _smooth_l1_rows(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    d = np.abs(pred.astype(np.float64) - target)
    return np.where(d < 1, 0.5 * d * d, d - 0.5).sum(axis=1)


def _bce_rows(logits: np.ndarray, target: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    return (np.maximum(z, 0) - z * target + np.log1p(np.exp(-np.abs(z)))).mean(axis=1)


class IncepText:
    """Parameters plus the forward passes for training and inference."""

    def __init__(self, config: DetectorConfig = DetectorConfig(), params: Optional[Params] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self._anchor_cache: dict = {}

    # -- building blocks -------------------------------------------------

    def anchors(self, fh: int, fw: int) -> np.ndarray:
        key = (fh, fw)
        if key not in self._anchor_cache:
            c = self.config
            a = bx.generate_anchors(fh, fw, c.stride, c.anchor_scales, c.anchor_ratios)
            self._anchor_cache[key] = bx.cxcywh_to_xyxy(a)
        return self._anchor_cache[key]

    def features(self, image: np.ndarray) -> tuple:
        x = Tensor((np.asarray(image, dtype=np.float32) - np.float32(0.5))[None])
        return fused_backbone_forward(x, self.params, self.config.backbone)

    def rpn(self, fmap: Tensor) -> tuple:
        p = self.params
        A = self.config.num_anchors
        _, _, fh, fw = fmap.shape
        h = relu(ops.conv2d(fmap, p["rpn.conv.w"], p["rpn.conv.b"], pad=1))
        cls = ops.conv2d(h, p["rpn.cls.w"], p["rpn.cls.b"])
        box = ops.conv2d(h, p["rpn.box.w"], p["rpn.box.b"])
        cls = reshape(transpose(reshape(cls, (A, 2, fh, fw)), (2, 3, 0, 1)), (fh * fw * A, 2))
        box = reshape(transpose(reshape(box, (A, 4, fh, fw)), (2, 3, 0, 1)), (fh * fw * A, 4))
        return cls, box

    def head_maps(self, fmap: Tensor) -> dict:
        p = self.params
        h = relu(ops.conv2d(fmap, p["head.pre.w"], p["head.pre.b"], pad=1))
        maps = {name: ops.conv2d(h, p[f"head.{name}.w"], p[f"head.{name}.b"]) for name in ("cls", "box", "mask")}
        if self.config.deformable_psroi:
            maps["offset"] = ops.conv2d(h, p["head.offset.w"], p["head.offset.b"])
        return maps

    def _map_rois(self, rois: np.ndarray) -> np.ndarray:
        return np.asarray(rois, dtype=np.float64) / self.config.stride - 0.5

    def pool_offsets(self, maps: dict, rois: np.ndarray) -> Optional[Tensor]:
        if "offset" not in maps:
            return None
        return ops.psroi_pool(maps["offset"], self._map_rois(rois), ops.PsMapSpec(self.config.k, 2))

    def pool_cls_box(self, maps: dict, rois: np.ndarray, offsets: Optional[Tensor]) -> tuple:
        c = self.config
        r = self._map_rois(rois)
        cls = ops.deformable_psroi_pool(maps["cls"], r, offsets, ops.PsMapSpec(c.k, 2), c.gamma)
        box = ops.deformable_psroi_pool(maps["box"], r, offsets, ops.PsMapSpec(c.k, 4), c.gamma)
        return mean(cls, axis=(2, 3)), mean(box, axis=(2, 3))

    def pool_mask(self, maps: dict, rois: np.ndarray, offsets: Optional[Tensor]) -> Tensor:
        c = self.config
        m = ops.deformable_psroi_pool(maps["mask"], self._map_rois(rois), offsets, ops.PsMapSpec(c.k, 1),
                                      c.gamma, out_size=c.mask_size)
        return reshape(m, (m.shape[0], c.mask_size * c.mask_size))

    # -- training --------------------------------------------------------

    def loss(self, image: np.ndarray, quads, rng: np.random.Generator) -> LossBreakdown:
        c = self.config
        _, H, W = image.shape
        gt = np.array([bx.quad_to_box(q) for q in quads]).reshape(-1, 4)
        gt = bx.clip_boxes(gt, H, W)
        fa, fb = self.features(image)
        anchors = self.anchors(*fa.shape[2:])
        rpn_logits, rpn_deltas = self.rpn(fa)
        labels, dtargets = bx.assign_rpn_targets(anchors, gt, c.rpn_pos_iou, c.rpn_neg_iou)
        rpn_idx = bx.sample_labels(labels, c.rpn_batch, c.rpn_pos_fraction, rng)
        rpn_pos = rpn_idx[labels[rpn_idx] == bx.POSITIVE]

        with no_grad():
            scores = ops.softmax(rpn_logits.data)[:, 1]
        props, _ = bx.select_proposals(scores, rpn_deltas.data, anchors, (H, W), c.train_proposals)
        rois = np.concatenate([props, gt], axis=0)
        roi_labels, match, best = bx.assign_roi_targets(rois, gt, c.roi_pos_iou)
        pos = np.nonzero(roi_labels)[0]
        assert np.all(best[pos] >= c.roi_pos_iou), "positive ROI below the IoU threshold"

        maps = self.head_maps(fb)
        offsets = self.pool_offsets(maps, rois)
        cls_logits, box_deltas = self.pool_cls_box(maps, rois, offsets)
        stds = np.asarray(c.bbox_stds)
        box_t = bx.encode(gt[match[pos]], rois[pos]) / stds if pos.size else np.zeros((0, 4))
        if pos.size:
            mask_logits = self.pool_mask(maps, rois[pos], None if offsets is None else take(offsets, pos))
            mask_t = np.stack([bx.rasterize_quad_mask(quads[match[i]], rois[i], c.mask_size).reshape(-1)
                               for i in pos])
        else:
            mask_logits = Tensor(np.zeros((0, c.mask_size * c.mask_size), dtype=np.float32))
            mask_t = np.zeros((0, c.mask_size * c.mask_size), dtype=np.float32)

        per_roi = _ce_rows(cls_logits.data, roi_labels)
        if pos.size:
            per_roi[pos] += _smooth_l1_rows(box_deltas.data[pos], box_t)
            per_roi[pos] += c.lambda_m * _bce_rows(mask_logits.data, mask_t)
        keep = ohem_select(per_roi, c.ohem_keep)
        kept_pos = np.isin(pos, keep)
        targets = LossTargets(
            rpn_index=rpn_idx, rpn_labels=labels[rpn_idx],
            rpn_box_index=rpn_pos, rpn_box_targets=dtargets[rpn_pos],
            roi_index=keep, roi_labels=roi_labels[keep],
            box_index=pos[kept_pos], box_targets=box_t[kept_pos],
            mask_index=np.nonzero(kept_pos)[0], mask_targets=mask_t[kept_pos],
        )
        preds = {"rpn_logits": rpn_logits, "rpn_deltas": rpn_deltas, "cls_logits": cls_logits,
                 "box_deltas": box_deltas, "mask_logits": mask_logits}
        return compute_loss(preds, targets, c.lambda_m)

    # -- inference -------------------------------------------------------

    def detect(self, image: np.ndarray, score_threshold: Optional[float] = None) -> list:
        c = self.config
        thr = c.score_threshold if score_threshold is None else score_threshold
        _, H, W = image.shape
        ts = c.backbone.total_stride
        if H % ts or W % ts:
            raise ValueError(f"image size {H}x{W} is not divisible by the total stride {ts}")
        with no_grad():
            fa, fb = self.features(image)
            anchors = self.anchors(*fa.shape[2:])
            rpn_logits, rpn_deltas = self.rpn(fa)
            scores = ops.softmax(rpn_logits.data)[:, 1]
            props, _ = bx.select_proposals(scores, rpn_deltas.data, anchors, (H, W), c.test_proposals)
            if len(props) == 0:
                return []
            maps = self.head_maps(fb)
            _, box = self.pool_cls_box(maps, props, self.pool_offsets(maps, props))
            refined = bx.clip_boxes(bx.decode(box.data * np.asarray(c.bbox_stds), props), H, W)
            ok = ((refined[:, 2] - refined[:, 0]) >= 1) & ((refined[:, 3] - refined[:, 1]) >= 1)
            refined = refined[ok]
            if len(refined) == 0:
                return []
            offsets = self.pool_offsets(maps, refined)
            cls, _ = self.pool_cls_box(maps, refined, offsets)
            roi_scores = ops.softmax(cls.data.astype(np.float64))[:, 1]
            # strict comparison: a threshold of 1 admits nothing
            sel = np.nonzero(roi_scores > thr)[0]
            if sel.size == 0:
                return []
            refined, roi_scores = refined[sel], roi_scores[sel]
            off_sel = None if offsets is None else take(offsets, sel)
            masks = ops.sigmoid(self.pool_mask(maps, refined, off_sel).data.astype(np.float64))
        masks = masks.reshape(-1, c.mask_size, c.mask_size)
        return postprocess(refined, roi_scores, masks, (H, W), c)


def postprocess(rois: np.ndarray, scores: np.ndarray, masks: np.ndarray, image_size, config: DetectorConfig) -> list:
    """NMS on ROI boxes, score-weighted merging of similar masks, oriented rectangles."""
    H, W = image_size
    cands = [Detection(quad=RoiBox.from_array(r).as_quad(), score=float(s), mask=m, roi=RoiBox.from_array(r, s))
             for r, s, m in zip(rois, scores, masks)]
    kept, suppressed = geo.nms_quads([d.roi.as_quad() for d in cands], scores, config.nms_iou)
    by_keeper: dict = {}
    for j, i in suppressed.items():
        by_keeper.setdefault(i, []).append(j)
    out = []
    for i in kept:
        det = cands[i]
        merged = geo.merge_similar_masks(det, [cands[j] for j in sorted(by_keeper.get(i, []))], config.similar_iou)
        try:
            quad = geo.min_area_quadrilateral(merged, det.roi, config.mask_threshold, expand=True)
        except ValueError:
            continue
        quad = geo.canonical_quad(geo.clip_quad(quad, W, H))
        if geo.polygon_area(quad) < 1.0:
            continue
        out.append(Detection(quad=quad, score=det.score, mask=merged, roi=det.roi))
    out.sort(key=lambda d: -d.score)
    if config.final_nms_iou < 1.0 and len(out) > 1:
        # ROIs of one oriented instance can overlap little as axis-aligned boxes
        # while their fitted rectangles nearly coincide
        keep, _ = geo.nms_quads([d.quad for d in out], [d.score for d in out], config.final_nms_iou)
        out = [out[i] for i in keep]
    return out


def init_params(config: DetectorConfig, seed: int = 0) -> Params:
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x1ECE7], dtype=np.uint64)))
    p = init_backbone(config.backbone, rng)
    fc = config.backbone.fused_channels
    hc = config.head_channels
    A = config.num_anchors
    k2 = config.k * config.k

    def conv(name, cout, cin, kh, std=None, zero=False):
        if zero:
            w = np.zeros((cout, cin, kh, kh), dtype=np.float32)
        else:
            s = np.sqrt(2.0 / (cin * kh * kh)) if std is None else std
            w = rng.normal(0, s, size=(cout, cin, kh, kh)).astype(np.float32)
        p[f"{name}.w"] = Tensor(w, requires_grad=True)
        p[f"{name}.b"] = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)

    conv("rpn.conv", fc, fc, 3)
    conv("rpn.cls", 2 * A, fc, 1, std=0.01)
    conv("rpn.box", 4 * A, fc, 1, std=0.01)
    conv("head.pre", hc, fc, 3)
    conv("head.cls", 2 * k2, hc, 1, std=0.01)
    conv("head.box", 4 * k2, hc, 1, std=0.01)
    conv("head.mask", k2, hc, 1, std=0.01)
    if config.deformable_psroi:
        conv("head.offset", 2 * k2, hc, 1, zero=True)
    return p


def detect(image: np.ndarray, params: Params, cfg: DetectorConfig = DetectorConfig()) -> list:
    return IncepText(cfg, params).detect(image)


def config_from_params(arrays: dict, base: DetectorConfig = DetectorConfig()) -> DetectorConfig:
    """Recover the architecture a parameter set was built for from its names and shapes.

    Strides are not stored; every stage but the last is assumed to halve the
    resolution, the last one being the dilated stride-1 stage.
    """
    shape = {k: tuple(getattr(v, "shape", np.shape(v))) for k, v in arrays.items()}
    stages: dict = {}
    for name, s in shape.items():
        parts = name.split(".")
        if parts[0] == "backbone" and parts[-1] == "w":
            si, ci = int(parts[1][1:]), int(parts[2][1:])
            stages.setdefault(si, {})[ci] = s[0]
    if not stages or sorted(stages) != list(range(len(stages))):
        raise ValueError("parameter set has no recognisable backbone stages")
    widths = tuple(stages[i][max(stages[i])] for i in range(len(stages)))
    convs = tuple(len(stages[i]) for i in range(len(stages)))
    strides = (2,) * (len(widths) - 1) + (1,)
    for key in ("it_a.left.reduce.w", "head.pre.w", "head.mask.w", "rpn.cls.w"):
        if key not in shape:
            raise ValueError(f"parameter set is missing {key}")
    k = int(round(np.sqrt(shape["head.mask.w"][0])))
    if k * k != shape["head.mask.w"][0]:
        raise ValueError("mask head width is not a square bin count")
    if shape["rpn.cls.w"][0] != 2 * base.num_anchors:
        raise ValueError(f"RPN predicts {shape['rpn.cls.w'][0] // 2} anchors per cell, expected {base.num_anchors}")
    reduce = shape["it_a.left.reduce.w"][0]
    if reduce == max(1, widths[-3] // 4):
        reduce = None
    backbone = replace(base.backbone, widths=widths, strides=strides, convs_per_stage=convs,
                       deformable="it_a.left.offset.w" in shape, reduce_channels=reduce)
    return replace(base, backbone=backbone, k=k, head_channels=shape["head.pre.w"][0],
                   deformable_psroi="head.offset.w" in shape)


def params_from_arrays(arrays: dict) -> Params:
    return {k: Tensor(np.asarray(v, dtype=np.float32), requires_grad=True) for k, v in arrays.items()}
