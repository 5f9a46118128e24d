"""Heatmap to boxes: sub-window sweep, thresholded components, NMS, selection."""
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError

DEFAULT_SCALE_FRACTIONS = (0.25, 0.5, 0.75)
_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Box:
    x: int
    y: int
    w: int
    h: int
    score: float = 0.0

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ConfigurationError(f"degenerate box {self}")

    @property
    def area(self):
        return self.w * self.h

    @property
    def key(self):
        """Flat coordinate tuple used for deterministic tie-breaking."""
        return (self.y, self.x, self.w, self.h)

    def to_dict(self):
        return {"x": int(self.x), "y": int(self.y), "w": int(self.w), "h": int(self.h),
                "score": float(self.score)}


@dataclass(frozen=True)
class ProposalConfig:
    heat_threshold: float = 0.5
    scales: tuple | None = None  # (w, h) in pixels; None -> fractions of the map
    stride: int = 2
    nms_iou: float = 0.5
    kappa: float = 0.1
    windows_per_scale: int = 5

    def __post_init__(self):
        if not 0.0 < self.heat_threshold < 1.0:
            raise ConfigurationError("heat_threshold must be in (0, 1)")
        if self.stride < 1:
            raise ConfigurationError("stride must be >= 1")
        if not 0.0 < self.nms_iou < 1.0:
            raise ConfigurationError("nms_iou must be in (0, 1)")
        if self.kappa < 0:
            raise ConfigurationError("kappa must be >= 0")
        if self.scales is not None and len(self.scales) == 0:
            raise ConfigurationError("scales must be nonempty")

    def resolve_scales(self, height, width):
        if self.scales is None:
            return [(max(1, round(f * width)), max(1, round(f * height)))
                    for f in DEFAULT_SCALE_FRACTIONS]
        return [(min(int(w), width), min(int(h), height)) for w, h in self.scales]


def iou(a, b):
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _positions(s0, s1, size, stride):
    """Window origins along one axis, restricted to the heat support [s0, s1]."""
    span = s1 - s0 + 1
    if size >= span:
        return [max(0, s1 - size + 1)]
    pos = list(range(s0, s1 - size + 2, stride))
    if pos[-1] != s1 - size + 1:
        pos.append(s1 - size + 1)
    return pos


def _integral(g):
    s = np.zeros((g.shape[0] + 1, g.shape[1] + 1))
    s[1:, 1:] = np.asarray(g, dtype=np.float64).cumsum(0).cumsum(1)
    return s


def top_windows(g, cfg):
    """The ``windows_per_scale`` highest-sum windows at each scale, as (box, heat sum)."""
    g = np.asarray(g, dtype=np.float64)
    ys, xs = np.nonzero(g > 0)
    if ys.size == 0:
        return []
    integral = _integral(g)
    out = []
    for w, h in cfg.resolve_scales(*g.shape):
        found = []
        for y in _positions(ys.min(), ys.max(), h, cfg.stride):
            for x in _positions(xs.min(), xs.max(), w, cfg.stride):
                total = (integral[y + h, x + w] - integral[y, x + w]
                         - integral[y + h, x] + integral[y, x])
                if total > 0:
                    found.append((-total, y, x, Box(x, y, w, h)))
        found.sort(key=lambda f: f[:3])
        out.extend((box, -neg) for neg, _, _, box in found[:cfg.windows_per_scale])
    return out


def component_boxes(g, threshold):
    """Bounding boxes of 4-connected components of ``g >= threshold``."""
    labels, n = ndimage.label(np.asarray(g) >= threshold, structure=_FOUR_CONNECTED)
    boxes = []
    for sl in ndimage.find_objects(labels):
        ysl, xsl = sl
        boxes.append(Box(xsl.start, ysl.start, xsl.stop - xsl.start, ysl.stop - ysl.start))
    return boxes


def coverage_score(box, g, kappa):
    """Share of total heat inside ``box`` minus ``kappa`` times its area share."""
    g = np.asarray(g, dtype=np.float64)
    total = g.sum()
    inside = g[box.y:box.y + box.h, box.x:box.x + box.w].sum()
    return inside / total - kappa * box.area / g.size


def heatmap_to_candidates(g, cfg=ProposalConfig()):
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.size == 0:
        raise ConfigurationError(f"heatmap must be a nonempty 2-d array, got {g.shape}")
    boxes = component_boxes(g, cfg.heat_threshold) + [b for b, _ in top_windows(g, cfg)]
    if not boxes or g.sum() <= 0:
        return []
    unique = {b.key: b for b in boxes}
    scored = [replace(b, score=float(coverage_score(b, g, cfg.kappa))) for b in unique.values()]
    scored.sort(key=lambda b: (-b.score, b.key))
    return scored


def nms(boxes, iou_threshold=0.5):
    """Greedy suppression; ties in score go to the smaller (y, x, w, h) tuple."""
    kept = []
    for b in sorted(boxes, key=lambda b: (-b.score, b.key)):
        if all(iou(b, k) < iou_threshold for k in kept):
            kept.append(b)
    return kept


def select_box(boxes, g, kappa=0.1):
    """Best box by coverage score, or None for an empty list / all-zero map."""
    g = np.asarray(g, dtype=np.float64)
    if not boxes or g.sum() <= 0:
        return None
    best = min(((coverage_score(b, g, kappa), b) for b in boxes),
               key=lambda sb: (-sb[0], sb[1].area, sb[1].key))
    score, box = best
    return replace(box, score=float(score)), float(score)
