"""Counterfactual ROC protocol, localization accuracy and per-frame video scoring."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigurationError, DataError
from .proposals import Box, iou

SINGLE_TEMPLATE = "the {attribute} {entity}"
FULL_TEMPLATE = "{attribute} {entity} in {color}"


def region_score(g, selected):
    """Mean of the top decile of heat inside the selected box; 0 without a box."""
    if selected is None:
        return 0.0
    g = np.asarray(g, dtype=np.float64)
    inside = g[selected.y:selected.y + selected.h, selected.x:selected.x + selected.w].reshape(-1)
    k = max(1, math.ceil(0.1 * inside.size))
    return float(np.sort(inside)[::-1][:k].mean())


@dataclass
class RocReport:
    fpr: list
    tpr: list
    thresholds: list
    auc: float

    def to_dict(self):
        return {"auc": self.auc,
                "roc": [{"fpr": f, "tpr": t, "thr": h}
                        for f, t, h in zip(self.fpr, self.tpr, self.thresholds)]}

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr", "threshold"])
            for row in zip(self.fpr, self.tpr, self.thresholds):
                w.writerow([repr(float(x)) for x in row])


def roc_auc(positive_scores, negative_scores):
    """Threshold-sweep ROC and the Mann-Whitney AUC (ties count one half).

    The first threshold is ``max(score) + 1`` so the curve starts at (0, 0).
    """
    pos = np.asarray(positive_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(negative_scores, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise ConfigurationError("roc_auc needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    auc = float(u / (pos.size * neg.size))
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    fpr, tpr, thr = [0.0], [0.0], [float(thresholds[0]) + 1.0]
    for t in thresholds:
        tpr.append(float((pos >= t).mean()))
        fpr.append(float((neg >= t).mean()))
        thr.append(float(t))
    return RocReport(fpr, tpr, thr, auc)


@dataclass
class QueryCase:
    features_path: str
    query: str
    is_counterfactual: bool = False
    box: tuple | None = None  # (x, y, w, h)
    image: int = -1

    def __post_init__(self):
        if self.is_counterfactual and self.box is not None:
            raise DataError("counterfactual cases carry no ground-truth box")


def localization_accuracy(cases, predictions, iou_threshold=0.5):
    """Fraction of non-counterfactual cases whose predicted box overlaps the truth."""
    correct = total = 0
    for case, pred in zip(cases, predictions, strict=True):
        if case.is_counterfactual:
            continue
        if case.box is None:
            raise DataError(f"case {case.query!r} on {case.features_path} has no ground-truth box")
        total += 1
        if pred is not None and iou(pred, Box(*case.box)) >= iou_threshold:
            correct += 1
    return correct / total if total else 0.0


@dataclass
class ImageAnnotation:
    """What is present in one image: its entity, attribute words and colors."""
    features_path: str
    entity: str
    attributes: tuple = ()
    colors: tuple = ()
    box: tuple | None = None
    extra: dict = field(default_factory=dict)

    @property
    def present(self):
        return set(self.attributes) | set(self.colors)


def generate_counterfactual_queries(annotations, corpus):
    """One query per (image, corpus word absent from that image), image order then corpus order."""
    cases = []
    for i, ann in enumerate(annotations):
        present = ann.present
        if not present <= set(corpus):
            raise DataError(f"image {i} has words outside the corpus: {sorted(present - set(corpus))}")
        for word in corpus:
            if word not in present:
                text = SINGLE_TEMPLATE.format(attribute=word, entity=ann.entity)
                cases.append(QueryCase(ann.features_path, text, True, None, i))
    return cases


def generate_normal_queries(annotations, corpus):
    """The matching positive arm: one query per word present in each image."""
    cases = []
    for i, ann in enumerate(annotations):
        for word in corpus:
            if word in ann.present:
                text = SINGLE_TEMPLATE.format(attribute=word, entity=ann.entity)
                cases.append(QueryCase(ann.features_path, text, False, ann.box, i))
    return cases


def localization_queries(annotations):
    """Full-description queries for localization scoring."""
    cases = []
    for i, ann in enumerate(annotations):
        if ann.attributes and ann.colors:
            text = FULL_TEMPLATE.format(attribute=ann.attributes[0], entity=ann.entity,
                                        color=ann.colors[0])
        elif ann.attributes or ann.colors:
            text = SINGLE_TEMPLATE.format(attribute=(ann.attributes or ann.colors)[0],
                                          entity=ann.entity)
        else:
            text = f"the {ann.entity}"
        cases.append(QueryCase(ann.features_path, text, False, ann.box, i))
    return cases


def temporal_ground(frame_scores, threshold, min_len=1):
    """Maximal runs of frames scoring >= threshold, as inclusive (start, end) pairs."""
    if min_len < 1:
        raise ConfigurationError("min_len must be >= 1")
    segments = []
    start = None
    scores = list(frame_scores)
    for i, s in enumerate(scores + [-math.inf]):
        if s >= threshold and start is None:
            start = i
        elif s < threshold and start is not None:
            if i - start >= min_len:
                segments.append((start, i - 1))
            start = None
    return segments


def align_captions(score_matrix, mode="argmax"):
    """Caption -> frame assignment. Unassignable captions map to None in greedy-unique mode."""
    m = np.asarray(score_matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ConfigurationError("score matrix must be a nonempty captions x frames array")
    if mode == "argmax":
        return [int(np.argmax(row)) for row in m]
    if mode != "greedy-unique":
        raise ConfigurationError(f"unknown alignment mode {mode!r}")
    order = sorted(range(m.shape[0]), key=lambda c: (-m[c].max(), c))
    taken = set()
    out = [None] * m.shape[0]
    for c in order:
        for f in sorted(range(m.shape[1]), key=lambda f: (-m[c, f], f)):
            if f not in taken:
                out[c] = f
                taken.add(f)
                break
    return out
