"""Brute-force reference implementations used only by the tests."""
import itertools

import numpy as np


def box_iou(a, b):
    """IoU of (x, y, w, h) tuples by counting covered cells."""
    cells_a = {(x, y) for x in range(a[0], a[0] + a[2]) for y in range(a[1], a[1] + a[3])}
    cells_b = {(x, y) for x in range(b[0], b[0] + b[2]) for y in range(b[1], b[1] + b[3])}
    return len(cells_a & cells_b) / len(cells_a | cells_b)


def exhaustive_windows(g, w, h):
    """Every (sum, y, x) window of size w x h, summed directly."""
    H, W = g.shape
    return [(float(g[y:y + h, x:x + w].sum()), y, x)
            for y in range(H - h + 1) for x in range(W - w + 1)]


def mann_whitney(pos, neg):
    wins = 0.0
    for p, n in itertools.product(pos, neg):
        wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def top_decile_mean(values):
    vals = sorted(np.ravel(values).tolist(), reverse=True)
    k = -(-len(vals) // 10)
    return sum(vals[:k]) / k


def linear_scan_segments(scores, threshold, min_len):
    out, run = [], []
    for i, s in enumerate(scores):
        if s >= threshold:
            run.append(i)
            continue
        if len(run) >= min_len:
            out.append((run[0], run[-1]))
        run = []
    if len(run) >= min_len:
        out.append((run[0], run[-1]))
    return out
