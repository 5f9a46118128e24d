import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grounder.errors import ConfigurationError
from grounder.proposals import (Box, ProposalConfig, component_boxes, coverage_score,
                                heatmap_to_candidates, iou, nms, select_box, top_windows)

from oracles import box_iou, exhaustive_windows


class TestIoU:
    def test_identical(self):
        assert iou(Box(1, 2, 3, 4), Box(1, 2, 3, 4)) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 2, 2), Box(5, 5, 2, 2)) == 0.0

    def test_half_overlap(self):
        assert iou(Box(0, 0, 2, 2), Box(1, 0, 2, 2)) == pytest.approx(1 / 3)

    @settings(max_examples=100)
    @given(st.tuples(*[st.integers(0, 6)] * 2, *[st.integers(1, 5)] * 2),
           st.tuples(*[st.integers(0, 6)] * 2, *[st.integers(1, 5)] * 2))
    def test_cell_counting_oracle(self, a, b):
        assert iou(Box(*a), Box(*b)) == pytest.approx(box_iou(a, b), abs=1e-12)
        assert iou(Box(*a), Box(*b)) == iou(Box(*b), Box(*a))


def test_box_rejects_empty():
    with pytest.raises(ConfigurationError):
        Box(0, 0, 0, 3)


class TestCandidates:
    def test_zero_map(self):
        assert heatmap_to_candidates(np.zeros((8, 8))) == []

    def test_block_recovered(self):
        g = np.zeros((10, 10))
        g[2:5, 3:6] = 1.0
        cands = heatmap_to_candidates(g)
        assert any(b.key == (2, 3, 3, 3) for b in cands)
        assert cands[0].key == (2, 3, 3, 3)

    def test_components_four_connected(self):
        g = np.zeros((5, 5))
        g[0, 0] = g[1, 1] = 1.0
        assert len(component_boxes(g, 0.5)) == 2

    def test_sorted_and_unique(self, rng):
        cands = heatmap_to_candidates(rng.uniform(size=(12, 12)))
        keys = [b.key for b in cands]
        assert len(keys) == len(set(keys))
        scores = [b.score for b in cands]
        assert scores == sorted(scores, reverse=True)

    def test_coverage_score_matches_window_sums(self, rng):
        g = rng.uniform(size=(16, 16))
        cfg = ProposalConfig(kappa=0.2)
        for b in heatmap_to_candidates(g, cfg):
            direct = g[b.y:b.y + b.h, b.x:b.x + b.w].sum() / g.sum() - 0.2 * b.area / g.size
            assert b.score == pytest.approx(direct, abs=1e-12)


def test_window_sums_match_exhaustive_oracle():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        g = rng.uniform(size=(16, 16))
        cfg = ProposalConfig(stride=1, windows_per_scale=5)
        got = top_windows(g, cfg)
        for w, h in cfg.resolve_scales(16, 16):
            oracle = sorted(exhaustive_windows(g, w, h), key=lambda t: (-t[0], t[1], t[2]))[:5]
            mine = [(s, b.y, b.x) for b, s in got if (b.w, b.h) == (w, h)]
            assert [(y, x) for _, y, x in mine] == [(y, x) for _, y, x in oracle]
            np.testing.assert_allclose([s for s, _, _ in mine], [s for s, _, _ in oracle],
                                       rtol=1e-12)


def test_strided_windows_never_miss_a_better_grid_window(rng):
    g = rng.uniform(size=(16, 16)) * (rng.uniform(size=(16, 16)) > 0.6)
    cfg = ProposalConfig(stride=2)
    got = top_windows(g, cfg)
    for b, s in got:
        assert s == pytest.approx(g[b.y:b.y + b.h, b.x:b.x + b.w].sum(), rel=1e-12)


class TestNMS:
    def test_suppresses_overlap(self):
        a, b, c = Box(0, 0, 4, 4, 0.9), Box(1, 0, 4, 4, 0.8), Box(10, 10, 2, 2, 0.5)
        assert nms([b, c, a], 0.5) == [a, c]

    def test_tie_by_key(self):
        a, b = Box(0, 1, 4, 4, 0.5), Box(1, 0, 4, 4, 0.5)
        assert nms([a, b], 0.3) == [b]

    def test_empty(self):
        assert nms([]) == []

    @staticmethod
    def random_boxes(rng, n):
        return [Box(int(rng.integers(0, 12)), int(rng.integers(0, 12)), int(rng.integers(1, 6)),
                    int(rng.integers(1, 6)), float(rng.uniform())) for _ in range(n)]

    def test_idempotent_and_separated(self):
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            boxes = self.random_boxes(rng, int(rng.integers(0, 15)))
            kept = nms(boxes, 0.5)
            assert nms(kept, 0.5) == kept
            for i, a in enumerate(kept):
                for b in kept[i + 1:]:
                    assert iou(a, b) < 0.5


class TestSelectBox:
    def test_none_cases(self):
        assert select_box([], np.ones((4, 4))) is None
        assert select_box([Box(0, 0, 2, 2)], np.zeros((4, 4))) is None

    def test_prefers_tight_box(self):
        g = np.zeros((8, 8))
        g[2:4, 2:4] = 1.0
        box, score = select_box([Box(0, 0, 8, 8), Box(2, 2, 2, 2)], g, kappa=0.1)
        assert box.key == (2, 2, 2, 2)
        assert score == pytest.approx(1.0 - 0.1 * 4 / 64)

    def test_tie_smaller_area(self):
        g = np.zeros((8, 8))
        g[2:4, 2:4] = 1.0
        box, _ = select_box([Box(1, 1, 4, 4), Box(2, 2, 2, 2)], g, kappa=0.0)
        assert box.key == (2, 2, 2, 2)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_coverage_decreases_with_kappa(self, k1, k2):
        g = np.arange(16.0).reshape(4, 4)
        b = Box(0, 0, 3, 2)
        lo, hi = sorted((k1, k2))
        assert coverage_score(b, g, hi) <= coverage_score(b, g, lo)


def test_border_blob_boxes_stay_inside(rng):
    g = np.zeros((16, 16))
    g[12:, 13:] = rng.uniform(0.6, 1.0, size=(4, 3))
    for b in heatmap_to_candidates(g):
        assert b.x >= 0 and b.y >= 0 and b.x + b.w <= 16 and b.y + b.h <= 16
    assert heatmap_to_candidates(g)[0].key == (12, 13, 3, 4)


def test_bad_config():
    with pytest.raises(ConfigurationError):
        ProposalConfig(heat_threshold=1.5)
    with pytest.raises(ConfigurationError):
        ProposalConfig(stride=0)


class TestSpecExamples:
    def test_iou_offset(self):
        assert iou(Box(0, 0, 10, 10), Box(1, 1, 10, 10)) == pytest.approx(81 / 119)

    def test_nms_pair(self):
        a, b = Box(0, 0, 10, 10, 0.9), Box(1, 1, 10, 10, 0.8)
        assert nms([b, a], 0.5) == [a]

    def test_nms_single_and_disjoint(self):
        a, b, c = Box(0, 0, 2, 2, 0.1), Box(5, 5, 2, 2, 0.7), Box(9, 0, 2, 2, 0.4)
        assert nms([a]) == [a]
        assert nms([a, b, c]) == [b, c, a]

    def test_select_full_cover(self):
        g = np.zeros((6, 6))
        g[1:3, 2:5] = 0.7
        box, score = select_box([Box(1, 1, 4, 3)], g, kappa=0.0)
        assert score == 1.0

    def test_select_brute_force(self, rng):
        g = rng.uniform(size=(12, 12)) ** 3
        cands = [Box(0, 0, 6, 6), Box(3, 4, 8, 5)]
        direct = [g[b.y:b.y + b.h, b.x:b.x + b.w].sum() / g.sum() - 0.1 * b.area / g.size
                  for b in cands]
        box, score = select_box(cands, g, 0.1)
        assert box.key == cands[int(np.argmax(direct))].key
        assert score == pytest.approx(max(direct), abs=1e-12)


@settings(max_examples=100)
@given(st.integers(0, 6), st.integers(0, 6), st.integers(1, 4), st.integers(1, 4),
       st.integers(0, 3), st.integers(0, 3), st.integers(0, 10_000))
def test_coverage_monotone_under_growth(x, y, w, h, dw, dh, seed):
    g = np.random.default_rng(seed).uniform(size=(12, 12))
    small, big = Box(x, y, w, h), Box(x, y, w + dw, h + dh)
    assert coverage_score(big, g, 0.0) >= coverage_score(small, g, 0.0) - 1e-12


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_penalty_linear_in_area(k1, k2):
    g = np.arange(1.0, 17.0).reshape(4, 4)
    b = Box(1, 0, 2, 3)
    base = coverage_score(b, g, 0.0)
    for k in (k1, k2):
        assert coverage_score(b, g, k) == pytest.approx(base - k * 6 / 16, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_zero_border_invariance(seed):
    rng = np.random.default_rng(seed)
    g = rng.uniform(size=(12, 12)) * (rng.uniform(size=(12, 12)) > 0.5)
    cfg = ProposalConfig(scales=((3, 3), (6, 6), (9, 9)), kappa=0.0)
    padded = np.zeros((13, 13))
    padded[:12, :12] = g
    a = [(b.key, b.score) for b in heatmap_to_candidates(g, cfg)]
    b = [(b.key, b.score) for b in heatmap_to_candidates(padded, cfg)]
    assert [k for k, _ in a] == [k for k, _ in b]
    np.testing.assert_allclose([s for _, s in a], [s for _, s in b], atol=1e-12)
