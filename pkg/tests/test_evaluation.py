import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grounder.errors import ConfigurationError, DataError
from grounder.evaluation import (ImageAnnotation, QueryCase, align_captions,
                                 generate_counterfactual_queries, generate_normal_queries,
                                 localization_accuracy, localization_queries, region_score,
                                 roc_auc, temporal_ground)
from grounder.proposals import Box

from oracles import linear_scan_segments, mann_whitney, top_decile_mean


class TestRegionScore:
    def test_no_box(self):
        assert region_score(np.ones((4, 4)), None) == 0.0

    def test_uniform(self):
        assert region_score(np.full((5, 5), 0.9), Box(1, 1, 3, 3)) == pytest.approx(0.9)

    def test_sort_oracle(self, rng):
        g = rng.uniform(size=(16, 16))
        b = Box(3, 2, 7, 5)
        assert region_score(g, b) == pytest.approx(top_decile_mean(g[2:7, 3:10]), abs=1e-15)


class TestRoc:
    def test_perfect(self):
        assert roc_auc([0.9, 0.8], [0.2, 0.1]).auc == 1.0

    def test_three_of_four(self):
        assert roc_auc([0.8, 0.3], [0.5, 0.1]).auc == 0.75

    def test_identical(self):
        assert roc_auc([0.2, 0.4, 0.4], [0.4, 0.2, 0.4]).auc == 0.5

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            roc_auc([], [0.1])

    def test_curve_endpoints_and_monotone(self, rng):
        r = roc_auc(rng.uniform(size=30), rng.uniform(size=20))
        assert (r.fpr[0], r.tpr[0]) == (0.0, 0.0) and (r.fpr[-1], r.tpr[-1]) == (1.0, 1.0)
        assert np.all(np.diff(r.fpr) >= 0) and np.all(np.diff(r.tpr) >= 0)

    def test_trapezoid_area_equals_auc(self, rng):
        pos = rng.integers(0, 5, size=25) / 4
        neg = rng.integers(0, 5, size=17) / 4
        r = roc_auc(pos, neg)
        assert np.trapezoid(r.tpr, r.fpr) == pytest.approx(r.auc, abs=1e-12)

    def test_mann_whitney_oracle(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            pos = np.round(rng.uniform(size=rng.integers(1, 30)), 2)
            neg = np.round(rng.uniform(size=rng.integers(1, 30)), 2)
            assert abs(roc_auc(pos, neg).auc - mann_whitney(pos, neg)) <= 1e-12
            assert abs(roc_auc(neg, pos).auc - (1 - roc_auc(pos, neg).auc)) <= 1e-12

    @settings(max_examples=50)
    @given(st.lists(st.integers(-20, 20), min_size=1, max_size=20),
           st.lists(st.integers(-20, 20), min_size=1, max_size=20))
    def test_monotone_transform_invariant(self, pos, neg):
        pos, neg = np.array(pos, float) / 4, np.array(neg, float) / 4
        a = roc_auc(pos, neg).auc
        assert 0.0 <= a <= 1.0
        assert roc_auc(np.exp(pos), np.exp(neg)).auc == pytest.approx(a, abs=1e-12)

    def test_csv(self, tmp_path):
        r = roc_auc([0.9, 0.4], [0.5, 0.1])
        r.write_csv(tmp_path / "roc.csv")
        rows = list(csv.reader(open(tmp_path / "roc.csv")))
        assert rows[0] == ["fpr", "tpr", "threshold"]
        assert [float(x) for x in rows[-1]] == [1.0, 1.0, 0.1]


class TestLocalization:
    def test_four_cases(self):
        truth = Box(0, 0, 10, 10)
        # IoUs 0.6, 0.4, 1.0, 0.0 against a 10x10 truth box
        preds = [Box(0, 0, 10, 6), Box(0, 0, 10, 4), Box(0, 0, 10, 10), Box(20, 20, 2, 2)]
        cases = [QueryCase("f", "q", False, (0, 0, 10, 10)) for _ in preds]
        assert localization_accuracy(cases, preds) == 0.5

    def test_none_prediction_is_wrong(self):
        assert localization_accuracy([QueryCase("f", "q", False, (0, 0, 2, 2))], [None]) == 0.0

    def test_counterfactual_skipped(self):
        cases = [QueryCase("f", "q", True), QueryCase("f", "q", False, (0, 0, 2, 2))]
        assert localization_accuracy(cases, [None, Box(0, 0, 2, 2)]) == 1.0

    def test_missing_truth(self):
        with pytest.raises(DataError):
            localization_accuracy([QueryCase("f", "q")], [None])

    def test_cf_case_with_box(self):
        with pytest.raises(DataError):
            QueryCase("f", "q", True, (0, 0, 1, 1))


class TestCounterfactualQueries:
    def test_two_word_corpus(self):
        cases = generate_counterfactual_queries([ImageAnnotation("f", "person", ("man",))],
                                                ["man", "woman"])
        assert [c.query for c in cases] == ["the woman person"]
        assert cases[0].is_counterfactual and cases[0].box is None

    def test_full_corpus_gives_none(self):
        ann = ImageAnnotation("f", "person", ("man",), ("red",))
        assert generate_counterfactual_queries([ann], ["man", "red"]) == []

    def test_counting(self):
        corpus = ["man", "woman", "red", "green", "blue"]
        anns = [ImageAnnotation("a", "person", ("man",), ("red",)),
                ImageAnnotation("b", "dog", (), ("blue",)),
                ImageAnnotation("c", "person", ("woman",), ("green", "blue"))]
        cases = generate_counterfactual_queries(anns, corpus)
        assert len(cases) == sum(5 - len(a.present) for a in anns)
        for c in cases:
            word = c.query.split()[1]
            assert word not in anns[c.image].present
        assert [c.image for c in cases] == sorted(c.image for c in cases)

    def test_word_outside_corpus(self):
        with pytest.raises(DataError):
            generate_counterfactual_queries([ImageAnnotation("a", "dog", ("big",))], ["man"])

    def test_normal_arm(self):
        ann = ImageAnnotation("a", "person", ("man",), ("red",), (0, 0, 2, 2))
        qs = generate_normal_queries([ann], ["man", "woman", "red"])
        assert [q.query for q in qs] == ["the man person", "the red person"]
        assert all(q.box == (0, 0, 2, 2) for q in qs)

    def test_localization_template(self):
        ann = ImageAnnotation("a", "person", ("man",), ("red",), (0, 0, 2, 2))
        assert localization_queries([ann])[0].query == "man person in red"


class TestTemporal:
    def test_all_below(self):
        assert temporal_ground([0.1, 0.2], 0.5) == []

    def test_runs(self):
        assert temporal_ground([0.9, 0.9, 0.1, 0.8], 0.5, 1) == [(0, 1), (3, 3)]

    def test_min_len(self):
        assert temporal_ground([0.9, 0.9, 0.1, 0.8], 0.5, 2) == [(0, 1)]

    def test_bad_min_len(self):
        with pytest.raises(ConfigurationError):
            temporal_ground([1.0], 0.5, 0)

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), max_size=40), st.floats(0, 1), st.integers(1, 4))
    def test_linear_scan_oracle(self, scores, thr, min_len):
        segs = temporal_ground(scores, thr, min_len)
        assert segs == linear_scan_segments(scores, thr, min_len)
        for (s0, e0), (s1, _) in zip(segs, segs[1:]):
            assert e0 < s1
        assert all(e - s + 1 >= min_len for s, e in segs)


class TestAlign:
    def test_diagonal(self):
        m = np.eye(3) + 0.1
        assert align_captions(m, "argmax") == [0, 1, 2]
        assert align_captions(m, "greedy-unique") == [0, 1, 2]

    def test_shared_best_frame(self):
        m = np.array([[0.9, 0.5, 0.1], [0.8, 0.1, 0.6]])
        assert align_captions(m, "argmax") == [0, 0]
        assert align_captions(m, "greedy-unique") == [0, 2]

    def test_single_row(self):
        assert align_captions([[0.1, 0.7, 0.3, 0.7]]) == [1]

    def test_more_captions_than_frames(self):
        assert align_captions([[0.9], [0.5]], "greedy-unique") == [0, None]

    def test_bad_input(self):
        with pytest.raises(ConfigurationError):
            align_captions(np.zeros((0, 3)))
        with pytest.raises(ConfigurationError):
            align_captions([[1.0]], "best")
