import numpy as np
import pytest

from inceptext.evaluate import evaluate, f_measure, match_image

from conftest import random_rect

SQ = np.array([[0, 0], [10, 0], [10, 10], [0, 10]], dtype=float)


def test_identical_detections_perfect():
    gts = [[SQ, SQ + 30], [SQ + 5]]
    dets = [[(q, 0.9) for q in g] for g in gts]
    rep = evaluate(dets, gts)
    assert rep.precision == rep.recall == rep.f_measure == 1.0
    assert rep.n_matched == 3


def test_no_detections():
    rep = evaluate([[]], [[SQ]])
    assert rep.recall == 0.0 and rep.precision == 0.0 and rep.f_measure == 0.0


def test_half_recall_example():
    rep = evaluate([[(SQ, 0.8)]], [[SQ, SQ + 40]])
    assert rep.precision == 1.0
    assert rep.recall == 0.5
    assert rep.f_measure == pytest.approx(2 / 3)


def test_f_measure_formula():
    assert f_measure(0.0, 0.0) == 0.0
    assert f_measure(0.5, 1.0) == pytest.approx(2 * 0.5 / 1.5)


def test_threshold_inclusive():
    big = np.array([[0, 0], [12, 0], [12, 12], [0, 12]], dtype=float)
    assert match_image([big + [4, 0]], [1.0], [big], 0.5)  # IoU exactly 0.5
    assert not match_image([SQ + [4, 0]], [1.0], [SQ], 0.5)


def test_one_to_one():
    # two detections on one GT: only the higher score matches
    pairs = match_image([SQ, SQ + [0.5, 0]], [0.4, 0.9], [SQ])
    assert len(pairs) == 1 and pairs[0][0] == 1
    rep = evaluate([[(SQ, 0.4), (SQ + [0.5, 0], 0.9)]], [[SQ]])
    assert rep.precision == 0.5 and rep.recall == 1.0


def test_matching_order_independent(rng):
    for _ in range(20):
        gts = [random_rect(rng) for _ in range(4)]
        dets = [(g + rng.normal(0, 3, (1, 2)), float(s)) for g, s in zip(gts, rng.permutation(4) / 4 + 0.1)]
        dets += [(random_rect(rng), float(s)) for s in rng.uniform(0, 0.09, 3)]
        perm = [dets[i] for i in rng.permutation(len(dets))]
        a, b = evaluate([dets], [gts]), evaluate([perm], [gts])
        assert (a.precision, a.recall) == (b.precision, b.recall)
        matched_a = {(round(dets[d][1], 12), g) for d, g, _ in a.matches[0]}
        matched_b = {(round(perm[d][1], 12), g) for d, g, _ in b.matches[0]}
        assert matched_a == matched_b


def test_length_mismatch():
    with pytest.raises(ValueError):
        evaluate([[]], [])
