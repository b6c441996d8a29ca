import math
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierloc.data import LocationGrid
from hierloc.metrics import (
    UndefinedMetricError,
    accuracy_at_k,
    bleu,
    dtw_distance,
    evaluate_predictions,
    modified_precision,
    mrr,
    target_ranks,
    trend_decomposition,
)

import oracles

GRID4 = LocationGrid(4, 4)


def probs_with_ranks(ranks, n=10):
    """Rows where target id 0 sits at the given rank."""
    rows = []
    for r in ranks:
        row = np.linspace(1.0, 0.1, n)
        row[[0, r - 1]] = row[[r - 1, 0]]
        rows.append(row / row.sum())
    return np.array(rows)


def test_rank_examples():
    probs = probs_with_ranks([1, 4])
    targets = np.array([0, 0])
    assert target_ranks(probs, targets).tolist() == [1, 4]
    assert accuracy_at_k(probs, targets, 3) == 0.5
    assert mrr(probs, targets) == 0.625


def test_k_covering_everything():
    probs = np.random.default_rng(0).random((5, 10))
    assert accuracy_at_k(probs, np.array([3, -1, 9, 0, 2]), 10) == 1.0


def test_all_rank_one_mrr():
    probs = np.eye(4)
    assert mrr(probs, np.arange(4)) == 1.0


def test_ties_resolved_by_lower_id():
    probs = np.full((1, 5), 0.2)
    assert target_ranks(probs, np.array([3])).tolist() == [4]


def test_no_targets():
    with pytest.raises(UndefinedMetricError):
        accuracy_at_k(np.ones((2, 3)) / 3, np.array([-1, -1]), 1)
    with pytest.raises(UndefinedMetricError):
        mrr(np.ones((2, 3)) / 3, np.array([-1, -1]))


def test_ranking_oracle_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        # coarse values force ties
        probs = rng.integers(0, 4, (5, 10)).astype(float)
        targets = rng.integers(-1, 10, 5)
        if (targets < 0).all():
            targets[0] = 0
        for k in (1, 3, 5):
            acc, rr = oracles.acc_and_mrr(probs, targets, k)
            assert math.isclose(accuracy_at_k(probs, targets, k), acc, rel_tol=1e-9)
        assert math.isclose(mrr(probs, targets), rr, rel_tol=1e-9)


def test_dtw_examples():
    grid = LocationGrid(5, 5)
    assert dtw_distance([grid.cell_id(0, 0)], [grid.cell_id(3, 4)], grid) == 5.0
    assert dtw_distance([1, 2, 3], [1, 2, 3], GRID4) == 0.0
    with pytest.raises(ValueError):
        dtw_distance([], [1], GRID4)


def test_dtw_enumeration_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a = rng.integers(0, 16, rng.integers(1, 6)).tolist()
        b = rng.integers(0, 16, rng.integers(1, 6)).tolist()
        expected = oracles.dtw_by_enumeration([GRID4.col_row(c) for c in a], [GRID4.col_row(c) for c in b])
        assert math.isclose(dtw_distance(a, b, GRID4), expected, rel_tol=1e-9, abs_tol=1e-12)


path = st.lists(st.integers(0, 15), min_size=1, max_size=6)


@settings(max_examples=100, deadline=None)
@given(path, path)
def test_dtw_symmetry(a, b):
    assert math.isclose(dtw_distance(a, b, GRID4), dtw_distance(b, a, GRID4), rel_tol=1e-12, abs_tol=1e-12)
    assert dtw_distance(a, a, GRID4) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), min_size=1, max_size=8))
def test_dtw_below_paired_sum(pairs):
    a, b = [p[0] for p in pairs], [p[1] for p in pairs]
    paired = sum(math.dist(GRID4.col_row(x), GRID4.col_row(y)) for x, y in pairs)
    assert dtw_distance(a, b, GRID4) <= paired + 1e-9


def test_bleu_hand_case():
    pred, true = list("aabc"), list("abbc")
    assert modified_precision(pred, true, 1) == 3 / 4
    assert modified_precision(pred, true, 2) == 2 / 3
    # no trigram or 4-gram is shared, so both precisions hit the floor
    assert oracles.clipped_precision(pred, true, 3) == 0.0
    assert modified_precision(pred, true, 3) == 0.0
    assert bleu(pred, true) == pytest.approx(oracles.bleu_by_counting(pred, true), rel=1e-9)


def test_bleu_examples():
    assert bleu([1, 2, 3, 4, 5], [1, 2, 3, 4, 5]) == 1.0
    assert bleu([1, 1, 1, 1], [2, 2, 2, 2]) < 1e-8
    assert bleu([7, 8], [7, 8]) == 1.0
    with pytest.raises(ValueError):
        bleu([1, 2], [1])


def test_bleu_counting_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 12))
        pred, true = rng.integers(0, 4, n).tolist(), rng.integers(0, 4, n).tolist()
        assert math.isclose(bleu(pred, true), oracles.bleu_by_counting(pred, true), rel_tol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10).flatmap(lambda n: st.tuples(st.lists(st.integers(0, 3), min_size=n, max_size=n),
                                                      st.lists(st.integers(0, 3), min_size=n, max_size=n))))
def test_bleu_range(pair):
    pred, true = pair
    score = bleu(pred, true)
    assert 0 <= score <= 1
    assert (score > 0.999) == (pred == true)


class TestTrend:
    def test_all_correct(self):
        rng = np.random.default_rng(0)
        tod, dow = rng.integers(0, 48, 500), rng.integers(0, 7, 500)
        rep = trend_decomposition(tod, dow, np.ones(500, bool))
        assert all(v == 1.0 for v in rep.tod_acc1 if v is not None)
        assert rep.dow_acc1 == [1.0] * 7

    def test_sunday_only(self):
        rep = trend_decomposition([1, 2], [6, 6], [True, False])
        assert rep.dow_acc1 == [None] * 6 + [0.5]
        assert rep.weekday_acc1 is None and rep.weekend_delta is None

    def test_group_by_oracle(self):
        rng = np.random.default_rng(4)
        tod, dow, ok = rng.integers(0, 48, 300), rng.integers(0, 7, 300), rng.random(300) < 0.6
        rep = trend_decomposition(tod, dow, ok)
        for k, v in oracles.group_means(tod, ok).items():
            assert math.isclose(rep.tod_acc1[k], v, rel_tol=1e-12)
        for k, v in oracles.group_means(dow, ok).items():
            assert math.isclose(rep.dow_acc1[k], v, rel_tol=1e-12)
        means = oracles.group_means(dow >= 5, ok)
        assert math.isclose(rep.weekend_delta, means[1] - means[0], rel_tol=1e-12)


def random_eval(seed=0, B=3, H=6, n=16):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((B, H, n)) * 2
    probs = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    targets = rng.integers(-1, n, (B, H))
    targets[:, 0] = 1
    tod = np.tile(np.arange(H), (B, 1))
    dow = np.tile(rng.integers(0, 7, (B, 1)), (1, H))
    return probs, targets, tod, dow


def test_report_invariants():
    for seed in range(20):
        rep = evaluate_predictions(*random_eval(seed), GRID4)
        assert rep.acc1 <= rep.acc3 <= rep.acc5 <= 1
        assert 0 < rep.mrr <= 1 and rep.mrr >= rep.acc1
        assert rep.dtw >= 0 and 0 <= rep.bleu <= 1
        assert rep.max_row_sum_error < 1e-9


def test_report_paths_use_observed_slots():
    probs, targets, tod, dow = random_eval(5)
    rep = evaluate_predictions(probs, targets, tod, dow, GRID4)
    top1 = probs.argmax(-1)
    dtws = [oracles.dtw_by_enumeration([GRID4.col_row(c) for c in p[t >= 0]],
                                       [GRID4.col_row(c) for c in t[t >= 0]])
            for p, t in zip(top1, targets)]
    assert math.isclose(rep.dtw, float(np.mean(dtws)), rel_tol=1e-9)


def test_report_files(tmp_path):
    rep = evaluate_predictions(*random_eval(1), GRID4, slots_per_day=6)
    rep.write(tmp_path)
    data = json.loads((tmp_path / "metrics.json").read_text())
    assert data["acc1"] == rep.acc1
    assert (tmp_path / "trend_tod.csv").read_text().splitlines()[0] == "tod_slot,acc1"
    assert (tmp_path / "trend_dow.csv").read_text().splitlines()[0] == "dow,acc1"
    assert (tmp_path / "metrics.csv").read_text().splitlines()[0] == "metric,value"
