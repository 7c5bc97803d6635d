import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctp.errors import ConfigError, DataError
from ctp.nn import predict_logits
from ctp.router import (
    RouterConfig,
    classify,
    confidence_score,
    noise_percentiles,
    normalize_logits,
    predict_task,
    route_logits,
    thresholds,
    write_reports,
)

from conftest import random_expert


def sorted_interp(values, p):
    """Percentile by explicit sort and neighbour interpolation at rank p*(K-1)."""
    s = sorted(float(v) for v in values)
    r = p * (len(s) - 1)
    lo = math.floor(r)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (r - lo) * (s[hi] - s[lo])


def loop_count(values, lo, hi):
    n = 0
    for v in values:
        if lo <= v <= hi:
            n += 1
    return n / len(values)


# ---------------------------------------------------------------------------
# normalization


def test_minmax_two_points():
    np.testing.assert_array_equal(normalize_logits([[-3.0, -5.0]]), [[1.0, 0.0]])


def test_constant_block_maps_to_half():
    np.testing.assert_array_equal(normalize_logits(np.full((3, 4), -2.5)), np.full((3, 4), 0.5))


def test_minmax_range(rng):
    out = normalize_logits(rng.normal(size=(5, 3)))
    assert out.min() == 0.0 and out.max() == 1.0


def test_positive_affine_invariance_of_normalization(rng):
    for _ in range(200):
        raw = rng.normal(size=(rng.integers(1, 6), rng.integers(2, 6)))
        np.testing.assert_allclose(normalize_logits(2 * raw + 7), normalize_logits(raw),
                                   rtol=0, atol=1e-12)


def test_nonfinite_logits_rejected():
    with pytest.raises(DataError):
        normalize_logits([[0.0, np.nan]])


def test_alternative_normalizations_available(rng):
    raw = rng.normal(size=(2, 3))
    z = normalize_logits(raw, "zscore")
    assert z.mean() == pytest.approx(0.0, abs=1e-12)
    s = normalize_logits(raw, "softmax")
    np.testing.assert_allclose(s.sum(axis=1), 1.0)


# ---------------------------------------------------------------------------
# percentiles and thresholds


def test_worked_percentile_example():
    lo, up = noise_percentiles(0.25, 0.75)
    assert abs(lo - 0.0625) <= 1e-15
    assert abs(up - 0.8125) <= 1e-15


@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5, 0.9, 1.0])
def test_percentile_edge_cases(alpha):
    assert noise_percentiles(alpha, 0.0) == (alpha, alpha)
    lo, up = noise_percentiles(alpha, 1.0)
    assert lo == pytest.approx(0.0, abs=1e-15) and up == pytest.approx(1.0, abs=1e-15)


def test_percentiles_match_exact_rational_arithmetic(rng):
    for a, b in rng.uniform(0, 1, size=(1000, 2)):
        fa, fb = Fraction(a), Fraction(b)
        lo, up = noise_percentiles(a, b)
        assert abs(Fraction(lo) - (fa - fa * fb)) <= Fraction(1, 10**15)
        assert abs(Fraction(up) - (fa + (1 - fa) * fb)) <= Fraction(1, 10**15)
        assert lo <= a <= up


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_percentiles_monotone_in_beta(alpha, b1, b2):
    b1, b2 = sorted((b1, b2))
    lo1, up1 = noise_percentiles(alpha, b1)
    lo2, up2 = noise_percentiles(alpha, b2)
    assert up2 >= up1 - 1e-15
    assert lo2 <= lo1 + 1e-15
    assert 0.0 <= lo2 <= up2 <= 1.0 + 1e-15


@pytest.mark.parametrize("a,b", [(-0.1, 0.5), (0.5, 1.2), (float("nan"), 0.5)])
def test_percentiles_reject_out_of_range(a, b):
    with pytest.raises(ConfigError):
        noise_percentiles(a, b)


def test_threshold_examples():
    assert thresholds([0.0, 1.0], 0.0, 1.0) == (0.0, 1.0)
    grid = np.linspace(0.0, 1.0, 11)
    lo, hi = thresholds(grid, 0.5, 0.5)
    assert lo == pytest.approx(0.5, abs=1e-15) and hi == pytest.approx(0.5, abs=1e-15)


def test_thresholds_match_sort_oracle(rng):
    for _ in range(300):
        v = rng.uniform(size=rng.integers(2, 60))
        lo, hi = thresholds(v, 0.0625, 0.8125)
        assert lo == pytest.approx(sorted_interp(v, 0.0625), abs=1e-12)
        assert hi == pytest.approx(sorted_interp(v, 0.8125), abs=1e-12)
        assert lo <= hi


def test_thresholds_need_two_values():
    with pytest.raises(DataError):
        thresholds([0.3], 0.1, 0.9)


# ---------------------------------------------------------------------------
# confidence score


def test_confidence_examples():
    assert confidence_score([0.1, 0.5, 0.9], 0.2, 0.8) == pytest.approx(1 / 3)
    assert confidence_score([0.0, 0.3, 1.0], 0.0, 1.0) == 1.0


def test_confidence_bounds_are_inclusive():
    assert confidence_score([0.2, 0.8, 0.81], 0.2, 0.8) == pytest.approx(2 / 3)


def test_confidence_matches_loop_count(rng):
    for _ in range(2000):
        v = rng.uniform(size=rng.integers(1, 30))
        lo, hi = np.sort(rng.uniform(size=2))
        assert confidence_score(v, lo, hi) == loop_count(v, lo, hi)


def test_confidence_exhaustive_small_grid():
    vals = [0.0, 0.25, 0.5, 0.75, 1.0]
    for lo in vals:
        for hi in vals:
            if lo > hi:
                continue
            for a in vals:
                for b in vals:
                    assert confidence_score([a, b], lo, hi) == loop_count([a, b], lo, hi)


# ---------------------------------------------------------------------------
# routing


def test_single_expert_always_chosen(rng):
    e = random_expert(rng, task_id=4)
    rep = predict_task([e], rng.normal(size=(3, 3)))
    assert rep.chosen_task == 4


def test_hand_run_skewed_versus_uniform():
    skewed = 2.0 * np.array([[1.0, 0.0, 0.0]]) + 7.0
    uniform = np.full((1, 3), -1.3)
    rep = route_logits({0: uniform, 1: skewed}, RouterConfig(continuum_size=1))
    # pooled normalized values: [0.5]*3 + [1, 0, 0] -> sorted [0, 0, .5, .5, .5, 1]
    # lower rank 0.0625*5 = 0.3125 -> 0; upper rank 0.8125*5 = 4.0625 -> 0.5 + 0.0625*0.5
    assert rep.region.lower_threshold == 0.0
    assert rep.region.upper_threshold == pytest.approx(0.53125, abs=1e-15)
    assert rep.per_task_scores == {0: 1.0, 1: pytest.approx(2 / 3)}
    assert rep.chosen_task == 1


def _random_logits(rng, T):
    m = int(rng.integers(1, 6))
    return {t: rng.normal(size=(m, int(rng.integers(2, 5)))) for t in range(T)}


def test_routing_invariant_under_affine_transforms(rng):
    for _ in range(300):
        logits = _random_logits(rng, int(rng.integers(2, 5)))
        moved = {t: rng.uniform(0.1, 10) * v + rng.normal(scale=5) for t, v in logits.items()}
        a, b = route_logits(logits), route_logits(moved)
        assert a.chosen_task == b.chosen_task
        assert a.per_task_scores == b.per_task_scores


def test_permuting_experts_follows_the_expert(rng):
    checked = 0
    while checked < 100:
        logits = _random_logits(rng, 4)
        rep = route_logits(logits)
        if len(set(rep.per_task_scores.values())) < 4:
            continue
        perm = rng.permutation(4)
        permuted = {int(perm[t]): v for t, v in logits.items()}
        rep2 = route_logits(permuted)
        for t in range(4):
            assert rep2.per_task_scores[int(perm[t])] == rep.per_task_scores[t]
        assert rep2.chosen_task == int(perm[rep.chosen_task])
        checked += 1


def test_pooled_score_is_weighted_mean_of_single_counts(rng):
    for _ in range(100):
        logits = _random_logits(rng, 3)
        rep = route_logits(logits)
        lo, hi = rep.region.lower_threshold, rep.region.upper_threshold
        for t, raw in logits.items():
            normed = normalize_logits(raw)
            per_row = [loop_count(row, lo, hi) * len(row) for row in normed]
            assert rep.per_task_scores[t] == pytest.approx(sum(per_row) / normed.size, abs=1e-15)


def test_zero_width_region_scores_zero_and_picks_task_zero():
    logits = {0: np.array([[0.0, 1.0, 0.3]]), 1: np.array([[0.0, 1.0, 0.7]])}
    # pooled sorted values 0,0,.3,.7,1,1; the 0.5 quantile falls between .3 and .7
    rep = route_logits(logits, RouterConfig(alpha=0.5, beta=0.0))
    assert rep.region.lower_threshold == rep.region.upper_threshold == pytest.approx(0.5)
    assert rep.per_task_scores == {0: 0.0, 1: 0.0}
    assert rep.chosen_task == 0


def test_ties_go_to_lowest_task_id():
    same = np.array([[0.0, 0.4, 1.0]])
    rep = route_logits({3: same, 1: same.copy(), 2: same.copy()})
    assert rep.chosen_task == 1


def test_empty_registry_rejected():
    with pytest.raises(ConfigError):
        route_logits({})
    with pytest.raises(ConfigError):
        predict_task([], np.zeros((1, 3)))


def test_mixed_input_widths_rejected(rng):
    a = random_expert(rng, sizes=(3, 4), task_id=0)
    b = random_expert(rng, sizes=(5, 4), task_id=1)
    with pytest.raises(DataError):
        predict_task([a, b], np.zeros((1, 3)))


def test_duplicate_task_ids_rejected(rng):
    with pytest.raises(ConfigError):
        predict_task([random_expert(rng), random_expert(rng)], np.zeros((1, 3)))


def test_router_config_validation():
    with pytest.raises(ConfigError):
        RouterConfig(alpha=1.5)
    with pytest.raises(ConfigError):
        RouterConfig(continuum_size=0)
    with pytest.raises(ConfigError):
        RouterConfig(normalization="rank")


def test_classify_uses_chosen_expert_with_offset(rng):
    experts = [random_expert(rng, task_id=t, class_offset=3 * t) for t in range(3)]
    X = rng.normal(size=(4, 3))
    task, preds, rep = classify(experts, X)
    assert task == rep.chosen_task
    chosen = experts[task]
    np.testing.assert_array_equal(preds, 3 * task + np.argmax(predict_logits(chosen, X), axis=1))


def test_classify_identical_samples_identical_predictions(rng):
    experts = [random_expert(rng, task_id=t, class_offset=3 * t) for t in range(3)]
    x = rng.normal(size=3)
    _, preds, _ = classify(experts, np.tile(x, (5, 1)))
    assert len(set(preds.tolist())) == 1


def test_report_csv(tmp_path):
    rep = route_logits({0: np.array([[0.0, 1.0, 0.3]]), 1: np.array([[0.0, 1.0, 0.7]])})
    write_reports(tmp_path / "r.csv", [(0, rep, 1)])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ("continuum_id,chosen_task,true_task,score_task0,score_task1,"
                        "lower_percentile,upper_percentile,lower_threshold,upper_threshold")
    assert lines[1].startswith("0,0,1,")
