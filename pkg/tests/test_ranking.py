"""Contrastive loss closed forms and ranking metric properties."""
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fgmine.errors import NumericError, UsageError
from fgmine.ranking import (
    ScoredEpisode,
    distance_stats_from_samples,
    pr_loss,
    pr_loss_from_scores,
    pr_loss_grad_from_scores,
    ranking_accuracy,
)

finite = st.floats(min_value=-30, max_value=30, allow_nan=False)


def test_uniform_scores_give_log_n_plus_one():
    for n in (1, 3, 7):
        assert abs(pr_loss_from_scores(0.5, [0.5] * n) - math.log(n + 1)) < 1e-9


def test_single_negative_equal_scores_is_log_two():
    assert abs(pr_loss_from_scores(2.0, [2.0]) - math.log(2.0)) < 1e-9


def test_mixed_case_log_five():
    # denominator exp(0) + 2 + 2 = 5 over exp(0) → ln 5 exactly
    assert abs(pr_loss_from_scores(0.0, [math.log(2), math.log(2)])
               - math.log(5)) < 1e-9


@given(s=finite, negs=st.lists(finite, min_size=1, max_size=6), c=finite)
def test_shift_invariance(s, negs, c):
    a = pr_loss_from_scores(s, negs)
    b = pr_loss_from_scores(s + c, [x + c for x in negs])
    assert abs(a - b) < 1e-9


@given(s=finite, negs=st.lists(finite, min_size=1, max_size=6))
def test_loss_positive_and_grad_sums_to_zero(s, negs):
    loss = pr_loss_from_scores(s, negs)
    # Loss and gradient signs are strict in exact arithmetic, but for score
    # gaps beyond ~36 the softmax residual drops below float64 resolution:
    # the loss rounds to exactly 0.0 and the positive's probability to exactly
    # 1.0, so all bounds here are non-strict.
    assert loss >= 0.0
    g = pr_loss_grad_from_scores(s, negs)
    assert abs(g.sum()) < 1e-12
    assert g[0] <= 0 and np.all(g[1:] >= 0)


def test_extreme_scores_do_not_overflow():
    assert math.isfinite(pr_loss_from_scores(1000.0, [-1000.0]))
    big = pr_loss_from_scores(-1000.0, [1000.0])
    assert big > 100  # dominated by the 2000 gap


def test_non_finite_scores_rejected():
    with pytest.raises(NumericError):
        pr_loss_from_scores(float("nan"), [0.0])
    with pytest.raises(NumericError):
        pr_loss_from_scores(0.0, [float("inf")])


def test_ranking_accuracy_strict_and_ties_fail():
    win = ScoredEpisode(s_pos=1.0, s_negs=(0.0, 0.5))
    tie = ScoredEpisode(s_pos=0.5, s_negs=(0.5, 0.1))
    lose = ScoredEpisode(s_pos=0.0, s_negs=(0.4,))
    assert ranking_accuracy([win]) == 1.0
    assert ranking_accuracy([tie]) == 0.0
    assert ranking_accuracy([win, tie, lose]) == pytest.approx(1 / 3)


def test_constant_scorer_scores_zero():
    eps = [ScoredEpisode(s_pos=0.0, s_negs=(0.0, 0.0)) for _ in range(10)]
    assert ranking_accuracy(eps) == 0.0


def test_ranking_accuracy_empty_rejected():
    with pytest.raises(UsageError):
        ranking_accuracy([])


ints = st.integers(min_value=-100, max_value=100)


@given(st.lists(st.tuples(ints, st.lists(ints, min_size=1, max_size=4)),
                min_size=1, max_size=8),
       st.integers(min_value=1, max_value=8), ints)
def test_accuracy_invariant_under_increasing_transform(raw, a, b):
    # integer scores and coefficients keep the transform exact in float64
    eps = [ScoredEpisode(s_pos=p, s_negs=tuple(n)) for p, n in raw]
    mapped = [ScoredEpisode(s_pos=a * p + b, s_negs=tuple(a * x + b for x in n))
              for p, n in raw]
    assert ranking_accuracy(eps) == ranking_accuracy(mapped)


def test_distance_stats_match_numpy():
    xs = [0.0, 1.0, 2.0, 5.0]
    stats = distance_stats_from_samples(xs)
    assert stats.mean == pytest.approx(np.mean(xs))
    assert stats.variance == pytest.approx(np.var(xs))
    assert stats.std == pytest.approx(np.std(xs))
    assert stats.n == 4


def test_distance_stats_need_two_samples():
    with pytest.raises(UsageError):
        distance_stats_from_samples([1.0])


def test_pr_loss_wrapper_matches_scores():
    ep = ScoredEpisode(s_pos=0.3, s_negs=(0.1, -0.2))
    assert pr_loss(ep) == pr_loss_from_scores(0.3, [0.1, -0.2])
