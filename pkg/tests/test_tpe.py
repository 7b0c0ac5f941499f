"""Parzen-density mask search: split arithmetic, proposal behavior, top-b."""
import logging
import math

import numpy as np
import pytest

from fgmine.errors import NumericError, UsageError
from fgmine.forge import Mask
from fgmine.tpe import TrialHistory, observe, parzen_split, propose, top_b


def hist(trials, **kw):
    h = TrialHistory(**kw)
    for idx, obj in trials:
        observe(h, Mask(indices=idx), obj)
    return h


def test_hand_computed_density_split():
    # good = two masks {3}; bad = {1}, {5}; K=6, alpha=1:
    # l(3) = (2+1)/(2+6) = 0.375, g(3) = (0+1)/(2+6) = 0.125, ratio 3.0
    h = hist([((3,), 10.0), ((3,), 9.0), ((1,), 1.0), ((5,), 0.5)],
             gamma=0.5, alpha=1.0)
    split = parzen_split(h, traj_len=6)
    assert [m.indices for m, _ in split.good] == [(3,), (3,)]
    assert split.l[3] == pytest.approx(0.375)
    assert split.g[3] == pytest.approx(0.125)
    assert split.l[3] / split.g[3] == pytest.approx(3.0)


def test_good_set_size_is_ceiling_of_gamma_n():
    h = hist([((i % 5,), float(i)) for i in range(10)], gamma=0.25)
    split = parzen_split(h, traj_len=5)
    assert len(split.good) == math.ceil(0.25 * 10) == 3
    assert len(split.bad) == 7


def test_split_is_stable_under_equal_objectives():
    h = hist([((0,), 1.0), ((1,), 1.0), ((2,), 1.0), ((3,), 1.0)], gamma=0.5)
    split = parzen_split(h, traj_len=4)
    # stable sort keeps observation order among ties
    assert [m.indices for m, _ in split.good] == [(0,), (1,)]


def test_startup_proposals_are_uniform():
    h = TrialHistory(n_startup=5)
    rng = np.random.default_rng(0)
    counts = np.zeros(4)
    n = 100_000
    for _ in range(n):
        counts[propose(h, traj_len=4, n_rep=1, rng=rng).indices[0]] += 1
    assert np.all(np.abs(counts / n - 0.25) < 0.01)


def test_post_startup_proposals_prefer_good_index():
    h = hist([((3,), 10.0), ((3,), 9.0), ((1,), 1.0), ((5,), 0.5)],
             n_startup=4, gamma=0.5)
    rng = np.random.default_rng(1)
    hits = sum(propose(h, traj_len=6, n_rep=1, rng=rng).indices == (3,)
               for _ in range(200))
    # density ratio peaks uniquely at 3, so whenever a candidate batch
    # contains {3} it wins; missing entirely is (1-l(3))^16 rare
    assert hits > 190


def test_proposals_remain_valid_under_degenerate_history():
    h = hist([((i,), 1.0) for i in range(4)], n_startup=2)
    rng = np.random.default_rng(2)
    for _ in range(50):
        m = propose(h, traj_len=4, n_rep=2, rng=rng)
        m.validate(traj_len=4)
        assert m.n_rep == 2


def test_propose_rejects_bad_n_rep():
    h = TrialHistory()
    rng = np.random.default_rng(0)
    with pytest.raises(UsageError):
        propose(h, traj_len=4, n_rep=4, rng=rng)
    with pytest.raises(UsageError):
        propose(h, traj_len=4, n_rep=0, rng=rng)


def test_observe_rejects_non_finite():
    h = TrialHistory()
    with pytest.raises(NumericError):
        observe(h, Mask(indices=(0,)), float("nan"))


def test_best_so_far():
    h = hist([((0,), 1.0), ((1,), 3.0), ((2,), 2.0)])
    assert h.best_so_far() == 3.0
    with pytest.raises(UsageError):
        TrialHistory().best_so_far()


def test_invalid_hyperparameters_rejected():
    with pytest.raises(UsageError):
        TrialHistory(gamma=0.0)
    with pytest.raises(UsageError):
        TrialHistory(alpha=0.0)


def test_top_b_dedupes_keeping_max_objective():
    h = hist([((0,), 1.0), ((1,), 5.0), ((0,), 7.0), ((2,), 6.0)])
    rng = np.random.default_rng(3)
    out = top_b(h, b=2, traj_len=4, n_rep=1, rng=rng)
    assert [m.indices for m in out] == [(0,), (2,)]


def test_top_b_tie_prefers_earlier_observation():
    h = hist([((2,), 5.0), ((0,), 5.0)])
    rng = np.random.default_rng(4)
    out = top_b(h, b=1, traj_len=4, n_rep=1, rng=rng)
    assert out[0].indices == (2,)


def test_top_b_pads_with_unseen_masks_and_warns(caplog):
    h = hist([((1,), 2.0)])
    rng = np.random.default_rng(5)
    with caplog.at_level(logging.WARNING):
        out = top_b(h, b=3, traj_len=5, n_rep=1, rng=rng)
    assert len(out) == 3
    assert len(set(out)) == 3
    assert out[0].indices == (1,)
    assert any("padding" in rec.message for rec in caplog.records)


def test_top_b_exhausted_space_allows_repeats():
    h = hist([((0,), 1.0), ((1,), 2.0)])
    rng = np.random.default_rng(6)
    out = top_b(h, b=3, traj_len=2, n_rep=1, rng=rng)  # only 2 masks exist
    assert len(out) == 3


def test_planted_objective_concentration():
    """With reward only on masks containing index 3, post-startup proposals
    concentrate on 3 at well over the uniform rate."""
    rng = np.random.default_rng(7)
    hit = 0
    total = 0
    for session in range(50):
        srng = np.random.default_rng([7, session])
        h = TrialHistory(n_startup=4)
        proposals = []
        for t in range(20):
            m = propose(h, traj_len=8, n_rep=1, rng=srng)
            proposals.append(m)
            observe(h, m, 1.0 if 3 in m.indices else 0.0)
        for m in proposals[4:]:
            total += 1
            hit += 3 in m.indices
    assert hit / total > 2 * (1 / 8)
