"""Mask application and negative forging: exact slot semantics."""
import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fgmine.errors import ConfigError, UsageError
from fgmine.forge import (
    IN_DOMAIN,
    OUT_DOMAIN,
    Mask,
    Replacement,
    apply_mask,
    draw_replacements,
    make_fgn_pair,
    random_mask,
    shuffle_negative,
)
from fgmine.world import SEEN, WorldConfig, dataset, generate_world


def make_world(**kw):
    base = dict(n_houses_seen=2, n_houses_unseen=2, rooms_per_house=4,
                frame_dim=6, traj_len=4, instr_len=8, seed=7, rooms_per_walk=3)
    base.update(kw)
    return generate_world(WorldConfig(**base))


def make_traj(rng, world):
    return dataset(world, SEEN, 1, int(rng.integers(1000)))[0].positive


def test_mask_normalizes_and_validates():
    m = Mask(indices=(3, 1))
    assert m.indices == (1, 3)
    assert m.n_rep == 2
    m.validate(traj_len=5)
    with pytest.raises(UsageError):
        Mask(indices=(0, 1, 2, 3)).validate(traj_len=4)  # full replacement
    with pytest.raises(UsageError):
        Mask(indices=()).validate(traj_len=4)
    with pytest.raises(UsageError):
        Mask(indices=(4,)).validate(traj_len=4)


def test_as_binary():
    assert Mask(indices=(0, 2)).as_binary(4).tolist() == [1, 0, 1, 0]


def test_apply_mask_exhaustive_slot_identity():
    """Every mask at K=4: output slot k equals the replacement iff masked."""
    rng = np.random.default_rng(0)
    world = make_world()
    for _ in range(100):
        pos = make_traj(rng, world)
        K = len(pos.room_sequence)
        for n_rep in (1, 2, 3):
            for combo in itertools.combinations(range(K), n_rep):
                mask = Mask(indices=combo)
                reps = [Replacement(frame=rng.normal(size=pos.frames.shape[1]),
                                    room_id=0, house_id=pos.house_id)
                        for _ in combo]
                forged = apply_mask(pos, mask, reps)
                for k in range(K):
                    if k in combo:
                        j = combo.index(k)
                        assert np.array_equal(forged.frames[k], reps[j].frame)
                    else:
                        assert np.array_equal(forged.frames[k], pos.frames[k])


def test_apply_mask_leaves_input_untouched():
    rng = np.random.default_rng(1)
    world = make_world()
    pos = make_traj(rng, world)
    before = pos.frames.copy()
    mask = Mask(indices=(1,))
    apply_mask(pos, mask, [Replacement(frame=np.zeros(6), room_id=0,
                                       house_id=pos.house_id)])
    assert np.array_equal(pos.frames, before)


@given(st.integers(min_value=2, max_value=12), st.data())
def test_random_mask_within_bounds(traj_len, data):
    n_rep = data.draw(st.integers(min_value=1, max_value=traj_len - 1))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    m = random_mask(traj_len, n_rep, rng)
    assert m.n_rep == n_rep
    assert all(0 <= k < traj_len for k in m.indices)
    assert len(set(m.indices)) == n_rep


def test_random_mask_covers_space_uniformly():
    # K=4, n_rep=1: each singleton should appear ~25% of the time
    rng = np.random.default_rng(2)
    counts = np.zeros(4)
    n = 20_000
    for _ in range(n):
        counts[random_mask(4, 1, rng).indices[0]] += 1
    assert np.all(np.abs(counts / n - 0.25) < 0.02)


def test_in_domain_replacements_same_house_different_room():
    rng = np.random.default_rng(3)
    world = make_world()
    pos = make_traj(rng, world)
    mask = Mask(indices=(0, 2))
    reps = draw_replacements(world, pos, IN_DOMAIN, mask, rng)
    for k, rep in zip(mask.indices, reps):
        assert rep.house_id == pos.house_id
        assert rep.room_id != pos.room_sequence[k]
        assert rep.room_id in world.house_rooms(pos.house_id)


def test_out_domain_replacements_other_house_same_split():
    rng = np.random.default_rng(4)
    world = make_world()
    pos = make_traj(rng, world)
    mask = Mask(indices=(1,))
    for _ in range(50):
        (rep,) = draw_replacements(world, pos, OUT_DOMAIN, mask, rng)
        assert rep.house_id != pos.house_id
        assert rep.house_id in world.seen_houses  # never leaks across splits
        assert rep.room_id in world.house_rooms(rep.house_id)


def test_out_domain_needs_two_houses_in_split():
    world = make_world(n_houses_seen=1)
    rng = np.random.default_rng(5)
    pos = make_traj(rng, world)
    with pytest.raises(ConfigError):
        draw_replacements(world, pos, OUT_DOMAIN, Mask(indices=(0,)), rng)


def test_unknown_mode_rejected():
    world = make_world()
    rng = np.random.default_rng(6)
    pos = make_traj(rng, world)
    with pytest.raises(ConfigError):
        draw_replacements(world, pos, "sideways", Mask(indices=(0,)), rng)


def test_make_fgn_pair_keeps_instruction():
    rng = np.random.default_rng(7)
    world = make_world()
    ep = dataset(world, SEEN, 1, 3)[0]
    mask = Mask(indices=(2,))
    reps = draw_replacements(world, ep.positive, OUT_DOMAIN, mask, rng)
    traj, instr = make_fgn_pair(ep.positive, ep.instruction, mask, reps)
    assert instr is ep.instruction
    assert not np.array_equal(traj.frames, ep.positive.frames)


def test_shuffle_negative_differs_and_preserves_shape():
    rng = np.random.default_rng(8)
    world = make_world()
    pos = make_traj(rng, world)
    for _ in range(20):
        neg = shuffle_negative(world, pos, rng)
        assert neg.frames.shape == pos.frames.shape
        assert neg.house_id == pos.house_id
        assert not np.array_equal(neg.frames, pos.frames)
