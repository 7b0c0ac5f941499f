"""Negative trajectory generation: coarse shuffles and fine-grained
mask replacement with in-/out-domain replacement frames."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, UsageError
from .world import Instruction, Trajectory, World, sample_frame

IN_DOMAIN = "in_domain"
OUT_DOMAIN = "out_domain"


@dataclass(frozen=True, order=True)
class Mask:
    """Fixed-cardinality frame-replacement indicator: sorted frame indices."""
    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(sorted(int(i) for i in self.indices)))
        if len(set(self.indices)) != len(self.indices):
            raise UsageError(f"mask indices must be distinct, got {self.indices}")

    @property
    def n_rep(self) -> int:
        return len(self.indices)

    def validate(self, traj_len: int) -> None:
        if not (1 <= self.n_rep <= traj_len - 1):
            raise UsageError(
                f"mask cardinality must be in [1, {traj_len - 1}], got {self.n_rep}")
        if any(i < 0 or i >= traj_len for i in self.indices):
            raise UsageError(f"mask indices out of range [0, {traj_len})")

    def as_binary(self, traj_len: int) -> np.ndarray:
        m = np.zeros(traj_len, dtype=np.int64)
        m[list(self.indices)] = 1
        return m


def random_mask(traj_len: int, n_rep: int, rng: np.random.Generator) -> Mask:
    """Uniform draw over the K-choose-n_rep fixed-cardinality masks."""
    if not (1 <= n_rep <= traj_len - 1):
        raise UsageError(f"n_rep must be in [1, {traj_len - 1}], got {n_rep}")
    return Mask(indices=tuple(rng.choice(traj_len, size=n_rep, replace=False)))


@dataclass(frozen=True)
class Replacement:
    frame: np.ndarray
    room_id: int
    house_id: int


def apply_mask(v_pos: Trajectory, mask: Mask, replacements: Sequence[Replacement]) -> Trajectory:
    """output[k] = replacement if k in mask else v_pos frame k (Eq-style identity)."""
    K = v_pos.frames.shape[0]
    mask.validate(K)
    if len(replacements) != mask.n_rep:
        raise UsageError(
            f"need {mask.n_rep} replacements for the mask, got {len(replacements)}")
    frames = v_pos.frames.copy()
    rooms = list(v_pos.room_sequence)
    for k, rep in zip(mask.indices, replacements):
        frames[k] = rep.frame
        rooms[k] = rep.room_id
    return Trajectory(frames=frames, house_id=v_pos.house_id, room_sequence=tuple(rooms))


def shuffle_negative(world: World, v_pos: Trajectory, rng: np.random.Generator,
                     resample_one: bool = True) -> Trajectory:
    """Non-identity frame permutation; by default one frame is additionally
    resampled from another room of the same house so the negative stays
    distinguishable under order-invariant pooling."""
    K = v_pos.frames.shape[0]
    if K < 2:
        raise UsageError("need at least 2 frames to shuffle")
    if K == 2:
        perm = np.array([1, 0])
    else:
        perm = rng.permutation(K)
        while np.array_equal(perm, np.arange(K)):
            perm = rng.permutation(K)
    frames = v_pos.frames[perm].copy()
    rooms = [v_pos.room_sequence[i] for i in perm]
    if resample_one:
        slot = int(rng.integers(K))
        visited = set(rooms)
        options = [r for r in world.house_rooms(v_pos.house_id) if r not in visited]
        if not options:  # walk covers the whole house; any other room will do
            options = [r for r in world.house_rooms(v_pos.house_id) if r != rooms[slot]]
        new_room = int(options[rng.integers(len(options))])
        frames[slot] = sample_frame(world, new_room, rng)
        rooms[slot] = new_room
    return Trajectory(frames=frames, house_id=v_pos.house_id, room_sequence=tuple(rooms))


def draw_replacements(world: World, v_pos: Trajectory, mode: str, mask: Mask,
                      rng: np.random.Generator) -> list[Replacement]:
    """One independently sampled replacement frame per masked slot.

    in_domain: a room of the positive's house other than the room at the slot.
    out_domain: a room of a uniformly chosen different house.
    """
    if mode not in (IN_DOMAIN, OUT_DOMAIN):
        raise ConfigError("replacement", f"unknown mode {mode!r}")
    # Replacement material stays within the positive's split so seen
    # episodes never leak frames from unseen houses (and vice versa).
    if v_pos.house_id in world.seen_houses:
        pool_houses = tuple(world.seen_houses)
    else:
        pool_houses = tuple(world.unseen_houses)
    if mode == OUT_DOMAIN and len(pool_houses) < 2:
        raise ConfigError("replacement", "out_domain needs at least 2 houses in the split")
    out = []
    for k in mask.indices:
        if mode == IN_DOMAIN:
            options = [r for r in world.house_rooms(v_pos.house_id)
                       if r != v_pos.room_sequence[k]]
            room = int(options[rng.integers(len(options))])
            house = v_pos.house_id
        else:
            others = [h for h in pool_houses if h != v_pos.house_id]
            house = int(others[rng.integers(len(others))])
            rooms = list(world.house_rooms(house))
            room = int(rooms[rng.integers(len(rooms))])
        out.append(Replacement(frame=sample_frame(world, room, rng),
                               room_id=room, house_id=house))
    return out


def make_fgn_pair(v_pos: Trajectory, instr_pos: Instruction, mask: Mask,
                  replacements: Sequence[Replacement]) -> tuple[Trajectory, Instruction]:
    """Fine-grained negative: masked trajectory paired with the positive instruction."""
    return apply_mask(v_pos, mask, replacements), instr_pos
