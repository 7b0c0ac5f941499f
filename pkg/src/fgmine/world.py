"""Deterministic synthetic navigation world.

Houses contain rooms; each room has a feature-space center and a unique
instruction token. A trajectory is a room walk rendered as noisy frame
feature vectors; its instruction lists the visited rooms' tokens in order
(optionally interleaved with distractor tokens). Everything is a pure
function of (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, GenerationError

PAD_TOKEN = 0

SEEN = "seen"
UNSEEN = "unseen"


@dataclass(frozen=True)
class WorldConfig:
    n_houses_seen: int = 4
    n_houses_unseen: int = 4
    rooms_per_house: int = 6
    frame_dim: int = 16
    vocab_size: int = 0  # 0 -> auto: rooms_total + 1 + n_distractor_tokens
    traj_len: int = 8
    instr_len: int = 12
    frame_noise_sigma: float = 0.1
    distractor_token_rate: float = 0.1
    seed: int = 0
    # A walk stays inside a small room subset so the instruction's room set
    # actually identifies the path (mean pooling cannot see visit order).
    rooms_per_walk: int = 3
    # Geometry of the feature space: room center = house_spread * mu_house
    # + room_spread * u_room. Houses form clusters when room_spread is
    # smaller than house_spread.
    # Values chosen so tanh stays unsaturated (frame norms ~1-2) while house
    # clusters remain separable; larger spreads freeze the vision stream.
    house_spread: float = 0.6
    room_spread: float = 0.4
    n_distractor_tokens: int = 20

    @property
    def n_houses(self) -> int:
        return self.n_houses_seen + self.n_houses_unseen

    @property
    def n_rooms_total(self) -> int:
        return self.rooms_per_house * self.n_houses

    def resolved_vocab_size(self) -> int:
        if self.vocab_size > 0:
            return self.vocab_size
        return self.n_rooms_total + 1 + self.n_distractor_tokens

    def validate(self) -> None:
        counts = {
            "n_houses_seen": self.n_houses_seen,
            "n_houses_unseen": self.n_houses_unseen,
            "rooms_per_house": self.rooms_per_house,
            "frame_dim": self.frame_dim,
            "traj_len": self.traj_len,
            "instr_len": self.instr_len,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(name, f"must be >= 1, got {value}")
        if self.traj_len < 2:
            raise ConfigError("traj_len", "must be >= 2 so a mask is a strict subset")
        if self.rooms_per_house < 2:
            raise ConfigError("rooms_per_house", "must be >= 2 for room walks")
        if not (2 <= self.rooms_per_walk < self.rooms_per_house):
            raise ConfigError(
                "rooms_per_walk",
                f"must be in [2, rooms_per_house) = [2, {self.rooms_per_house}), "
                f"got {self.rooms_per_walk}")
        if self.frame_noise_sigma < 0:
            raise ConfigError("frame_noise_sigma", "must be >= 0")
        if not (0.0 <= self.distractor_token_rate <= 1.0):
            raise ConfigError("distractor_token_rate", "must be in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed", "must be a nonnegative integer")
        vocab = self.resolved_vocab_size()
        if vocab < self.n_rooms_total + 1:
            raise ConfigError(
                "vocab_size",
                f"must be >= rooms_per_house * n_houses + 1 = {self.n_rooms_total + 1}, got {vocab}",
            )


@dataclass(frozen=True)
class Trajectory:
    frames: np.ndarray  # (K, D_f)
    house_id: int
    room_sequence: tuple[int, ...]

    def __post_init__(self):
        if len(self.room_sequence) != self.frames.shape[0]:
            raise ConfigError("room_sequence", "length must match frame count")


@dataclass(frozen=True)
class Instruction:
    tokens: tuple[int, ...]


@dataclass(frozen=True)
class Episode:
    positive: Trajectory
    instruction: Instruction
    coarse_negatives: tuple[Trajectory, ...]
    split: str


@dataclass(frozen=True)
class World:
    cfg: WorldConfig
    centers: np.ndarray  # (n_rooms_total, D_f); room id indexes rows
    seen_houses: tuple[int, ...]
    unseen_houses: tuple[int, ...]

    @property
    def vocab_size(self) -> int:
        return self.cfg.resolved_vocab_size()

    def house_rooms(self, house_id: int) -> range:
        r = self.cfg.rooms_per_house
        return range(house_id * r, (house_id + 1) * r)

    def room_token(self, room_id: int) -> int:
        return room_id + 1  # token 0 is PAD

    def distractor_tokens(self) -> range:
        return range(self.cfg.n_rooms_total + 1, self.vocab_size)

    def houses_for(self, split: str) -> tuple[int, ...]:
        if split == SEEN:
            return self.seen_houses
        if split == UNSEEN:
            return self.unseen_houses
        raise ConfigError("split", f"unknown split {split!r}")


def generate_world(cfg: WorldConfig) -> World:
    """Build the full world deterministically from cfg.seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    house_mu = cfg.house_spread * rng.standard_normal((cfg.n_houses, cfg.frame_dim))
    jitter = cfg.room_spread * rng.standard_normal((cfg.n_rooms_total, cfg.frame_dim))
    centers = np.repeat(house_mu, cfg.rooms_per_house, axis=0) + jitter
    seen = tuple(range(cfg.n_houses_seen))
    unseen = tuple(range(cfg.n_houses_seen, cfg.n_houses))
    return World(cfg=cfg, centers=centers, seen_houses=seen, unseen_houses=unseen)


def sample_frame(world: World, room_id: int, rng: np.random.Generator) -> np.ndarray:
    cfg = world.cfg
    noise = rng.standard_normal(cfg.frame_dim) * cfg.frame_noise_sigma
    return world.centers[room_id] + noise


def _room_walk(world: World, house_id: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Random walk confined to a rooms_per_walk subset of the house,
    consecutive rooms distinct."""
    rooms = list(world.house_rooms(house_id))
    subset = sorted(rng.choice(len(rooms), size=world.cfg.rooms_per_walk, replace=False))
    subset = [rooms[i] for i in subset]
    seq = [subset[rng.integers(len(subset))]]
    for _ in range(world.cfg.traj_len - 1):
        options = [r for r in subset if r != seq[-1]]
        seq.append(options[rng.integers(len(options))])
    return tuple(seq)


def _render_trajectory(world: World, house_id: int, rooms: Sequence[int],
                       rng: np.random.Generator) -> Trajectory:
    cfg = world.cfg
    noise = rng.standard_normal((cfg.traj_len, cfg.frame_dim)) * cfg.frame_noise_sigma
    frames = world.centers[list(rooms)] + noise
    return Trajectory(frames=frames, house_id=house_id, room_sequence=tuple(rooms))


def _build_instruction(world: World, rooms: Sequence[int], rng: np.random.Generator) -> Instruction:
    cfg = world.cfg
    seen_rooms: list[int] = []
    for r in rooms:
        if r not in seen_rooms:
            seen_rooms.append(r)
    distractors = world.distractor_tokens()
    tokens: list[int] = []
    for r in seen_rooms:
        if len(distractors) > 0 and rng.random() < cfg.distractor_token_rate:
            tokens.append(int(rng.integers(distractors.start, distractors.stop)))
        tokens.append(world.room_token(r))
    tokens = tokens[: cfg.instr_len]
    tokens += [PAD_TOKEN] * (cfg.instr_len - len(tokens))
    return Instruction(tokens=tuple(tokens))


def sample_episode(world: World, split: str, n_coarse: int,
                   rng: np.random.Generator) -> Episode:
    """One positive trajectory-instruction pair plus alternate-path negatives."""
    houses = world.houses_for(split)
    if not houses:
        raise GenerationError(f"split {split!r} has no houses")
    if n_coarse < 1:
        raise ConfigError("n_coarse", "must be >= 1")
    house_id = int(houses[rng.integers(len(houses))])
    pos_rooms = _room_walk(world, house_id, rng)
    positive = _render_trajectory(world, house_id, pos_rooms, rng)
    instruction = _build_instruction(world, pos_rooms, rng)
    negatives = []
    for _ in range(n_coarse):
        # Alternate paths must visit a different room set, not merely a
        # different sequence: order information is invisible to mean pooling,
        # so a set-equal walk would be an unlearnable tie.
        alt_rooms = _room_walk(world, house_id, rng)
        while set(alt_rooms) == set(pos_rooms):
            alt_rooms = _room_walk(world, house_id, rng)
        negatives.append(_render_trajectory(world, house_id, alt_rooms, rng))
    return Episode(positive=positive, instruction=instruction,
                   coarse_negatives=tuple(negatives), split=split)


def dataset(world: World, split: str, n_episodes: int, seed: int,
            n_coarse: int = 3) -> list[Episode]:
    """Deterministic episode list; episode i derives its own rng stream."""
    if n_episodes < 1:
        raise ConfigError("n_episodes", "must be >= 1")
    out = []
    for i in range(n_episodes):
        rng = np.random.default_rng([seed, i])
        out.append(sample_episode(world, split, n_coarse, rng))
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _traj_record(t: Trajectory) -> dict:
    return {
        "frames": t.frames.tolist(),
        "rooms": list(t.room_sequence),
        "house": t.house_id,
    }


def _traj_from_record(rec: dict) -> Trajectory:
    return Trajectory(
        frames=np.asarray(rec["frames"], dtype=np.float64),
        house_id=int(rec["house"]),
        room_sequence=tuple(int(r) for r in rec["rooms"]),
    )


def episode_to_record(ep: Episode) -> dict:
    return {
        "positive": _traj_record(ep.positive),
        "instruction": list(ep.instruction.tokens),
        "negatives": [_traj_record(t) for t in ep.coarse_negatives],
        "split": ep.split,
    }


def episode_from_record(rec: dict) -> Episode:
    return Episode(
        positive=_traj_from_record(rec["positive"]),
        instruction=Instruction(tokens=tuple(int(t) for t in rec["instruction"])),
        coarse_negatives=tuple(_traj_from_record(r) for r in rec["negatives"]),
        split=rec["split"],
    )


def write_dataset(episodes: Iterable[Episode], path: Path | str) -> None:
    path = Path(path)
    with path.open("w") as f:
        for ep in episodes:
            f.write(json.dumps(episode_to_record(ep), sort_keys=True))
            f.write("\n")


def read_dataset(path: Path | str) -> list[Episode]:
    out = []
    with Path(path).open() as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(episode_from_record(json.loads(line)))
    return out


def save_world(world: World, path: Path | str) -> None:
    rec = {
        "cfg": asdict(world.cfg),
        "centers": world.centers.tolist(),
        "seen_houses": list(world.seen_houses),
        "unseen_houses": list(world.unseen_houses),
    }
    Path(path).write_text(json.dumps(rec, sort_keys=True))


def load_world(path: Path | str) -> World:
    rec = json.loads(Path(path).read_text())
    return World(
        cfg=WorldConfig(**rec["cfg"]),
        centers=np.asarray(rec["centers"], dtype=np.float64),
        seen_houses=tuple(rec["seen_houses"]),
        unseen_houses=tuple(rec["unseen_houses"]),
    )
