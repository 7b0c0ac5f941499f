"""Two-stream trajectory/instruction encoder and compatibility scorer.

Vision stream:   h_v = normalize(mean_k tanh(W_v f_k + b_v))
Language stream: h_L = normalize(mean_t tanh(W_l E[l_t] + b_l))
Scorer:          s   = w_2 . tanh(W_1 (h_v * h_L) + b_1) + b_2

normalize(z) = z / ||z|| when ||z|| > 1e-12, else z (zero branch).

All gradients are derived analytically, including the Jacobian of the
normalize step, and are checked against central finite differences in the
test suite. Every operation is pure: parameters are never mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NumericError, UsageError
from .world import Instruction, Trajectory

EPS_NORM = 1e-12


@dataclass(frozen=True)
class EncoderDims:
    frame_dim: int = 16   # D_f
    hidden_dim: int = 32  # D_h
    scorer_dim: int = 32  # D_m
    token_dim: int = 16   # D_e
    vocab_size: int = 1


@dataclass(frozen=True)
class EncoderParams:
    W_v: np.ndarray          # (D_h, D_f)
    b_v: np.ndarray          # (D_h,)
    token_table: np.ndarray  # (|V|, D_e)
    W_l: np.ndarray          # (D_h, D_e)
    b_l: np.ndarray          # (D_h,)
    W_1: np.ndarray          # (D_m, D_h)
    b_1: np.ndarray          # (D_m,)
    w_2: np.ndarray          # (D_m,)
    b_2: np.ndarray          # scalar, shape ()

    def __post_init__(self):
        # Keep every field a float64 ndarray; 0-d arithmetic otherwise
        # collapses b_2 to a numpy scalar.
        for f in fields(self):
            object.__setattr__(self, f.name,
                               np.asarray(getattr(self, f.name), dtype=np.float64))

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def dims(self) -> EncoderDims:
        return EncoderDims(
            frame_dim=self.W_v.shape[1],
            hidden_dim=self.W_v.shape[0],
            scorer_dim=self.W_1.shape[0],
            token_dim=self.token_table.shape[1],
            vocab_size=self.token_table.shape[0],
        )


PARAM_FIELDS = tuple(f.name for f in fields(EncoderParams))


@dataclass
class Gradients:
    W_v: np.ndarray
    b_v: np.ndarray
    token_table: np.ndarray
    W_l: np.ndarray
    b_l: np.ndarray
    W_1: np.ndarray
    b_1: np.ndarray
    w_2: np.ndarray
    b_2: np.ndarray

    @staticmethod
    def zeros_like(params: EncoderParams) -> "Gradients":
        return Gradients(**{n: np.zeros_like(getattr(params, n)) for n in PARAM_FIELDS})

    def add(self, other: "Gradients") -> None:
        for n in PARAM_FIELDS:
            getattr(self, n).__iadd__(getattr(other, n))

    def scale(self, c: float) -> "Gradients":
        return Gradients(**{n: getattr(self, n) * c for n in PARAM_FIELDS})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, n))) for n in PARAM_FIELDS)


def _uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[-1]
    fan_out = shape[0] if len(shape) > 1 else 1
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(dims: EncoderDims, seed: int) -> EncoderParams:
    """Scale-preserving uniform init; biases start at zero."""
    rng = np.random.default_rng(seed)
    return EncoderParams(
        W_v=_uniform(rng, (dims.hidden_dim, dims.frame_dim)),
        b_v=np.zeros(dims.hidden_dim),
        token_table=rng.uniform(-0.1, 0.1, size=(dims.vocab_size, dims.token_dim)),
        W_l=_uniform(rng, (dims.hidden_dim, dims.token_dim)),
        b_l=np.zeros(dims.hidden_dim),
        W_1=_uniform(rng, (dims.scorer_dim, dims.hidden_dim)),
        b_1=np.zeros(dims.scorer_dim),
        w_2=_uniform(rng, (dims.scorer_dim,)),
        b_2=np.zeros(()),
    )


def _normalize(z: np.ndarray) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(z))
    if norm > EPS_NORM:
        return z / norm, norm
    return z, norm


# ---------------------------------------------------------------------------
# Forward passes (with caches for backward)
# ---------------------------------------------------------------------------

@dataclass
class TrajCache:
    frames: np.ndarray  # (K, D_f)
    act: np.ndarray     # (K, D_h) tanh activations
    z: np.ndarray       # (D_h,) pre-normalize mean
    h: np.ndarray       # (D_h,) embedding
    norm: float


@dataclass
class InstrCache:
    tokens: tuple[int, ...]
    emb: np.ndarray     # (T, D_e)
    act: np.ndarray     # (T, D_h)
    z: np.ndarray
    h: np.ndarray
    norm: float


@dataclass
class ScoreCache:
    u: np.ndarray       # (D_h,) elementwise product
    q: np.ndarray       # (D_m,) tanh hidden
    s: float


def _encode_frames(params: EncoderParams, frames: np.ndarray) -> TrajCache:
    if not np.all(np.isfinite(frames)):
        raise NumericError("non-finite frame features")
    act = np.tanh(frames @ params.W_v.T + params.b_v)
    z = act.mean(axis=0)
    h, norm = _normalize(z)
    return TrajCache(frames=frames, act=act, z=z, h=h, norm=norm)


def _encode_tokens(params: EncoderParams, tokens: Sequence[int]) -> InstrCache:
    vocab = params.token_table.shape[0]
    tokens = tuple(int(t) for t in tokens)
    for t in tokens:
        if not (0 <= t < vocab):
            raise IndexError(f"token id {t} out of range [0, {vocab})")
    emb = params.token_table[list(tokens)]
    act = np.tanh(emb @ params.W_l.T + params.b_l)
    z = act.mean(axis=0)
    h, norm = _normalize(z)
    return InstrCache(tokens=tokens, emb=emb, act=act, z=z, h=h, norm=norm)


def encode_trajectory(params: EncoderParams, traj: Trajectory | np.ndarray) -> np.ndarray:
    frames = traj.frames if isinstance(traj, Trajectory) else np.asarray(traj)
    return _encode_frames(params, frames).h


def encode_instruction(params: EncoderParams, instr: Instruction | Sequence[int]) -> np.ndarray:
    tokens = instr.tokens if isinstance(instr, Instruction) else instr
    return _encode_tokens(params, tokens).h


def _score_embeddings(params: EncoderParams, h_v: np.ndarray, h_L: np.ndarray) -> ScoreCache:
    u = h_v * h_L
    q = np.tanh(params.W_1 @ u + params.b_1)
    s = float(params.w_2 @ q + params.b_2)
    return ScoreCache(u=u, q=q, s=s)


def score(params: EncoderParams, h_v: np.ndarray, h_L: np.ndarray) -> float:
    if h_v.shape != h_L.shape or h_v.shape != (params.W_1.shape[1],):
        raise UsageError("embedding shapes inconsistent with scorer")
    return _score_embeddings(params, h_v, h_L).s


@dataclass
class EpisodeForward:
    """Cached forward pass of one scored episode: positive first, then negatives."""
    trajs: list[TrajCache]       # index 0 = positive
    instr: InstrCache
    score_caches: list[ScoreCache]
    scores: np.ndarray           # (1 + n_neg,)


def forward_episode(params: EncoderParams, pos_frames: np.ndarray,
                    neg_frames: Sequence[np.ndarray],
                    tokens: Sequence[int]) -> EpisodeForward:
    instr = _encode_tokens(params, tokens)
    trajs = [_encode_frames(params, pos_frames)]
    trajs.extend(_encode_frames(params, f) for f in neg_frames)
    caches = [_score_embeddings(params, t.h, instr.h) for t in trajs]
    scores = np.array([c.s for c in caches])
    return EpisodeForward(trajs=trajs, instr=instr, score_caches=caches, scores=scores)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _normalize_backward(dh: np.ndarray, cache_z: np.ndarray, h: np.ndarray,
                        norm: float) -> np.ndarray:
    if norm > EPS_NORM:
        return (dh - h * (h @ dh)) / norm
    return dh  # zero branch: identity map


def backward_episode(params: EncoderParams, fwd: EpisodeForward,
                     dscores: np.ndarray) -> Gradients:
    """Exact gradients of sum_i dscores[i] * s_i w.r.t. all parameters."""
    if fwd is None or not fwd.score_caches:
        raise UsageError("missing forward cache")
    dscores = np.asarray(dscores, dtype=np.float64)
    if dscores.shape != fwd.scores.shape:
        raise UsageError(
            f"dscores shape {dscores.shape} does not match scores {fwd.scores.shape}")
    g = Gradients.zeros_like(params)
    dh_instr = np.zeros_like(fwd.instr.h)
    for ds, tc, sc in zip(dscores, fwd.trajs, fwd.score_caches):
        # scorer
        g.w_2 += ds * sc.q
        g.b_2 += ds
        dpre1 = (ds * params.w_2) * (1.0 - sc.q**2)
        g.W_1 += np.outer(dpre1, sc.u)
        g.b_1 += dpre1
        du = params.W_1.T @ dpre1
        dh_v = du * fwd.instr.h
        dh_instr += du * tc.h
        # vision stream
        dz = _normalize_backward(dh_v, tc.z, tc.h, tc.norm)
        dpre = (dz / tc.act.shape[0]) * (1.0 - tc.act**2)  # (K, D_h)
        g.W_v += dpre.T @ tc.frames
        g.b_v += dpre.sum(axis=0)
    # language stream (instruction shared by every score)
    ic = fwd.instr
    dz_l = _normalize_backward(dh_instr, ic.z, ic.h, ic.norm)
    dpre_l = (dz_l / ic.act.shape[0]) * (1.0 - ic.act**2)  # (T, D_h)
    g.W_l += dpre_l.T @ ic.emb
    g.b_l += dpre_l.sum(axis=0)
    demb = dpre_l @ params.W_l  # (T, D_e)
    np.add.at(g.token_table, list(ic.tokens), demb)
    return g


def sgd_step(params: EncoderParams, grads: Gradients, lr: float) -> EncoderParams:
    """p <- p - lr * g, returning new params (pure)."""
    if lr <= 0:
        raise UsageError(f"learning rate must be positive, got {lr}")
    if not grads.all_finite():
        raise NumericError("non-finite gradients; aborting update")
    return EncoderParams(
        **{n: getattr(params, n) - lr * getattr(grads, n) for n in PARAM_FIELDS})


# ---------------------------------------------------------------------------
# Batched (vectorized) evaluation helpers: same math as the scalar path,
# used for dataset-level scoring where per-episode Python overhead matters.
# ---------------------------------------------------------------------------

def encode_trajectories_batch(params: EncoderParams, frames: np.ndarray) -> np.ndarray:
    """frames (B, K, D_f) -> embeddings (B, D_h)."""
    act = np.tanh(frames @ params.W_v.T + params.b_v)
    z = act.mean(axis=1)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    scale = np.where(norms > EPS_NORM, norms, 1.0)
    return z / scale


def encode_instructions_batch(params: EncoderParams, tokens: np.ndarray) -> np.ndarray:
    """tokens (B, T) int array -> embeddings (B, D_h)."""
    emb = params.token_table[tokens]
    act = np.tanh(emb @ params.W_l.T + params.b_l)
    z = act.mean(axis=1)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    scale = np.where(norms > EPS_NORM, norms, 1.0)
    return z / scale


def score_batch(params: EncoderParams, h_v: np.ndarray, h_L: np.ndarray) -> np.ndarray:
    """Rows of h_v scored against matching rows of h_L."""
    u = h_v * h_L
    q = np.tanh(u @ params.W_1.T + params.b_1)
    return q @ params.w_2 + float(params.b_2)


# ---------------------------------------------------------------------------
# Checkpoint I/O: one JSON header line, then little-endian float64 tensors
# in declaration order.
# ---------------------------------------------------------------------------

def save_checkpoint(path: Path | str, params: EncoderParams, seed: int, step: int) -> None:
    dims = params.dims()
    header = {
        "dims": {
            "frame_dim": dims.frame_dim,
            "hidden_dim": dims.hidden_dim,
            "scorer_dim": dims.scorer_dim,
            "token_dim": dims.token_dim,
            "vocab_size": dims.vocab_size,
        },
        "seed": seed,
        "step": step,
        "fields": list(PARAM_FIELDS),
    }
    with Path(path).open("wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for n in PARAM_FIELDS:
            f.write(np.ascontiguousarray(getattr(params, n), dtype="<f8").tobytes())


def load_checkpoint(path: Path | str) -> tuple[EncoderParams, dict]:
    with Path(path).open("rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        dims = EncoderDims(**header["dims"])
        shapes = {
            "W_v": (dims.hidden_dim, dims.frame_dim),
            "b_v": (dims.hidden_dim,),
            "token_table": (dims.vocab_size, dims.token_dim),
            "W_l": (dims.hidden_dim, dims.token_dim),
            "b_l": (dims.hidden_dim,),
            "W_1": (dims.scorer_dim, dims.hidden_dim),
            "b_1": (dims.scorer_dim,),
            "w_2": (dims.scorer_dim,),
            "b_2": (),
        }
        arrays = {}
        for n in header["fields"]:
            shape = shapes[n]
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise UsageError(f"checkpoint truncated while reading {n}")
            arrays[n] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return EncoderParams(**arrays), header
