"""Contrastive path-ranking objective, ranking metrics, and the
embedding-distance analysis across negative styles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import NumericError, UsageError

STYLE_SHUFFLE = "shuffle"
STYLE_ALT_PATH = "alt_path"
STYLE_FINE = "fine_grained"
STYLES = (STYLE_SHUFFLE, STYLE_ALT_PATH, STYLE_FINE)


@dataclass(frozen=True)
class ScoredEpisode:
    s_pos: float
    s_negs: tuple[float, ...]
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if self.provenance and len(self.provenance) != len(self.s_negs):
            raise UsageError("provenance length must match negative count")


def _check_scores(s_pos: float, s_negs: Sequence[float]) -> np.ndarray:
    if len(s_negs) == 0:
        raise UsageError("at least one negative score is required")
    scores = np.concatenate([[s_pos], np.asarray(s_negs, dtype=np.float64)])
    if not np.all(np.isfinite(scores)):
        raise NumericError("scores must be finite")
    return scores


def pr_loss_from_scores(s_pos: float, s_negs: Sequence[float]) -> float:
    """-log softmax probability of the positive, stabilized via max-shift."""
    scores = _check_scores(s_pos, s_negs)
    m = scores.max()
    return float(np.log(np.exp(scores - m).sum()) - (s_pos - m))


def pr_loss(scored: ScoredEpisode) -> float:
    return pr_loss_from_scores(scored.s_pos, scored.s_negs)


def pr_loss_grad_from_scores(s_pos: float, s_negs: Sequence[float]) -> np.ndarray:
    """Gradient of pr_loss w.r.t. (s_pos, s_neg_1, ..., s_neg_N).

    Softmax cross-entropy: d/ds_pos = p_pos - 1, d/ds_neg_i = p_i.
    Entries sum to zero.
    """
    scores = _check_scores(s_pos, s_negs)
    m = scores.max()
    e = np.exp(scores - m)
    p = e / e.sum()
    grad = p.copy()
    grad[0] -= 1.0
    return grad


def pr_loss_grad(scored: ScoredEpisode) -> np.ndarray:
    return pr_loss_grad_from_scores(scored.s_pos, scored.s_negs)


def ranking_accuracy(episodes: Sequence[ScoredEpisode]) -> float:
    """Fraction of episodes whose positive strictly outranks every negative.

    Ties count as failures (the constant scorer must score 0).
    """
    if len(episodes) == 0:
        raise UsageError("at least one scored episode is required")
    wins = sum(1 for ep in episodes if ep.s_pos > max(ep.s_negs))
    return wins / len(episodes)


@dataclass(frozen=True)
class DistanceStats:
    mean: float
    variance: float
    std: float
    n: int


def distance_stats_from_samples(distances: Sequence[float]) -> DistanceStats:
    d = np.asarray(distances, dtype=np.float64)
    if d.size < 2:
        raise UsageError("need >= 2 distance samples per negative style")
    var = float(d.var())
    return DistanceStats(mean=float(d.mean()), variance=var, std=float(np.sqrt(var)), n=int(d.size))


def embedding_distance_stats(
    pairs_by_style: Mapping[str, Iterable[tuple[np.ndarray, np.ndarray]]],
) -> dict[str, DistanceStats]:
    """Per-style mean/variance of ||h_pos - h_neg||_2 over embedding pairs.

    The artifact reports both variance and standard deviation explicitly
    rather than committing to one convention for sigma.
    """
    out = {}
    for style, pairs in pairs_by_style.items():
        dists = [float(np.linalg.norm(a - b)) for a, b in pairs]
        out[style] = distance_stats_from_samples(dists)
    return out
