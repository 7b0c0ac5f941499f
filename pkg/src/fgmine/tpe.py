"""Tree-structured Parzen Estimator over fixed-cardinality mask space.

Maximization-oriented: trials are split into a good quantile and the rest;
per-frame-index categorical Parzen densities l (good) and g (bad) are built
with Laplace smoothing, candidates are drawn from l, and the candidate with
the largest density ratio prod l(k)/g(k) wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, UsageError
from .forge import Mask, random_mask

logger = logging.getLogger(__name__)


@dataclass
class TrialHistory:
    n_startup: int = 4
    gamma: float = 0.25
    n_candidates: int = 16
    alpha: float = 1.0
    trials: list[tuple[Mask, float]] = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise UsageError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.alpha <= 0:
            raise UsageError(f"alpha must be > 0, got {self.alpha}")

    def best_so_far(self) -> float:
        if not self.trials:
            raise UsageError("no trials observed yet")
        return max(obj for _, obj in self.trials)


def observe(history: TrialHistory, mask: Mask, objective: float) -> TrialHistory:
    """Append one trial. Duplicate masks are retained."""
    if not math.isfinite(objective):
        raise NumericError(f"objective must be finite, got {objective}")
    history.trials.append((mask, float(objective)))
    return history


@dataclass(frozen=True)
class ParzenSplit:
    good: tuple[tuple[Mask, float], ...]
    bad: tuple[tuple[Mask, float], ...]
    l: np.ndarray  # smoothed index probabilities over good masks
    g: np.ndarray  # same over the remainder


def parzen_split(history: TrialHistory, traj_len: int) -> ParzenSplit:
    n = len(history.trials)
    n_good = math.ceil(history.gamma * n)
    order = np.argsort([-obj for _, obj in history.trials], kind="stable")
    good = tuple(history.trials[i] for i in order[:n_good])
    bad = tuple(history.trials[i] for i in order[n_good:])

    def smoothed(trials) -> np.ndarray:
        counts = np.zeros(traj_len)
        for mask, _ in trials:
            for k in mask.indices:
                counts[k] += 1
        return (counts + history.alpha) / (counts.sum() + history.alpha * traj_len)

    return ParzenSplit(good=good, bad=bad, l=smoothed(good), g=smoothed(bad))


def _weighted_subset(probs: np.ndarray, n_rep: int, rng: np.random.Generator) -> Mask:
    """Sequential weighted draws without replacement with renormalization."""
    p = probs.astype(np.float64).copy()
    chosen = []
    for _ in range(n_rep):
        p_norm = p / p.sum()
        idx = int(rng.choice(len(p), p=p_norm))
        chosen.append(idx)
        p[idx] = 0.0
    return Mask(indices=tuple(chosen))


def propose(history: TrialHistory, traj_len: int, n_rep: int,
            rng: np.random.Generator) -> Mask:
    """Next mask to try: uniform during startup, density-ratio argmax after."""
    if not (1 <= n_rep <= traj_len - 1):
        raise UsageError(f"n_rep must be in [1, {traj_len - 1}], got {n_rep}")
    if len(history.trials) < history.n_startup:
        return random_mask(traj_len, n_rep, rng)
    split = parzen_split(history, traj_len)
    log_ratio = np.log(split.l) - np.log(split.g)
    best: Mask | None = None
    best_score = -np.inf
    for _ in range(history.n_candidates):
        cand = _weighted_subset(split.l, n_rep, rng)
        cand_score = float(sum(log_ratio[k] for k in cand.indices))
        if cand_score > best_score or (cand_score == best_score
                                       and best is not None and cand.indices < best.indices):
            best, best_score = cand, cand_score
    assert best is not None
    return best


def top_b(history: TrialHistory, b: int, traj_len: int, n_rep: int,
          rng: np.random.Generator) -> list[Mask]:
    """The b distinct masks with highest observed objectives.

    Masks are deduped keeping their max objective; if fewer than b distinct
    masks were observed, the set is padded with uniform random unseen masks.
    """
    if b < 1:
        raise UsageError(f"b must be >= 1, got {b}")
    best_by_mask: dict[Mask, float] = {}
    insertion: dict[Mask, int] = {}
    for i, (mask, obj) in enumerate(history.trials):
        if mask not in best_by_mask or obj > best_by_mask[mask]:
            best_by_mask[mask] = obj
        insertion.setdefault(mask, i)
    ranked = sorted(best_by_mask, key=lambda m: (-best_by_mask[m], insertion[m]))
    chosen = ranked[:b]
    if len(chosen) < b:
        logger.warning("top_b: only %d distinct masks observed, padding to %d "
                       "with uniform random unseen masks", len(chosen), b)
        seen = set(chosen)
        n_space = math.comb(traj_len, n_rep)
        while len(chosen) < b:
            cand = random_mask(traj_len, n_rep, rng)
            if cand not in seen:
                seen.add(cand)
                chosen.append(cand)
            elif len(seen) >= n_space:  # space exhausted; allow repeats
                chosen.append(cand)
    return chosen
