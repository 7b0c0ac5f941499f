"""FGVLN-style min-max training orchestration.

Outer loop: one SGD step of the online model per episode on the
coarse+fine-grained negative batch. Inner loop: a fresh BO session per
episode searching mask space against the frozen target model. The target
is periodically hard-synced to the online model every `sync_period` outer
steps (None = frozen at init).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tpe
from .encoder import (
    EncoderDims,
    EncoderParams,
    encode_instructions_batch,
    encode_trajectories_batch,
    backward_episode,
    forward_episode,
    init_params,
    save_checkpoint,
    score_batch,
    sgd_step,
    _encode_frames,
    _encode_tokens,
    _score_embeddings,
)
from .errors import ConfigError, NumericError
from .forge import (
    IN_DOMAIN,
    OUT_DOMAIN,
    Mask,
    Replacement,
    apply_mask,
    draw_replacements,
    random_mask,
    shuffle_negative,
)
from .ranking import (
    STYLE_ALT_PATH,
    STYLE_FINE,
    STYLE_SHUFFLE,
    DistanceStats,
    distance_stats_from_samples,
    pr_loss_from_scores,
    pr_loss_grad_from_scores,
)
from .world import SEEN, UNSEEN, Episode, World, dataset

SELECTOR_TPE = "tpe"
SELECTOR_RANDOM = "random"
SELECTOR_EXHAUSTIVE = "exhaustive"
SELECTORS = (SELECTOR_TPE, SELECTOR_RANDOM, SELECTOR_EXHAUSTIVE)


@dataclass(frozen=True)
class TrainConfig:
    # Inner maximization
    R: int = 5                     # BO iterations per episode
    b: int = 2                     # fine-grained negatives per batch (0 = baseline)
    selector: str = SELECTOR_TPE
    n_rep: int = 1                 # mask cardinality
    replacement: str = OUT_DOMAIN
    gamma: float = 0.25
    n_candidates: int = 16
    n_startup: int = 0             # 0 -> ceil(R / 3)
    reuse_inner_frames: bool = False
    # Outer minimization
    sync_period: int | None = 4    # J; None freezes the target at init
    epochs: int = 30
    lr: float = 0.2
    seed: int = 0
    # Encoder dims
    hidden_dim: int = 32
    scorer_dim: int = 32
    token_dim: int = 16
    # Data (used when episodes are not supplied externally)
    n_coarse: int = 3
    n_train_episodes: int = 2000
    n_unseen_episodes: int = 500
    data_seed: int = 1
    # Evaluation pool: each episode's own coarse negatives plus forged
    # negatives rebuilt deterministically from eval_seed. The eval FGN
    # settings are fixed so every training configuration is scored against
    # the same candidate sets.
    eval_seed: int = 99
    n_eval_seen: int = 500
    eval_fine: int = 2
    eval_shuffle: bool = True
    eval_n_rep: int = 1
    eval_replacement: str = OUT_DOMAIN
    early_stop_seen_acc: float | None = None

    def resolved_n_startup(self) -> int:
        return self.n_startup if self.n_startup > 0 else -(-self.R // 3)

    def validate(self) -> None:
        if self.R < 1:
            raise ConfigError("R", "must be >= 1")
        if self.b < 0:
            raise ConfigError("b", "must be >= 0")
        if self.sync_period is not None and self.sync_period < 1:
            raise ConfigError("sync_period", "must be >= 1 or None")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr", "must be > 0")
        if self.selector not in SELECTORS:
            raise ConfigError("selector", f"must be one of {SELECTORS}")
        if self.replacement not in (IN_DOMAIN, OUT_DOMAIN):
            raise ConfigError("replacement", f"unknown mode {self.replacement!r}")
        if self.n_rep < 1:
            raise ConfigError("n_rep", "must be >= 1")


PRESETS = {
    # Table-style winner: more BO iterations, two FGNs, out-domain frames,
    # delayed target updates, TPE selector.
    "fgvln": dict(R=5, b=2, selector=SELECTOR_TPE, replacement=OUT_DOMAIN,
                  sync_period=4, n_rep=1),
    # Coarse-only trainer.
    "baseline": dict(b=0),
}


def preset_config(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; have {sorted(PRESETS)}")
    merged = dict(PRESETS[name])
    merged.update(overrides)
    return TrainConfig(**merged)


@dataclass
class ModelPair:
    online: EncoderParams
    target: EncoderParams
    sync_period: int | None
    total_steps: int = 0

    @property
    def steps_since_sync(self) -> int:
        if self.sync_period is None:
            return self.total_steps
        return self.total_steps % self.sync_period


def make_model_pair(params: EncoderParams, sync_period: int | None) -> ModelPair:
    return ModelPair(online=params, target=params.copy(), sync_period=sync_period)


def maybe_sync(pair: ModelPair) -> ModelPair:
    """Hard-copy online -> target when the outer step count hits a multiple
    of the sync period. Idempotent between steps."""
    if pair.sync_period is not None and pair.total_steps % pair.sync_period == 0:
        pair.target = pair.online.copy()
    return pair


# ---------------------------------------------------------------------------
# Inner maximization
# ---------------------------------------------------------------------------

@dataclass
class InnerResult:
    masks: list[Mask]
    replacements: dict[Mask, list[Replacement]]
    trials: list[tuple[Mask, float]]


def inner_maximize(pair: ModelPair, episode: Episode, cfg: TrainConfig,
                   world: World, rng: np.random.Generator) -> InnerResult:
    """R BO iterations against the frozen target; returns the b best masks.

    Each iteration forges one candidate FGN, scores the FGN-augmented
    candidate set with the target parameters only, and records the target
    PR loss as the BO objective. Target parameters are never modified.
    """
    target = pair.target
    K = world.cfg.traj_len
    instr = _encode_tokens(target, episode.instruction.tokens)
    pos = _encode_frames(target, episode.positive.frames)
    s_pos = _score_embeddings(target, pos.h, instr.h).s
    s_coarse = [
        _score_embeddings(target, _encode_frames(target, t.frames).h, instr.h).s
        for t in episode.coarse_negatives
    ]
    history = tpe.TrialHistory(n_startup=cfg.resolved_n_startup(), gamma=cfg.gamma,
                               n_candidates=cfg.n_candidates)
    replacements: dict[Mask, list[Replacement]] = {}
    best_obj: dict[Mask, float] = {}
    exhaustive = None
    if cfg.selector == SELECTOR_EXHAUSTIVE:
        exhaustive = itertools.cycle(
            Mask(indices=c) for c in itertools.combinations(range(K), cfg.n_rep))
    for _ in range(cfg.R):
        if cfg.selector == SELECTOR_TPE:
            mask = tpe.propose(history, K, cfg.n_rep, rng)
        elif cfg.selector == SELECTOR_RANDOM:
            mask = random_mask(K, cfg.n_rep, rng)
        else:
            mask = next(exhaustive)
        reps = draw_replacements(world, episode.positive, cfg.replacement, mask, rng)
        fgn = apply_mask(episode.positive, mask, reps)
        s_fgn = _score_embeddings(
            target, _encode_frames(target, fgn.frames).h, instr.h).s
        objective = pr_loss_from_scores(s_pos, s_coarse + [s_fgn])
        tpe.observe(history, mask, objective)
        # When a mask is proposed more than once, keep the replacement frames
        # from its hardest trial so the mined negative is the instance that
        # actually attained the recorded objective.
        if mask not in best_obj or objective > best_obj[mask]:
            best_obj[mask] = objective
            replacements[mask] = reps
    if cfg.b <= 0:
        masks = []
    elif cfg.selector == SELECTOR_RANDOM:
        # The random selector ablates the whole mining component: the trained
        # negatives are plain uniform masks (the first b distinct proposals),
        # and the trial objectives are logged but never used for selection.
        masks = []
        for mask, _ in history.trials:
            if mask not in masks:
                masks.append(mask)
            if len(masks) == cfg.b:
                break
        n_space = math.comb(K, cfg.n_rep)
        while len(masks) < cfg.b:
            cand = random_mask(K, cfg.n_rep, rng)
            if cand not in masks or len(set(masks)) >= n_space:
                masks.append(cand)
    else:
        masks = tpe.top_b(history, cfg.b, K, cfg.n_rep, rng)
    return InnerResult(masks=masks, replacements=replacements, trials=list(history.trials))


# ---------------------------------------------------------------------------
# Outer minimization
# ---------------------------------------------------------------------------

def outer_minimize_step(pair: ModelPair, episode: Episode, masks: Sequence[Mask],
                        cfg: TrainConfig, world: World,
                        rng: np.random.Generator,
                        inner: InnerResult | None = None) -> float:
    """One SGD step of the online model on the FGN batch; returns the loss."""
    fgn_frames = []
    for mask in masks:
        if cfg.reuse_inner_frames and inner is not None and mask in inner.replacements:
            reps = inner.replacements[mask]
        else:
            reps = draw_replacements(world, episode.positive, cfg.replacement, mask, rng)
        fgn_frames.append(apply_mask(episode.positive, mask, reps).frames)
    neg_frames = [t.frames for t in episode.coarse_negatives] + fgn_frames
    fwd = forward_episode(pair.online, episode.positive.frames, neg_frames,
                          episode.instruction.tokens)
    loss = pr_loss_from_scores(fwd.scores[0], fwd.scores[1:])
    dscores = pr_loss_grad_from_scores(fwd.scores[0], fwd.scores[1:])
    grads = backward_episode(pair.online, fwd, dscores)
    pair.online = sgd_step(pair.online, grads, cfg.lr)
    pair.total_steps += 1
    return loss


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalSet:
    pos_frames: np.ndarray   # (B, K, D_f)
    neg_frames: np.ndarray   # (B, n_neg, K, D_f)
    tokens: np.ndarray       # (B, T)
    provenance: tuple[str, ...]  # per negative slot, shared across episodes


def build_eval_set(episodes: Sequence[Episode], cfg: TrainConfig, world: World) -> EvalSet:
    """Deterministic evaluation pool: the episode's own alternate-path
    negatives plus forged shuffle / fine-grained negatives from eval_seed."""
    pos, negs, toks = [], [], []
    provenance: tuple[str, ...] | None = None
    for idx, ep in enumerate(episodes):
        rng = np.random.default_rng([cfg.eval_seed, idx])
        row = [t.frames for t in ep.coarse_negatives]
        prov = [STYLE_ALT_PATH] * len(ep.coarse_negatives)
        if cfg.eval_shuffle:
            row.append(shuffle_negative(world, ep.positive, rng).frames)
            prov.append(STYLE_SHUFFLE)
        for _ in range(cfg.eval_fine):
            mask = random_mask(world.cfg.traj_len, cfg.eval_n_rep, rng)
            reps = draw_replacements(world, ep.positive, cfg.eval_replacement, mask, rng)
            row.append(apply_mask(ep.positive, mask, reps).frames)
            prov.append(STYLE_FINE)
        pos.append(ep.positive.frames)
        negs.append(np.stack(row))
        toks.append(ep.instruction.tokens)
        provenance = tuple(prov)
    assert provenance is not None
    return EvalSet(pos_frames=np.stack(pos), neg_frames=np.stack(negs),
                   tokens=np.asarray(toks, dtype=np.int64), provenance=provenance)


@dataclass
class EvalResult:
    ranking_accuracy: float
    ranking_accuracy_forged: float | None
    mean_loss: float
    dist_stats: dict[str, DistanceStats]


def evaluate(params: EncoderParams, ev: EvalSet) -> EvalResult:
    """Score the pool and report two accuracies.

    ranking_accuracy: the positive strictly outranks every alternate-path
    candidate (the episode's own pool — the success-rate analog).
    ranking_accuracy_forged: mean pairwise win rate of the positive against
    the forged (shuffle / fine-grained) negatives; None when the pool holds
    no forged negatives. Pairwise, not pool-max, because each forged slot is
    an independent probe of single-frame sensitivity and the max statistic
    is dominated by the luckiest slot.
    """
    B, n_neg, K, D = ev.neg_frames.shape
    h_pos = encode_trajectories_batch(params, ev.pos_frames)          # (B, D_h)
    h_neg = encode_trajectories_batch(
        params, ev.neg_frames.reshape(B * n_neg, K, D)).reshape(B, n_neg, -1)
    h_ins = encode_instructions_batch(params, ev.tokens)              # (B, D_h)
    s_pos = score_batch(params, h_pos, h_ins)                         # (B,)
    h_ins_rep = np.repeat(h_ins, n_neg, axis=0)
    s_neg = score_batch(params, h_neg.reshape(B * n_neg, -1), h_ins_rep).reshape(B, n_neg)
    alt_cols = [j for j, p in enumerate(ev.provenance) if p == STYLE_ALT_PATH]
    forged_cols = [j for j, p in enumerate(ev.provenance) if p != STYLE_ALT_PATH]
    if alt_cols:
        acc = float(np.mean(s_pos > s_neg[:, alt_cols].max(axis=1)))
    else:
        acc = float(np.mean(s_pos > s_neg.max(axis=1)))
    acc_forged = None
    if forged_cols:
        acc_forged = float(np.mean(s_pos[:, None] > s_neg[:, forged_cols]))
    all_scores = np.concatenate([s_pos[:, None], s_neg], axis=1)
    m = all_scores.max(axis=1)
    losses = np.log(np.exp(all_scores - m[:, None]).sum(axis=1)) - (s_pos - m)
    dists = np.linalg.norm(h_pos[:, None, :] - h_neg, axis=2)         # (B, n_neg)
    stats = {}
    for style in dict.fromkeys(ev.provenance):
        cols = [j for j, p in enumerate(ev.provenance) if p == style]
        stats[style] = distance_stats_from_samples(dists[:, cols].ravel())
    return EvalResult(ranking_accuracy=acc, ranking_accuracy_forged=acc_forged,
                      mean_loss=float(losses.mean()), dist_stats=stats)


def _metrics_record(epoch: int, split: str, res: EvalResult) -> dict:
    return {
        "epoch": epoch,
        "split": split,
        "ranking_accuracy": res.ranking_accuracy,
        "ranking_accuracy_forged": res.ranking_accuracy_forged,
        "mean_loss": res.mean_loss,
        "dist_stats": {
            style: {"mu": st.mean, "sigma": st.std, "var": st.variance, "n": st.n}
            for style, st in res.dist_stats.items()
        },
    }


# ---------------------------------------------------------------------------
# Full training run
# ---------------------------------------------------------------------------

def default_datasets(cfg: TrainConfig, world: World) -> tuple[list[Episode], list[Episode]]:
    seen = dataset(world, SEEN, cfg.n_train_episodes, cfg.data_seed, cfg.n_coarse)
    unseen = dataset(world, UNSEEN, cfg.n_unseen_episodes, cfg.data_seed, cfg.n_coarse)
    return seen, unseen


def train(cfg: TrainConfig, world: World,
          seen_episodes: Sequence[Episode] | None = None,
          unseen_episodes: Sequence[Episode] | None = None,
          run_dir: Path | str | None = None,
          checkpoint_every: int | None = None) -> tuple[ModelPair, list[dict]]:
    """Run the full min-max procedure; returns the model pair and the
    per-epoch metrics history. Deterministic given (cfg, world, episodes)."""
    cfg.validate()
    if cfg.n_rep > world.cfg.traj_len - 1:
        raise ConfigError("n_rep", f"must be <= traj_len - 1 = {world.cfg.traj_len - 1}")
    if seen_episodes is None or unseen_episodes is None:
        gen_seen, gen_unseen = default_datasets(cfg, world)
        seen_episodes = seen_episodes or gen_seen
        unseen_episodes = unseen_episodes or gen_unseen
    dims = EncoderDims(frame_dim=world.cfg.frame_dim, hidden_dim=cfg.hidden_dim,
                       scorer_dim=cfg.scorer_dim, token_dim=cfg.token_dim,
                       vocab_size=world.vocab_size)
    pair = make_model_pair(init_params(dims, cfg.seed), cfg.sync_period)
    eval_seen = build_eval_set(seen_episodes[: cfg.n_eval_seen], cfg, world)
    eval_unseen = build_eval_set(unseen_episodes, cfg, world)

    run_dir = Path(run_dir) if run_dir is not None else None
    metrics_f = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        metrics_f = (run_dir / "metrics.jsonl").open("w")

    history: list[dict] = []

    def flush_epoch(epoch: int) -> dict:
        rec_seen = _metrics_record(epoch, SEEN, evaluate(pair.online, eval_seen))
        rec_unseen = _metrics_record(epoch, UNSEEN, evaluate(pair.online, eval_unseen))
        for rec in (rec_seen, rec_unseen):
            history.append(rec)
            if metrics_f is not None:
                metrics_f.write(json.dumps(rec, sort_keys=True) + "\n")
        if metrics_f is not None:
            metrics_f.flush()
        return rec_seen

    try:
        for epoch in range(1, cfg.epochs + 1):
            for idx, episode in enumerate(seen_episodes):
                rng = np.random.default_rng([cfg.seed, epoch, idx])
                maybe_sync(pair)
                inner = None
                masks: list[Mask] = []
                if cfg.b > 0:
                    inner = inner_maximize(pair, episode, cfg, world, rng)
                    masks = inner.masks
                outer_minimize_step(pair, episode, masks, cfg, world, rng, inner)
            rec_seen = flush_epoch(epoch)
            if run_dir is not None and checkpoint_every and epoch % checkpoint_every == 0:
                save_checkpoint(run_dir / f"ckpt_{pair.total_steps}.bin",
                                pair.online, cfg.seed, pair.total_steps)
            if (cfg.early_stop_seen_acc is not None
                    and rec_seen["ranking_accuracy"] >= cfg.early_stop_seen_acc):
                break
    except NumericError:
        # Preserve partial metrics, then surface the abort to the caller.
        if metrics_f is not None:
            metrics_f.close()
        raise
    if run_dir is not None:
        save_checkpoint(run_dir / f"ckpt_{pair.total_steps}.bin",
                        pair.online, cfg.seed, pair.total_steps)
        metrics_f.close()
    return pair, history


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**d)
