"""Command-line surface: data generation, training, the ablation grid,
and embedding-distance analysis.

Subcommands: gen-data, train, ablate, embed-analysis, print-config.
Exit codes: 0 success, 2 config/usage error, 3 numeric abort, 4 I/O error.
The env var FGMINE_RUN_ROOT overrides the output root directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .encoder import load_checkpoint
from .errors import ConfigError, FgmineError, NumericError, UsageError

from .training import (
    PRESETS,
    TrainConfig,
    build_eval_set,
    config_to_dict,
    evaluate,
    preset_config,
    train,
)
from .world import (
    SEEN,
    UNSEEN,
    WorldConfig,
    dataset,
    generate_world,
    load_world,
    read_dataset,
    save_world,
    write_dataset,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

SUMMARY_SCHEMA_VERSION = 1
SUMMARY_COLUMNS = ("schema_version", "config", "seed", "split",
                   "ranking_accuracy", "ranking_accuracy_forged", "mean_loss")

# Table-style ablation grid: name -> TrainConfig overrides. The baseline row
# trains on coarse negatives only; the rest vary selector, budget R, number of
# mined negatives b, replacement source, and target-sync delay.
ABLATION_GRID = {
    "baseline": dict(b=0),
    "rand_r5_b2_out_j4": dict(R=5, b=2, selector="random",
                              replacement="out_domain", sync_period=4),
    "tpe_r3_b1_in_j1": dict(R=3, b=1, selector="tpe",
                            replacement="in_domain", sync_period=1),
    "tpe_r3_b1_in_j4": dict(R=3, b=1, selector="tpe",
                            replacement="in_domain", sync_period=4),
    "tpe_r3_b1_out_j4": dict(R=3, b=1, selector="tpe",
                             replacement="out_domain", sync_period=4),
    "tpe_r3_b2_out_j4": dict(R=3, b=2, selector="tpe",
                             replacement="out_domain", sync_period=4),
    "tpe_r5_b2_out_j4": dict(R=5, b=2, selector="tpe",
                             replacement="out_domain", sync_period=4),
}


def run_root(flag_value: str | None) -> Path:
    if flag_value:
        return Path(flag_value)
    env = os.environ.get("FGMINE_RUN_ROOT")
    return Path(env) if env else Path("runs")


def read_config_file(path: str) -> dict:
    """Flat key=value file; '#' starts a comment. Flags win over file values."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config_file", f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def coerce(value: str, target):
    if isinstance(target, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError("config_file", f"expected a boolean, got {value!r}")
    if target is None or isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    return value


def merge_train_config(preset: str | None, file_values: dict, flag_values: dict) -> TrainConfig:
    cfg = preset_config(preset) if preset else TrainConfig()
    merged = config_to_dict(cfg)
    known = set(merged)
    for key, raw in file_values.items():
        if key not in known:
            raise ConfigError(key, "unknown config key")
        if key == "sync_period" and raw.lower() in ("none", "inf"):
            merged[key] = None
        else:
            merged[key] = coerce(raw, merged[key])
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    cfg = TrainConfig(**merged)
    cfg.validate()
    return cfg


def dataset_fingerprint(paths: list[Path]) -> str:
    h = hashlib.sha256()
    for path in sorted(paths):
        h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(run_dir: Path, cfg: TrainConfig, world_cfg: WorldConfig,
                   fingerprint: str) -> None:
    manifest = {
        "run_id": run_dir.name,
        "config": config_to_dict(cfg),
        "world_config": dataclasses.asdict(world_cfg),
        "dataset_fingerprint": fingerprint,
        "tool_version": __version__,
        "started_unix": time.time(),
    }
    (run_dir / "config.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def add_world_flags(p: argparse.ArgumentParser) -> None:
    defaults = WorldConfig()
    for f in dataclasses.fields(WorldConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, type=type(getattr(defaults, f.name)), default=None)


def world_config_from_args(args: argparse.Namespace) -> WorldConfig:
    values = {}
    for f in dataclasses.fields(WorldConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = WorldConfig(**values)
    cfg.validate()
    return cfg


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = world_config_from_args(args)
    out = run_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(cfg)
    save_world(world, out / "world.json")
    write_dataset(dataset(world, SEEN, args.n_seen, args.data_seed, args.n_coarse),
                  out / "data_seen.jsonl")
    write_dataset(dataset(world, UNSEEN, args.n_unseen, args.data_seed, args.n_coarse),
                  out / "data_unseen.jsonl")
    print(f"wrote world.json, data_seen.jsonl, data_unseen.jsonl to {out}")
    return EXIT_OK


def load_run_inputs(data_dir: Path):
    world = load_world(data_dir / "world.json")
    seen = read_dataset(data_dir / "data_seen.jsonl")
    unseen = read_dataset(data_dir / "data_unseen.jsonl")
    fp = dataset_fingerprint([data_dir / "data_seen.jsonl",
                              data_dir / "data_unseen.jsonl"])
    return world, seen, unseen, fp


def train_flag_values(args: argparse.Namespace) -> dict:
    mapping = {
        "selector": args.selector,
        "b": args.fgn,
        "R": args.budget,
        "replacement": {"out": "out_domain", "in": "in_domain",
                        None: None}.get(args.replacement, args.replacement),
        "sync_period": args.sync_period,
        "epochs": args.epochs,
        "lr": args.lr,
        "seed": args.seed,
        "n_rep": args.n_rep,
    }
    return {k: v for k, v in mapping.items() if v is not None}


def cmd_train(args: argparse.Namespace) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    cfg = merge_train_config(args.preset, file_values, train_flag_values(args))
    data_dir = Path(args.data)
    world, seen, unseen, fp = load_run_inputs(data_dir)
    run_dir = run_root(args.out) / (args.run_id or f"train_{cfg.selector}_b{cfg.b}_s{cfg.seed}")
    run_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(run_dir, cfg, world.cfg, fp)
    pair, history = train(cfg, world, seen, unseen, run_dir=run_dir,
                          checkpoint_every=args.checkpoint_every)
    if args.dump_bo or args.dump_negatives:
        dump_mining_trace(run_dir, cfg, world, seen, args)
    final = [rec for rec in history if rec["epoch"] == max(r["epoch"] for r in history)]
    for rec in final:
        print(f"{rec['split']}: ranking_accuracy={rec['ranking_accuracy']:.4f} "
              f"forged={rec['ranking_accuracy_forged']} loss={rec['mean_loss']:.4f}")
    write_summary_csv(run_dir / "summary.csv", [
        summary_row("train", cfg.seed, rec) for rec in final])
    print(f"run dir: {run_dir}")
    return EXIT_OK


def dump_mining_trace(run_dir: Path, cfg: TrainConfig, world, seen, args) -> None:
    """Log the inner-loop trials / forged negatives for the first few episodes."""
    from .training import inner_maximize, make_model_pair
    from .encoder import EncoderDims, init_params
    dims = EncoderDims(frame_dim=world.cfg.frame_dim, hidden_dim=cfg.hidden_dim,
                       scorer_dim=cfg.scorer_dim, token_dim=cfg.token_dim,
                       vocab_size=world.vocab_size)
    pair = make_model_pair(init_params(dims, cfg.seed), cfg.sync_period)
    with (run_dir / "mining_trace.jsonl").open("w") as fh:
        for idx, ep in enumerate(seen[:8]):
            if cfg.b == 0:
                break
            rng = np.random.default_rng([cfg.seed, 0, idx])
            result = inner_maximize(pair, ep, cfg, world, rng)
            rec = {"episode": idx,
                   "trials": [{"mask": list(m.indices), "objective": obj}
                              for m, obj in result.trials],
                   "selected": [list(m.indices) for m in result.masks]}
            if args.dump_negatives:
                rec["replacements"] = {
                    str(list(m.indices)): [r.room_id for r in reps]
                    for m, reps in result.replacements.items()}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def summary_row(config_name: str, seed, rec: dict) -> dict:
    return {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "config": config_name,
        "seed": seed,
        "split": rec["split"],
        "ranking_accuracy": rec["ranking_accuracy"],
        "ranking_accuracy_forged": rec["ranking_accuracy_forged"],
        "mean_loss": rec["mean_loss"],
    }


def write_summary_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def cmd_ablate(args: argparse.Namespace) -> int:
    data_dir = Path(args.data)
    world, seen, unseen, fp = load_run_inputs(data_dir)
    root = run_root(args.out) / (args.run_id or "ablation")
    root.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    failures: list[str] = []
    for name, overrides in ABLATION_GRID.items():
        for seed in range(args.seeds):
            cfg = TrainConfig(**{**config_to_dict(TrainConfig()), **overrides})
            cfg = dataclasses.replace(cfg, seed=seed, epochs=args.epochs or cfg.epochs,
                                      lr=args.lr if args.lr is not None else cfg.lr)
            run_dir = root / f"{name}_s{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            write_manifest(run_dir, cfg, world.cfg, fp)
            try:
                _, history = train(cfg, world, seen, unseen, run_dir=run_dir)
            except FgmineError as exc:
                logger.error("ablation run %s seed %d failed: %s", name, seed, exc)
                failures.append(f"{name}_s{seed}: {exc}")
                continue
            last_epoch = max(rec["epoch"] for rec in history)
            for rec in history:
                if rec["epoch"] == last_epoch:
                    rows.append(summary_row(name, seed, rec))
            print(f"{name} seed {seed}: done", flush=True)
    # per-config means over seeds, one row per split, seed column = 'mean'
    for name in ABLATION_GRID:
        for split in (SEEN, UNSEEN):
            vals = [r for r in rows if r["config"] == name and r["split"] == split
                    and r["seed"] != "mean"]
            if not vals:
                continue
            rows.append({
                "schema_version": SUMMARY_SCHEMA_VERSION,
                "config": name, "seed": "mean", "split": split,
                "ranking_accuracy": statistics.mean(r["ranking_accuracy"] for r in vals),
                "ranking_accuracy_forged": statistics.mean(
                    r["ranking_accuracy_forged"] for r in vals
                    if r["ranking_accuracy_forged"] is not None),
                "mean_loss": statistics.mean(r["mean_loss"] for r in vals),
            })
    write_summary_csv(root / "summary.csv", rows)
    if failures:
        print(f"{len(failures)} sub-run(s) failed: {failures}")

    def config_mean(name, split):
        for r in rows:
            if r["config"] == name and r["seed"] == "mean" and r["split"] == split:
                return r["ranking_accuracy_forged"]
        return None

    full = config_mean("tpe_r5_b2_out_j4", UNSEEN)
    base = config_mean("baseline", UNSEEN)
    if full is not None and base is not None:
        verdict = "holds" if full > base else "FAILED"
        print(f"directional check unseen forged accuracy: "
              f"tpe_r5_b2_out_j4 {full:.4f} vs baseline {base:.4f} -> {verdict}")
    print(f"summary: {root / 'summary.csv'}")
    return EXIT_OK


def cmd_embed_analysis(args: argparse.Namespace) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    data_dir = Path(args.data)
    world = load_world(data_dir / "world.json")
    split = args.split
    episodes = read_dataset(data_dir / f"data_{split}.jsonl")
    if args.limit:
        episodes = episodes[: args.limit]
    cfg = TrainConfig()
    if params.token_table.shape[0] != world.vocab_size:
        raise ConfigError("checkpoint",
                          f"vocab size mismatch: checkpoint {params.token_table.shape[0]} "
                          f"vs world {world.vocab_size}")
    ev = build_eval_set(episodes, cfg, world)
    res = evaluate(params, ev)
    out = run_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "dist_report.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["style", "mu", "sigma", "var", "n"])
        for style, st in res.dist_stats.items():
            writer.writerow([style, st.mean, st.std, st.variance, st.n])
    write_projection_csv(out / "proj.csv", params, ev)
    print(f"wrote dist_report.csv and proj.csv to {out}")
    return EXIT_OK


def write_projection_csv(path: Path, params, ev) -> None:
    """Top-2 PCA of the pooled trajectory embeddings, one row per embedding."""
    from .encoder import encode_trajectories_batch
    B, n_neg, K, D = ev.neg_frames.shape
    h_pos = encode_trajectories_batch(params, ev.pos_frames)
    h_neg = encode_trajectories_batch(
        params, ev.neg_frames.reshape(B * n_neg, K, D)).reshape(B, n_neg, -1)
    pooled = np.concatenate([h_pos, h_neg.reshape(B * n_neg, -1)], axis=0)
    centered = pooled - pooled.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:2].T
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode_id", "style", "x", "y"])
        for i in range(B):
            writer.writerow([i, "positive", proj[i, 0], proj[i, 1]])
        for j in range(n_neg):
            for i in range(B):
                row = B + j * B + i  # reshape order: negatives grouped per episode
                flat = B + i * n_neg + j
                writer.writerow([i, ev.provenance[j], proj[flat, 0], proj[flat, 1]])


def cmd_print_config(args: argparse.Namespace) -> int:
    cfg = preset_config(args.preset) if args.preset else TrainConfig()
    merged = {"train": config_to_dict(cfg),
              "world": dataclasses.asdict(WorldConfig())}
    print(json.dumps(merged, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgmine",
        description="Fine-grained negative mining for path-instruction ranking")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-data", help="generate a world and datasets")
    add_world_flags(p_gen)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--n-seen", type=int, default=2000)
    p_gen.add_argument("--n-unseen", type=int, default=500)
    p_gen.add_argument("--n-coarse", type=int, default=3)
    p_gen.add_argument("--data-seed", type=int, default=1)
    p_gen.set_defaults(func=cmd_gen_data)

    p_train = sub.add_parser("train", help="run the min-max trainer")
    p_train.add_argument("--data", required=True, help="directory from gen-data")
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--run-id", default=None)
    p_train.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p_train.add_argument("--config", default=None, help="key=value file; flags win")
    p_train.add_argument("--selector", choices=("tpe", "random"), default=None)
    p_train.add_argument("--fgn", type=int, default=None, help="mined negatives b")
    p_train.add_argument("--budget", type=int, default=None, help="inner iterations R")
    p_train.add_argument("--replacement", choices=("in", "out", "in_domain", "out_domain"),
                         default=None)
    p_train.add_argument("--sync-period", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--n-rep", type=int, default=None)
    p_train.add_argument("--checkpoint-every", type=int, default=None)
    p_train.add_argument("--dump-bo", action="store_true",
                         help="write inner-loop trial trace")
    p_train.add_argument("--dump-negatives", action="store_true",
                         help="include forged replacement rooms in the trace")
    p_train.set_defaults(func=cmd_train)

    p_abl = sub.add_parser("ablate", help="run the ablation grid")
    p_abl.add_argument("--data", required=True)
    p_abl.add_argument("--out", default=None)
    p_abl.add_argument("--run-id", default=None)
    p_abl.add_argument("--seeds", type=int, default=3)
    p_abl.add_argument("--epochs", type=int, default=None)
    p_abl.add_argument("--lr", type=float, default=None)
    p_abl.set_defaults(func=cmd_ablate)

    p_emb = sub.add_parser("embed-analysis", help="embedding distance report")
    p_emb.add_argument("--checkpoint", required=True)
    p_emb.add_argument("--data", required=True)
    p_emb.add_argument("--split", choices=(SEEN, UNSEEN), default=SEEN)
    p_emb.add_argument("--limit", type=int, default=None)
    p_emb.add_argument("--out", default=None)
    p_emb.set_defaults(func=cmd_embed_analysis)

    p_cfg = sub.add_parser("print-config", help="print materialized defaults")
    p_cfg.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p_cfg.set_defaults(func=cmd_print_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; keep its convention
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
