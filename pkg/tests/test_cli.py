"""End-to-end command-line behavior on a miniature world."""
import csv
import json

import pytest

from fgmine.cli import main, merge_train_config, read_config_file

GEN_FLAGS = ["--n-houses-seen", "2", "--n-houses-unseen", "2",
             "--rooms-per-house", "4", "--frame-dim", "8",
             "--traj-len", "4", "--seed", "5",
             "--n-seen", "16", "--n-unseen", "8"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(out)] + GEN_FLAGS) == 0
    return out


def test_gen_data_is_reproducible(tmp_path, data_dir):
    again = tmp_path / "again"
    assert main(["gen-data", "--out", str(again)] + GEN_FLAGS) == 0
    for name in ("world.json", "data_seen.jsonl", "data_unseen.jsonl"):
        assert (again / name).read_bytes() == (data_dir / name).read_bytes()


def test_gen_data_rejects_bad_config(tmp_path):
    code = main(["gen-data", "--out", str(tmp_path), "--n-houses-unseen", "0"])
    assert code == 2


def test_missing_required_flag_exits_2(capsys):
    assert main(["gen-data"]) == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_train_writes_run_artifacts(tmp_path, data_dir):
    code = main(["train", "--data", str(data_dir), "--out", str(tmp_path),
                 "--run-id", "r1", "--preset", "baseline", "--epochs", "1"])
    assert code == 0
    run = tmp_path / "r1"
    assert (run / "metrics.jsonl").exists()
    assert (run / "config.json").exists()
    assert (run / "summary.csv").exists()
    assert list(run.glob("ckpt_*.bin"))
    manifest = json.loads((run / "config.json").read_text())
    assert manifest["config"]["b"] == 0
    assert manifest["dataset_fingerprint"]
    records = [json.loads(line) for line in
               (run / "metrics.jsonl").read_text().splitlines()]
    assert {r["split"] for r in records} == {"seen", "unseen"}
    assert all(0 <= r["ranking_accuracy"] <= 1 for r in records)


def test_train_metrics_are_deterministic(tmp_path, data_dir):
    for rid in ("d1", "d2"):
        assert main(["train", "--data", str(data_dir), "--out", str(tmp_path),
                     "--run-id", rid, "--preset", "fgvln", "--epochs", "1"]) == 0
    a = (tmp_path / "d1" / "metrics.jsonl").read_bytes()
    b = (tmp_path / "d2" / "metrics.jsonl").read_bytes()
    assert a == b


def test_train_preset_fgvln_settings(tmp_path, data_dir):
    assert main(["train", "--data", str(data_dir), "--out", str(tmp_path),
                 "--run-id", "fg", "--preset", "fgvln", "--epochs", "1",
                 "--dump-bo"]) == 0
    manifest = json.loads((tmp_path / "fg" / "config.json").read_text())
    cfg = manifest["config"]
    assert (cfg["R"], cfg["b"], cfg["selector"], cfg["replacement"],
            cfg["sync_period"]) == (5, 2, "tpe", "out_domain", 4)
    trace = (tmp_path / "fg" / "mining_trace.jsonl").read_text().splitlines()
    assert trace
    rec = json.loads(trace[0])
    assert len(rec["trials"]) == 5 and len(rec["selected"]) == 2


def test_config_file_merging(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nlr = 0.5\nepochs = 7\nsync_period = none\n")
    values = read_config_file(str(cfg_file))
    cfg = merge_train_config("fgvln", values, {"epochs": 2})
    assert cfg.lr == 0.5
    assert cfg.epochs == 2      # flag wins over file
    assert cfg.sync_period is None


def test_config_file_unknown_key_rejected(tmp_path, data_dir):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("warp_drive = 1\n")
    code = main(["train", "--data", str(data_dir), "--out", str(tmp_path),
                 "--config", str(cfg_file), "--epochs", "1"])
    assert code == 2


def test_run_root_env_var(tmp_path, data_dir, monkeypatch):
    monkeypatch.setenv("FGMINE_RUN_ROOT", str(tmp_path / "envroot"))
    assert main(["train", "--data", str(data_dir), "--run-id", "env",
                 "--preset", "baseline", "--epochs", "1"]) == 0
    assert (tmp_path / "envroot" / "env" / "metrics.jsonl").exists()


def test_embed_analysis_outputs(tmp_path, data_dir):
    assert main(["train", "--data", str(data_dir), "--out", str(tmp_path),
                 "--run-id", "emb_src", "--preset", "baseline",
                 "--epochs", "1"]) == 0
    ckpt = next((tmp_path / "emb_src").glob("ckpt_*.bin"))
    out = tmp_path / "emb"
    assert main(["embed-analysis", "--checkpoint", str(ckpt),
                 "--data", str(data_dir), "--out", str(out)]) == 0
    with (out / "dist_report.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    styles = {r["style"] for r in rows}
    assert {"alt_path", "shuffle", "fine_grained"} <= styles
    for r in rows:
        assert float(r["mu"]) >= 0
    with (out / "proj.csv").open() as fh:
        proj = list(csv.DictReader(fh))
    n_eps = 16
    n_styles_slots = 3 + 1 + 2   # alt x3, shuffle, fine x2
    assert len(proj) == n_eps * (1 + n_styles_slots)


def test_ablate_grid_shape(tmp_path, data_dir):
    out = tmp_path / "abl"
    assert main(["ablate", "--data", str(data_dir), "--out", str(tmp_path),
                 "--run-id", "abl", "--seeds", "1", "--epochs", "1"]) == 0
    with (tmp_path / "abl" / "summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    seed_rows = [r for r in rows if r["seed"] != "mean"]
    mean_rows = [r for r in rows if r["seed"] == "mean"]
    assert len(seed_rows) == 7 * 1 * 2     # configs x seeds x splits
    assert len(mean_rows) == 7 * 2
    configs = {r["config"] for r in rows}
    assert "baseline" in configs and "tpe_r5_b2_out_j4" in configs
    # with one seed, the mean must equal that seed's value
    for m in mean_rows:
        (s,) = [r for r in seed_rows
                if r["config"] == m["config"] and r["split"] == m["split"]]
        assert float(m["ranking_accuracy"]) == pytest.approx(
            float(s["ranking_accuracy"]))


def test_print_config_round_trips(capsys):
    assert main(["print-config", "--preset", "fgvln"]) == 0
    merged = json.loads(capsys.readouterr().out)
    assert merged["train"]["R"] == 5
    assert "world" in merged
