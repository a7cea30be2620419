import dataclasses
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from darl.agent import TrainConfig
from darl.env import EnvConfig
from darl.harness import (
    ExperimentConfig,
    emit_plots,
    load_config,
    run_diag,
    run_eval,
    run_train,
    save_config,
)
from darl import cli


def tiny_config(out_dir, **overrides):
    """Small-everything config so harness tests stay fast."""
    env = EnvConfig(render_hw=24, crop_hw=20, episode_len=25)
    train = TrainConfig(z_dim=16, hidden_dim=32, disc_hidden=16, batch_size=8)
    base = dict(
        env=env,
        train=train,
        total_env_steps=700,
        eval_every=300,
        eval_episodes=1,
        initial_steps=200,
        replay_capacity=2000,
        run_seed=5,
        out_dir=str(out_dir),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def read_metrics(run_dir, drop_wall_time=True):
    out = []
    with open(run_dir / "metrics.jsonl") as f:
        for line in f:
            rec = json.loads(line)
            if drop_wall_time:
                rec.pop("wall_time_s")
            out.append(rec)
    return out


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    cfg = tiny_config(out)
    ckpt = run_train(cfg)
    return out, cfg, ckpt


class TestRunTrain:
    def test_outputs_exist(self, smoke_run):
        out, _, ckpt = smoke_run
        for name in ("config.json", "split.json", "metrics.jsonl", "summary.json"):
            assert (out / name).exists()
        assert (out / "final.ckpt").exists()
        assert ckpt == str(out / "final.ckpt")

    def test_metrics_record_shape(self, smoke_run):
        out, cfg, _ = smoke_run
        records = read_metrics(out, drop_wall_time=False)
        assert len(records) >= 2  # baseline + at least one eval point
        for rec in records:
            assert set(rec) == {
                "step",
                "per_domain_return",
                "feature_distances",
                "probe_accuracy",
                "losses",
                "wall_time_s",
            }
            n_domains = cfg.n_train_domains + cfg.n_test_domains + 2
            assert len(rec["per_domain_return"]) == n_domains
            # dense positive reward: every return strictly positive
            assert all(v > 0 for v in rec["per_domain_return"].values())
            assert 0.0 <= rec["probe_accuracy"] <= 1.0
        assert records[0]["step"] == 0
        assert records[-1]["step"] == cfg.total_env_steps

    def test_jsonl_lines_individually_valid(self, smoke_run):
        out, _, _ = smoke_run
        with open(out / "metrics.jsonl") as f:
            for line in f:
                json.loads(line)  # a crash mid-run leaves whole lines only

    def test_checkpoint_round_trip(self, smoke_run):
        out, cfg, ckpt = smoke_run
        from darl.agent import DarlAgent

        agent = DarlAgent(cfg.train, cfg.env, cfg.n_train_domains, cfg.run_seed)
        agent.load(ckpt)
        groups = dict(agent.state_groups())
        import darl.checkpoint as checkpoint

        stored = checkpoint.load_groups(ckpt)
        for name, arr in groups.items():
            assert np.asarray(stored[name]).tobytes() == np.asarray(arr).tobytes()

    def test_determinism_excluding_wall_time(self, smoke_run, tmp_path):
        out, cfg, ckpt = smoke_run
        cfg2 = dataclasses.replace(cfg, out_dir=str(tmp_path / "rerun"))
        ckpt2 = run_train(cfg2)
        assert read_metrics(out) == read_metrics(tmp_path / "rerun")
        assert Path(ckpt).read_bytes() == Path(ckpt2).read_bytes()

    def test_off_equals_grl_beta_zero(self, tmp_path):
        cfg_off = tiny_config(
            tmp_path / "off", train=TrainConfig(
                z_dim=16, hidden_dim=32, disc_hidden=16, batch_size=8,
                adversarial_mode="OFF",
            )
        )
        cfg_grl0 = tiny_config(
            tmp_path / "grl0", train=TrainConfig(
                z_dim=16, hidden_dim=32, disc_hidden=16, batch_size=8,
                adversarial_mode="GRL", beta=0.0,
            )
        )
        run_train(cfg_off)
        run_train(cfg_grl0)
        assert read_metrics(tmp_path / "off") == read_metrics(tmp_path / "grl0")

    def test_invalid_eval_cadence_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            tiny_config(tmp_path, eval_every=301)  # not a multiple of action_repeat


class TestConfigIO:
    def test_round_trip(self, tmp_path):
        cfg = tiny_config(tmp_path / "r")
        save_config(tmp_path / "c.json", cfg)
        assert load_config(tmp_path / "c.json") == cfg

    def test_resolved_copy_is_self_describing(self, smoke_run):
        out, cfg, _ = smoke_run
        doc = json.load(open(out / "config.json"))
        # every default materialized
        assert doc["train"]["tau"] == cfg.train.tau
        assert doc["env"]["action_repeat"] == cfg.env.action_repeat
        assert doc["eval_episodes"] == cfg.eval_episodes


class TestRunEval:
    def test_returns_positive_and_deterministic(self, smoke_run):
        out, _, ckpt = smoke_run
        r1 = run_eval(ckpt, out / "split.json", episodes=2)
        r2 = run_eval(ckpt, out / "split.json", episodes=2)
        assert r1 == r2
        for v in r1.values():
            assert v["mean_return"] > 0.0
            assert v["source"] in ("train", "test", "extra")

    def test_checkpoint_config_mismatch(self, smoke_run, tmp_path):
        out, cfg, ckpt = smoke_run
        from darl.checkpoint import CheckpointError
        import shutil

        bad = tmp_path / "bad"
        bad.mkdir()
        other = dataclasses.replace(
            cfg,
            train=dataclasses.replace(cfg.train, z_dim=8),
            out_dir=str(bad),
        )
        save_config(bad / "config.json", other)
        shutil.copy(out / "split.json", bad / "split.json")
        shutil.copy(ckpt, bad / "final.ckpt")
        with pytest.raises(CheckpointError):
            run_eval(bad / "final.ckpt", out / "split.json", episodes=1)


@pytest.fixture(scope="module")
def diag(smoke_run, tmp_path_factory):
    out, cfg, ckpt = smoke_run
    d = tmp_path_factory.mktemp("diag")
    doc = run_diag(ckpt, d, episodes_per_domain=1)
    return out, cfg, d, doc


class TestRunDiag:
    def test_csv_cardinality(self, diag):
        _, cfg, d, _ = diag
        rows = open(d / "embedding.csv").read().strip().split("\n")
        n_domains = cfg.n_train_domains + cfg.n_test_domains + 2
        assert len(rows) - 1 == n_domains * cfg.env.episode_len
        assert rows[0] == "point_id,domain_id,source,x,y"

    def test_bundle_contents(self, diag):
        _, cfg, d, doc = diag
        assert doc["probe_chance"] == pytest.approx(1.0 / cfg.n_train_domains)
        assert 0.0 <= doc["probe_accuracy"] <= 1.0
        # untrained-ish encoder: backgrounds are linearly visible
        assert doc["probe_accuracy"] > doc["probe_chance"] + 0.25
        assert len(doc["video_dissimilarity"]) == cfg.n_test_domains + 2
        assert (d / "distances.csv").exists()

    def test_svg_well_formed(self, diag):
        _, _, d, _ = diag
        ET.parse(d / "embedding.svg")


class TestPlots:
    def test_svg_and_band(self, smoke_run, tmp_path):
        out, _, _ = smoke_run
        svg = tmp_path / "curves.svg"
        emit_plots([out], svg)
        tree = ET.parse(svg)
        assert tree.getroot().tag.endswith("svg")

    def test_empty_input_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plots([], tmp_path / "x.svg")


class TestCli:
    def test_unknown_checkpoint_nonzero_exit(self, tmp_path, capsys):
        rc = cli.main(
            ["eval", "--ckpt", str(tmp_path / "nope.ckpt"), "--domains", "x", "--episodes", "1"]
        )
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error: ") and "\n" not in err.strip()

    def test_plot_subcommand(self, smoke_run, tmp_path, capsys):
        out, _, _ = smoke_run
        rc = cli.main(["plot", "--runs", str(out), "--out", str(tmp_path / "p.svg")])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["plot"] == str(tmp_path / "p.svg")
