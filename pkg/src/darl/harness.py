"""Experiment orchestration: training loop, evaluation, diagnostics, plots.

Layout of a run directory:
  config.json     resolved experiment configuration (self-describing)
  split.json      train / test / extra domain specs
  metrics.jsonl   one record per evaluation point (append-only)
  final.ckpt      agent checkpoint at the end of training
  summary.json    headline numbers for quick inspection
"""

import dataclasses
import json
import os
import time
from pathlib import Path

import numpy as np

from .agent import DarlAgent, NanLossError, TrainConfig
from .autodiff import Tensor, no_grad
from .checkpoint import CheckpointError
from .diagnostics import (
    EmbeddingConfig,
    FeatureSet,
    feature_mean_l2,
    probe_accuracy,
    tsne_embed,
    video_dissimilarity,
)
from .env import BlockMDPEnv, EnvConfig, load_split, make_domain_split, save_split
from .replay import ReplayBuffer, center_crop


@dataclasses.dataclass
class ExperimentConfig:
    env: EnvConfig = dataclasses.field(default_factory=EnvConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    n_train_domains: int = 4
    n_test_domains: int = 2
    split_seed: int = 0
    total_env_steps: int = 100_000
    eval_every: int = 2_000
    eval_episodes: int = 10
    initial_steps: int = 1_000
    replay_capacity: int = 100_000
    run_seed: int = 0
    out_dir: str = "run"

    def __post_init__(self):
        if self.eval_every <= 0 or self.eval_every % self.env.action_repeat != 0:
            raise ValueError(
                "eval_every must be a positive multiple of action_repeat (%d)"
                % self.env.action_repeat
            )
        if self.total_env_steps < self.initial_steps:
            raise ValueError("total_env_steps must cover the warmup")

    def to_json(self):
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        if "env" in d:
            d["env"] = EnvConfig(**d["env"])
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)


def load_config(path):
    with open(path) as f:
        return ExperimentConfig.from_json(json.load(f))


def save_config(path, config):
    with open(path, "w") as f:
        json.dump(config.to_json(), f, indent=2, sort_keys=True)


def eval_contexts():
    """Parallel-evaluation context cap from DARL_THREADS.

    Forward passes share the autodiff module's grad-mode flag, so evaluation
    currently runs serially; the env var is honored as an upper bound.
    """
    try:
        requested = int(os.environ.get("DARL_THREADS", "1"))
    except ValueError:
        requested = 1
    return max(1, min(requested, 1))


# ---------------------------------------------------------------------------
# rollouts


def _policy_features_and_actions(agent, frames_batch, crop_hw):
    """Eval-mode actions plus the encoder features they were computed from."""
    cropped = center_crop(frames_batch, crop_hw)
    with no_grad():
        z = agent.encoder(Tensor(cropped))
        a = agent.actor.mean_action(z)
    return z.data, a


def rollout_domain(agent, domain, env_cfg, episodes, seed_parts, collect_frames=False):
    """Run `episodes` eval-mode episodes in lockstep on one domain.

    Returns (returns: (episodes,), features: (episodes*T, z_dim), frames or None).
    Lockstep works because every episode has the same fixed length.
    """
    envs = [BlockMDPEnv(domain, env_cfg) for _ in range(episodes)]
    obs = [
        env.reset(np.random.SeedSequence(list(seed_parts) + [domain.domain_id, ep]))
        for ep, env in enumerate(envs)
    ]
    returns = np.zeros(episodes)
    features, frames = [], []
    for _ in range(env_cfg.episode_len):
        batch = np.stack([o.frames for o in obs])
        if collect_frames:
            # most recent frame of the stack, per episode
            frames.append(batch[:, -env_cfg.channels :])
        z, actions = _policy_features_and_actions(agent, batch, env_cfg.crop_hw)
        features.append(z)
        for i, env in enumerate(envs):
            obs[i], r, _ = env.step(actions[i])
            returns[i] += r
    feats = np.concatenate(features, axis=0)
    raw = np.concatenate(frames, axis=0) if collect_frames else None
    return returns, feats, raw


def matched_rollouts(agent, domains, env_cfg, n_obs, seed_parts, collect_frames=False):
    """Shared-latent rollouts: one latent trajectory rendered in every domain.

    Every domain replays the same reset seeds and the same action sequence
    (eval-mode actions computed in the first listed domain), so per-domain
    features differ only through the emission function — any residual
    domain-decodability is representation leakage, not a state confound.

    Returns ({domain_id: (n_obs, z_dim)}, {domain_id: raw frames or None}).
    """
    episodes = -(-n_obs // env_cfg.episode_len)
    envs = {
        d.domain_id: [BlockMDPEnv(d, env_cfg) for _ in range(episodes)]
        for d in domains
    }
    obs = {
        d.domain_id: [
            env.reset(np.random.SeedSequence(list(seed_parts) + [ep]))
            for ep, env in enumerate(envs[d.domain_id])
        ]
        for d in domains
    }
    feats = {d.domain_id: [] for d in domains}
    frames = {d.domain_id: [] for d in domains}
    for _ in range(env_cfg.episode_len):
        actions = None
        for d in domains:
            batch = np.stack([o.frames for o in obs[d.domain_id]])
            if collect_frames:
                frames[d.domain_id].append(batch[:, -env_cfg.channels :])
            z, a = _policy_features_and_actions(agent, batch, env_cfg.crop_hw)
            if actions is None:
                actions = a  # first domain leads; same actions everywhere
            feats[d.domain_id].append(z)
        for d in domains:
            for i, env in enumerate(envs[d.domain_id]):
                obs[d.domain_id][i] = env.step(actions[i])[0]
    out_f = {k: np.concatenate(v, axis=0)[:n_obs] for k, v in feats.items()}
    out_r = {
        k: (np.concatenate(v, axis=0)[:n_obs] if collect_frames else None)
        for k, v in frames.items()
    }
    return out_f, out_r


def evaluate(agent, domains_by_source, config, seed_parts, probe_seed, feature_obs=500):
    """Evaluate on every domain; returns (per_domain_return, distances, probe).

    Returns come from independent per-domain eval rollouts; feature distances
    and the domain probe come from matched (shared-latent) rollouts so they
    measure emission leakage only.
    """
    returns = {}
    all_domains = []
    for source, domains in domains_by_source.items():
        all_domains.extend(domains)
        for d in domains:
            r, _, _ = rollout_domain(agent, d, config.env, config.eval_episodes, seed_parts)
            returns[d.domain_id] = float(r.mean())
    feats, _ = matched_rollouts(
        agent, all_domains, config.env, feature_obs, list(seed_parts) + [6]
    )
    train_ids = [d.domain_id for d in domains_by_source["train"]]
    pooled = np.concatenate([feats[i] for i in train_ids], axis=0)
    distances = {i: feature_mean_l2(feats[i], pooled) for i in feats}
    probe_sets = [FeatureSet(feats[i], i, "train") for i in train_ids]
    probe = probe_accuracy(probe_sets, seed=probe_seed)
    return returns, distances, probe


# ---------------------------------------------------------------------------
# training


def _record_line(step, returns, distances, probe, report, wall_time_s):
    rec = {
        "step": step,
        "per_domain_return": {str(k): v for k, v in sorted(returns.items())},
        "feature_distances": {str(k): v for k, v in sorted(distances.items())},
        "probe_accuracy": probe,
        "losses": dataclasses.asdict(report),
        "wall_time_s": wall_time_s,
    }
    return json.dumps(rec, sort_keys=True)


def run_train(config):
    """Full training loop; returns the path of the final checkpoint."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.json", config)

    train_d, test_d, extra_d = make_domain_split(
        config.n_train_domains, config.n_test_domains, config.split_seed
    )
    save_split(out / "split.json", train_d, test_d, extra_d)
    domains_by_source = {"train": train_d, "test": test_d, "extra": extra_d}

    agent = DarlAgent(config.train, config.env, len(train_d), config.run_seed)
    in_ch = config.env.frame_stack * config.env.channels
    buffer = ReplayBuffer(
        config.replay_capacity,
        (in_ch, config.env.render_hw, config.env.render_hw),
        action_dim=config.train.action_dim,
        crop_hw=config.env.crop_hw,
    )
    act_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([config.run_seed, 1]))
    )
    upd_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([config.run_seed, 2]))
    )

    from .agent import LossReport

    t0 = time.monotonic()
    last_report = LossReport()
    env_step = 0
    episode_idx = 0
    evals_done = 0

    def emit(f):
        nonlocal evals_done
        returns, distances, probe = evaluate(
            agent,
            domains_by_source,
            config,
            seed_parts=[config.run_seed, 3, env_step],
            probe_seed=(config.run_seed * 1_000_003 + env_step) % 2**63,
        )
        line = _record_line(
            env_step, returns, distances, probe, last_report, time.monotonic() - t0
        )
        f.write(line + "\n")
        f.flush()
        evals_done = env_step // config.eval_every

    with open(out / "metrics.jsonl", "w") as f:
        emit(f)  # baseline record at step 0
        while env_step < config.total_env_steps:
            domain = train_d[episode_idx % len(train_d)]
            env = BlockMDPEnv(domain, config.env)
            obs = env.reset(int(act_rng.integers(0, 2**63)))
            episode_idx += 1
            for _ in range(config.env.episode_len):
                if env_step < config.initial_steps:
                    action = act_rng.uniform(-1.0, 1.0, size=config.train.action_dim)
                else:
                    cropped = center_crop(obs.frames[None], config.env.crop_hw)[0]
                    action = agent.select_action(cropped, mode="sample", rng=act_rng)
                next_obs, reward, done = env.step(action)
                # episodes end only by time limit, so bootstrap through the end
                buffer.add(obs.frames, action, reward, next_obs.frames, 0.0, domain.domain_id)
                obs = next_obs
                env_step += config.env.action_repeat
                if env_step > config.initial_steps:
                    batch = buffer.sample(config.train.batch_size, upd_rng)
                    actor_turn = agent.n_updates % config.train.actor_update_every == 0
                    try:
                        report = agent.update(batch, env_step, upd_rng)
                    except NanLossError as e:
                        raise NanLossError("env step %d: %s" % (env_step, e)) from e
                    if not actor_turn:
                        # actor/temperature skipped this update; keep the
                        # latest real values in the emitted record
                        report.l_pi = last_report.l_pi
                        report.l_alpha = last_report.l_alpha
                    last_report = report
                if env_step // config.eval_every > evals_done or env_step >= config.total_env_steps:
                    emit(f)
                if done or env_step >= config.total_env_steps:
                    break

    ckpt = out / "final.ckpt"
    agent.save(ckpt)
    with open(out / "metrics.jsonl") as f:
        records = [json.loads(line) for line in f if line.strip()]
    last = records[-1]
    train_ids = {str(d.domain_id) for d in train_d}
    test_ids = {str(d.domain_id) for d in test_d}
    train_ret = float(
        np.mean([v for k, v in last["per_domain_return"].items() if k in train_ids])
    )
    test_ret = float(
        np.mean([v for k, v in last["per_domain_return"].items() if k in test_ids])
    )
    summary = {
        "final_step": last["step"],
        "n_eval_records": len(records),
        "train_return": train_ret,
        "test_return": test_ret,
        "generalization_gap": train_ret - test_ret,
        "probe_accuracy": last["probe_accuracy"],
    }
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return str(ckpt)


# ---------------------------------------------------------------------------
# standalone evaluation / diagnostics


def _load_run(ckpt_path):
    run_dir = Path(ckpt_path).parent
    config = load_config(run_dir / "config.json")
    train_d, test_d, extra_d = load_split(run_dir / "split.json")
    agent = DarlAgent(config.train, config.env, len(train_d), config.run_seed)
    try:
        agent.load(ckpt_path)
    except (KeyError, ValueError, CheckpointError) as e:
        raise CheckpointError("checkpoint/config mismatch for %s: %s" % (ckpt_path, e))
    return agent, config, (train_d, test_d, extra_d)


def run_eval(ckpt_path, domains_path, episodes):
    """Per-domain mean/std return of eval-mode rollouts from a checkpoint."""
    agent, config, _ = _load_run(ckpt_path)
    train_d, test_d, extra_d = load_split(domains_path)
    result = {}
    for source, domains in (("train", train_d), ("test", test_d), ("extra", extra_d)):
        for d in domains:
            r, _, _ = rollout_domain(
                agent, d, config.env, episodes, [config.run_seed, 4]
            )
            result[d.domain_id] = {
                "source": source,
                "kind": d.kind,
                "mean_return": float(r.mean()),
                "std_return": float(r.std()),
            }
    return result


def run_diag(ckpt_path, out_dir, episodes_per_domain=1, embed_seed=0):
    """Feature embedding, distances, probe, and video dissimilarity bundle."""
    agent, config, (train_d, test_d, extra_d) = _load_run(ckpt_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    sources = {}
    for source, domains in (("train", train_d), ("test", test_d), ("extra", extra_d)):
        for d in domains:
            sources[d.domain_id] = source
    feats, frames = matched_rollouts(
        agent,
        train_d + test_d + extra_d,
        config.env,
        episodes_per_domain * config.env.episode_len,
        [config.run_seed, 5],
        collect_frames=True,
    )

    ids = sorted(feats)
    joint = np.concatenate([feats[i] for i in ids], axis=0)
    emb = tsne_embed(joint, EmbeddingConfig(seed=embed_seed))
    with open(out / "embedding.csv", "w") as f:
        f.write("point_id,domain_id,source,x,y\n")
        row = 0
        for i in ids:
            for _ in range(feats[i].shape[0]):
                f.write(
                    "%d,%d,%s,%.17g,%.17g\n"
                    % (row, i, sources[i], emb[row, 0], emb[row, 1])
                )
                row += 1

    train_ids = [d.domain_id for d in train_d]
    pooled = np.concatenate([feats[i] for i in train_ids], axis=0)
    pooled_frames = np.concatenate([frames[i] for i in train_ids], axis=0)
    with open(out / "distances.csv", "w") as f:
        f.write("domain_id,source,feature_mean_l2\n")
        for i in ids:
            f.write("%d,%s,%.17g\n" % (i, sources[i], feature_mean_l2(feats[i], pooled)))

    probe_sets = [FeatureSet(feats[i], i, "train") for i in train_ids]
    probe = probe_accuracy(probe_sets, seed=embed_seed)

    dissim = {}
    for i in ids:
        if sources[i] == "train":
            continue
        dissim[str(i)] = video_dissimilarity(
            frames[i], pooled_frames, EmbeddingConfig(seed=embed_seed)
        )

    doc = {
        "probe_accuracy": probe,
        "probe_chance": 1.0 / len(train_ids),
        "video_dissimilarity": dissim,
        "rows_per_domain": int(feats[ids[0]].shape[0]),
    }
    with open(out / "diag.json", "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)

    _scatter_svg(out / "embedding.svg", emb, ids, feats, sources)
    return doc


def _scatter_svg(path, emb, ids, feats, sources):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "darl"
    fig, ax = plt.subplots(figsize=(6, 6))
    markers = {"train": "o", "test": "^", "extra": "s"}
    cmap = plt.get_cmap("tab10")
    row = 0
    for i in ids:
        n = feats[i].shape[0]
        ax.scatter(
            emb[row : row + n, 0],
            emb[row : row + n, 1],
            s=8,
            marker=markers[sources[i]],
            color=cmap(i % 10),
            label="domain %d (%s)" % (i, sources[i]),
            alpha=0.7,
        )
        row += n
    ax.legend(fontsize=7)
    ax.set_title("feature embedding")
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# plots


def _seed_curves(run_dir):
    """(steps, train-mean, test-mean) arrays for one run directory."""
    run_dir = Path(run_dir)
    train_d, test_d, _ = load_split(run_dir / "split.json")
    train_ids = {str(d.domain_id) for d in train_d}
    test_ids = {str(d.domain_id) for d in test_d}
    steps, tr, te = [], [], []
    with open(run_dir / "metrics.jsonl") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            r = rec["per_domain_return"]
            steps.append(rec["step"])
            tr.append(np.mean([v for k, v in r.items() if k in train_ids]))
            te.append(np.mean([v for k, v in r.items() if k in test_ids]))
    return np.array(steps), np.array(tr), np.array(te)


def emit_plots(run_dirs, out_path):
    """Learning curves: solid = train domains, dashed = test, band = stderr."""
    if not run_dirs:
        raise ValueError("emit_plots needs at least one run directory")
    curves = [_seed_curves(d) for d in run_dirs]
    n_records = min(len(c[0]) for c in curves)
    steps = curves[0][0][:n_records]
    tr = np.stack([c[1][:n_records] for c in curves])
    te = np.stack([c[2][:n_records] for c in curves])

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "darl"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for data, style, label in ((tr, "-", "train domains"), (te, "--", "test domains")):
        mean = data.mean(axis=0)
        sem = data.std(axis=0) / np.sqrt(data.shape[0])
        ax.plot(steps, mean, style, label=label)
        ax.fill_between(steps, mean - sem, mean + sem, alpha=0.25)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("episodic return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return str(out_path)
