"""Representation analysis: exact t-SNE, feature distances, domain probes."""

import dataclasses
import warnings

import numpy as np
from sklearn.neural_network import MLPClassifier

MACHINE_EPS = np.finfo(np.float64).eps


class InsufficientDataError(ValueError):
    pass


@dataclasses.dataclass
class FeatureSet:
    features: np.ndarray  # (n, z_dim)
    domain_id: int
    source: str  # train | test | video


@dataclasses.dataclass
class EmbeddingConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float | None = None  # None: max(n / 12, 10)
    seed: int = 0
    output_dim: int = 2


def _conditional_probs(sq_dists, perplexity, tol=1e-5, max_steps=100):
    """Per-point precisions by binary search on log-perplexity (= entropy)."""
    n = sq_dists.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        d = np.delete(sq_dists[i], i)
        for _ in range(max_steps):
            p = np.exp(-d * beta)
            sum_p = max(p.sum(), MACHINE_EPS)
            entropy = np.log(sum_p) + beta * float(d @ p) / sum_p
            diff = entropy - target
            if abs(diff) <= tol:
                break
            if diff > 0:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
        row = np.exp(-sq_dists[i] * beta)
        row[i] = 0.0
        P[i] = row / max(row.sum(), MACHINE_EPS)
    return P


def _sq_dists(x):
    s = (x * x).sum(axis=1)
    d = s[:, None] + s[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def tsne_embed(points, cfg, return_history=False):
    """Exact O(n^2) t-SNE with early exaggeration and momentum switching."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        raise InsufficientDataError("t-SNE needs at least 4 points, got %d" % n)
    if cfg.perplexity >= n - 1:
        raise ValueError(
            "perplexity %.1f must be < n - 1 = %d" % (cfg.perplexity, n - 1)
        )
    P = _conditional_probs(_sq_dists(x), cfg.perplexity)
    P = (P + P.T) / (2.0 * n)
    P = np.maximum(P, MACHINE_EPS)

    lr = cfg.learning_rate if cfg.learning_rate is not None else max(n / 12.0, 10.0)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    y = rng.standard_normal((n, cfg.output_dim)) * 1e-4
    vel = np.zeros_like(y)
    gains = np.ones_like(y)
    exaggeration_until = 250
    history = []
    for it in range(cfg.iterations):
        p_eff = P * 12.0 if it < exaggeration_until else P
        num = 1.0 / (1.0 + _sq_dists(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), MACHINE_EPS)
        w = (p_eff - q) * num
        grad = 4.0 * ((np.diag(w.sum(axis=1)) - w) @ y)
        momentum = 0.5 if it < exaggeration_until else 0.8
        # adaptive per-dimension gains, as in the reference implementation
        same_sign = np.sign(grad) == np.sign(vel)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        vel = momentum * vel - lr * gains * grad
        y = y + vel
        y = y - y.mean(axis=0)
        if return_history:
            history.append(float(np.sum(P * np.log(P / q))))
    if return_history:
        return y, history
    return y


def feature_mean_l2(a, b):
    """L2 distance between the feature-set means."""
    fa = a.features if isinstance(a, FeatureSet) else np.asarray(a)
    fb = b.features if isinstance(b, FeatureSet) else np.asarray(b)
    if fa.shape[1] != fb.shape[1]:
        raise ValueError("feature dims differ: %d vs %d" % (fa.shape[1], fb.shape[1]))
    return float(np.linalg.norm(fa.mean(axis=0) - fb.mean(axis=0)))


def video_dissimilarity(test_frames, train_frames, cfg):
    """Joint t-SNE of raw frames from both sets, then mean-L2 in 2-D."""
    test = np.asarray(test_frames, dtype=np.float64).reshape(len(test_frames), -1)
    train = np.asarray(train_frames, dtype=np.float64).reshape(len(train_frames), -1)
    if test.shape[1] != train.shape[1]:
        raise ValueError(
            "flattened frame dims differ: %d vs %d" % (test.shape[1], train.shape[1])
        )
    joint = np.concatenate([test, train], axis=0)
    emb = tsne_embed(joint, cfg)
    emb_test = emb[: len(test)]
    emb_train = emb[len(test) :]
    return float(np.linalg.norm(emb_test.mean(axis=0) - emb_train.mean(axis=0)))


def probe_accuracy(feature_sets, seed, hidden=64, max_iter=300):
    """Validation accuracy of a fresh 1-hidden-layer domain classifier.

    Each per-domain set is split 80/20 train/validation (seeded shuffle).
    """
    if len(feature_sets) < 2:
        raise ValueError("probe needs features from at least 2 domains")
    rng = np.random.Generator(np.random.PCG64(seed))
    xs_tr, ys_tr, xs_va, ys_va = [], [], [], []
    for fs in feature_sets:
        feats = fs.features
        if feats.shape[0] < 10:
            raise InsufficientDataError(
                "domain %d has %d rows; probe needs >= 10" % (fs.domain_id, feats.shape[0])
            )
        order = rng.permutation(feats.shape[0])
        cut = int(0.8 * feats.shape[0])
        xs_tr.append(feats[order[:cut]])
        xs_va.append(feats[order[cut:]])
        ys_tr.append(np.full(cut, fs.domain_id))
        ys_va.append(np.full(feats.shape[0] - cut, fs.domain_id))
    clf = MLPClassifier(
        hidden_layer_sizes=(hidden,),
        max_iter=max_iter,
        random_state=int(seed) % (2**32),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        clf.fit(np.concatenate(xs_tr), np.concatenate(ys_tr))
    return float(clf.score(np.concatenate(xs_va), np.concatenate(ys_va)))


def generalization_gap(train_returns, test_returns):
    """Mean training-domain return minus mean held-out-domain return."""
    return float(np.mean(train_returns) - np.mean(test_returns))
