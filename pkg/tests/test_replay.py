import numpy as np
import pytest
from scipy import stats

from darl.replay import ReplayBuffer, UnderfullError, center_crop


def _buffer(capacity=16, hw=40, crop=36):
    return ReplayBuffer(capacity, (9, hw, hw), action_dim=2, crop_hw=crop)


def _obs(rng, hw=40):
    # values on the 8-bit grid, matching what the env emits
    return np.round(rng.uniform(0, 1, size=(9, hw, hw)) * 255.0) / 255.0


def test_add_to_empty():
    buf = _buffer()
    rng = np.random.default_rng(0)
    buf.add(_obs(rng), np.zeros(2), 0.5, _obs(rng), False, 0)
    assert buf.size == 1


def test_ring_overwrite():
    buf = _buffer(capacity=4)
    rng = np.random.default_rng(0)
    first = _obs(rng)
    buf.add(first, np.zeros(2), 0.0, _obs(rng), False, 0)
    for i in range(4):
        buf.add(_obs(rng), np.zeros(2), float(i), _obs(rng), False, 0)
    assert buf.size == 4
    stored = buf.obs.astype(np.float64) / 255.0
    assert not any(np.array_equal(stored[i], first) for i in range(4))


def test_round_trip_fieldwise():
    buf = _buffer(crop=40 - 0)  # crop == render is rejected by env config, fine here
    buf.crop_hw = 40
    rng = np.random.default_rng(1)
    obs, nxt = _obs(rng), _obs(rng)
    action = rng.uniform(-1, 1, 2)
    buf.add(obs, action, 0.25, nxt, True, 3)
    batch = buf.sample(1, np.random.default_rng(0))
    assert batch["obs"][0].tobytes() == obs.tobytes()
    assert batch["next_obs"][0].tobytes() == nxt.tobytes()
    np.testing.assert_array_equal(batch["action"][0], action)
    assert batch["reward"][0] == 0.25
    assert batch["done"][0] == 1.0
    assert batch["domain"][0] == 3


def test_sample_underfull():
    buf = _buffer()
    with pytest.raises(UnderfullError):
        buf.sample(1, np.random.default_rng(0))


def test_crop_offsets_in_valid_range():
    buf = _buffer()
    rng = np.random.default_rng(2)
    # frame whose value encodes the pixel row, to recover the crop offset
    hw = 40
    obs = np.broadcast_to(np.arange(hw)[:, None] / 255.0, (9, hw, hw)).copy()
    buf.add(obs, np.zeros(2), 0.0, obs, False, 0)
    seen = set()
    for _ in range(200):
        batch = buf.sample(1, rng)
        off = int(round(batch["obs"][0, 0, 0, 0] * 255.0))
        assert 0 <= off <= 4
        seen.add(off)
    assert seen == {0, 1, 2, 3, 4}


def test_constant_frame_crop_is_constant():
    buf = _buffer()
    obs = np.full((9, 40, 40), 128 / 255.0)
    for _ in range(4):
        buf.add(obs, np.zeros(2), 0.0, obs, False, 0)
    batch = buf.sample(4, np.random.default_rng(0))
    assert batch["obs"].shape == (4, 9, 36, 36)
    np.testing.assert_array_equal(batch["obs"], 128 / 255.0)


def test_obs_and_next_obs_crops_independent():
    buf = _buffer()
    hw = 40
    obs = np.broadcast_to(np.arange(hw)[:, None] / 255.0, (9, hw, hw)).copy()
    buf.add(obs, np.zeros(2), 0.0, obs, False, 0)
    rng = np.random.default_rng(3)
    diff = 0
    for _ in range(50):
        batch = buf.sample(1, rng)
        if batch["obs"][0, 0, 0, 0] != batch["next_obs"][0, 0, 0, 0]:
            diff += 1
    assert diff > 0


def test_domain_histogram():
    buf = _buffer(capacity=64)
    rng = np.random.default_rng(4)
    assert buf.domain_label_histogram(4).sum() == 0
    for _ in range(10):
        buf.add(_obs(rng), np.zeros(2), 0.0, _obs(rng), False, 2)
    counts = buf.domain_label_histogram(4)
    assert counts[2] == 10 and counts.sum() == buf.size
    # round-robin fill stays balanced
    buf2 = _buffer(capacity=64)
    for i in range(42):
        buf2.add(_obs(rng), np.zeros(2), 0.0, _obs(rng), False, i % 4)
    counts = buf2.domain_label_histogram(4)
    assert counts.max() - counts.min() <= 1


def test_sampling_uniformity_chi_square():
    buf = _buffer(capacity=100, crop=36)
    rng = np.random.default_rng(5)
    small = np.zeros((9, 40, 40))
    for i in range(100):
        buf.add(small, np.zeros(2), float(i), small, False, 0)
    draws = 100_000
    rewards = np.concatenate(
        [buf.sample(100, rng)["reward"] for _ in range(draws // 100)]
    )
    counts = np.bincount(rewards.astype(int), minlength=100)
    chi2 = ((counts - draws / 100) ** 2 / (draws / 100)).sum()
    # 5-sigma equivalent for chi-square with 99 dof
    assert chi2 < stats.chi2.isf(stats.norm.sf(5), df=99)


def test_center_crop():
    x = np.arange(40 * 40, dtype=np.float64).reshape(1, 40, 40)
    c = center_crop(x, 36)
    assert c.shape == (1, 36, 36)
    assert c[0, 0, 0] == x[0, 2, 2]
