"""Fixed-capacity ring buffer with sample-time random-crop augmentation.

Frames arrive quantized to the 8-bit grid (see env._quantize), so uint8
storage is lossless; observations are reconstructed in [0, 1] float64 when
sampled. Crops of obs and next_obs use independent offsets by default.
"""

import numpy as np


class UnderfullError(RuntimeError):
    pass


def center_crop(frames, crop_hw):
    """Deterministic central crop used for evaluation-time observations."""
    h = frames.shape[-1]
    off = (h - crop_hw) // 2
    return frames[..., off : off + crop_hw, off : off + crop_hw]


class ReplayBuffer:
    def __init__(self, capacity, obs_shape, action_dim=2, crop_hw=36, independent_crops=True):
        self.capacity = int(capacity)
        self.obs_shape = tuple(obs_shape)  # (channels, H, W)
        self.crop_hw = int(crop_hw)
        self.independent_crops = independent_crops
        c, h, w = self.obs_shape
        assert self.crop_hw <= h
        self.obs = np.zeros((capacity, c, h, w), dtype=np.uint8)
        self.next_obs = np.zeros((capacity, c, h, w), dtype=np.uint8)
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.domain = np.zeros(capacity, dtype=np.int64)
        self.write_idx = 0
        self.size = 0

    def add(self, obs, action, reward, next_obs, done, domain_id):
        i = self.write_idx
        self.obs[i] = np.round(obs * 255.0).astype(np.uint8)
        self.next_obs[i] = np.round(next_obs * 255.0).astype(np.uint8)
        self.action[i] = action
        self.reward[i] = reward
        self.done[i] = done
        self.domain[i] = domain_id
        self.write_idx = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _crop(self, imgs, offsets):
        n = imgs.shape[0]
        k = self.crop_hw
        out = np.empty((n, imgs.shape[1], k, k))
        for i in range(n):
            oy, ox = offsets[i]
            out[i] = imgs[i, :, oy : oy + k, ox : ox + k]
        out /= 255.0
        return out

    def sample(self, batch, rng):
        """Uniform with replacement; fresh crop offsets per draw."""
        if self.size < batch:
            raise UnderfullError("buffer has %d < batch %d transitions" % (self.size, batch))
        idx = rng.integers(0, self.size, size=batch)
        max_off = self.obs_shape[1] - self.crop_hw
        off_obs = rng.integers(0, max_off + 1, size=(batch, 2))
        if self.independent_crops:
            off_next = rng.integers(0, max_off + 1, size=(batch, 2))
        else:
            off_next = off_obs
        return {
            "obs": self._crop(self.obs[idx].astype(np.float64), off_obs),
            "action": self.action[idx].copy(),
            "reward": self.reward[idx].copy(),
            "next_obs": self._crop(self.next_obs[idx].astype(np.float64), off_next),
            "done": self.done[idx].astype(np.float64),
            "domain": self.domain[idx].copy(),
        }

    def domain_label_histogram(self, n_domains=None):
        if n_domains is None:
            n_domains = int(self.domain[: self.size].max()) + 1 if self.size else 0
        counts = np.bincount(self.domain[: self.size], minlength=n_domains)
        return counts
