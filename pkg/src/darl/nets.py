"""Network parameter containers and forward functions on the autodiff core."""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, rng, n_in, n_out, name):
        self.name = name
        self.w = Tensor(_uniform_init(rng, (n_in, n_out), n_in), requires_grad=True)
        self.b = Tensor(_uniform_init(rng, (n_out,), n_in), requires_grad=True)

    def __call__(self, x):
        return ad.linear(x, self.w, self.b)

    def params(self):
        return [(self.name + ".w", self.w), (self.name + ".b", self.b)]


class Conv2d:
    """Channels-last conv layer (weights (kh, kw, c_in, c_out))."""

    def __init__(self, rng, c_in, c_out, k, stride, name):
        self.name = name
        self.stride = stride
        fan_in = c_in * k * k
        self.w = Tensor(_uniform_init(rng, (k, k, c_in, c_out), fan_in), requires_grad=True)
        self.b = Tensor(_uniform_init(rng, (c_out,), fan_in), requires_grad=True)

    def __call__(self, x):
        return ad.conv2d_nhwc(x, self.w, self.b, self.stride)

    def params(self):
        return [(self.name + ".w", self.w), (self.name + ".b", self.b)]


class Encoder:
    """Four-conv pixel encoder (stride 2,1,1,1), flatten, linear, layernorm."""

    def __init__(self, rng, in_channels, crop_hw, z_dim, name="encoder"):
        self.name = name
        self.z_dim = z_dim
        self.convs = [
            Conv2d(rng, in_channels, 32, 3, 2, name + ".conv0"),
            Conv2d(rng, 32, 32, 3, 1, name + ".conv1"),
            Conv2d(rng, 32, 32, 3, 1, name + ".conv2"),
            Conv2d(rng, 32, 32, 3, 1, name + ".conv3"),
        ]
        hw = (crop_hw - 3) // 2 + 1
        for _ in range(3):
            hw = hw - 2
        self.flat_dim = 32 * hw * hw
        self.fc = Linear(rng, self.flat_dim, z_dim, name + ".fc")
        self.ln_gamma = Tensor(np.ones(z_dim), requires_grad=True)
        self.ln_beta = Tensor(np.zeros(z_dim), requires_grad=True)

    def __call__(self, obs):
        h = ad.nchw_to_nhwc(obs)
        for conv in self.convs:
            h = ad.relu(conv(h))
        flat = Tensor(h.data.reshape(h.shape[0], -1))
        shape = h.shape

        def bwd(gy):
            return (gy.reshape(shape),)

        ad._record(flat, (h,), bwd)
        z = self.fc(flat)
        return ad.layernorm(z, self.ln_gamma, self.ln_beta)

    def params(self):
        out = []
        for conv in self.convs:
            out.extend(conv.params())
        out.extend(self.fc.params())
        out.append((self.name + ".ln.gamma", self.ln_gamma))
        out.append((self.name + ".ln.beta", self.ln_beta))
        return out


class Actor:
    """Squashed-Gaussian policy head over encoder features."""

    def __init__(self, rng, z_dim, hidden, action_dim, name="actor"):
        self.name = name
        self.action_dim = action_dim
        self.l1 = Linear(rng, z_dim, hidden, name + ".l1")
        self.l2 = Linear(rng, hidden, hidden, name + ".l2")
        self.l3 = Linear(rng, hidden, 2 * action_dim, name + ".l3")

    def dist_params(self, z):
        h = ad.relu(self.l1(z))
        h = ad.relu(self.l2(h))
        out = self.l3(h)
        mu = Tensor(out.data[:, : self.action_dim])
        raw = Tensor(out.data[:, self.action_dim :])
        d = self.action_dim

        def bwd_mu(gy):
            g = np.zeros_like(out.data)
            g[:, :d] = gy
            return (g,)

        def bwd_raw(gy):
            g = np.zeros_like(out.data)
            g[:, d:] = gy
            return (g,)

        ad._record(mu, (out,), bwd_mu)
        ad._record(raw, (out,), bwd_raw)
        # soft clamp of the log-stdev into [LOG_STD_MIN, LOG_STD_MAX]
        t = ad.tanh(raw)
        log_std = ad.add(
            ad.mul(t, 0.5 * (LOG_STD_MAX - LOG_STD_MIN)),
            0.5 * (LOG_STD_MAX + LOG_STD_MIN),
        )
        return mu, log_std

    def sample(self, z, eps):
        """Reparameterized action and its log-probability."""
        mu, log_std = self.dist_params(z)
        return ad.gaussian_rsample(mu, log_std, eps)

    def mean_action(self, z):
        mu, _ = self.dist_params(z)
        return np.tanh(mu.data)

    def params(self):
        return self.l1.params() + self.l2.params() + self.l3.params()


class QFunction:
    def __init__(self, rng, z_dim, action_dim, hidden, name):
        self.name = name
        self.l1 = Linear(rng, z_dim + action_dim, hidden, name + ".l1")
        self.l2 = Linear(rng, hidden, hidden, name + ".l2")
        self.l3 = Linear(rng, hidden, 1, name + ".l3")

    def __call__(self, z, a):
        h = ad.concat([z, a], axis=1)
        h = ad.relu(self.l1(h))
        h = ad.relu(self.l2(h))
        return self.l3(h)

    def params(self):
        return self.l1.params() + self.l2.params() + self.l3.params()


class Discriminator:
    """Domain classifier over encoder features; emits log-probabilities."""

    def __init__(self, rng, z_dim, hidden, n_domains, name="disc"):
        self.name = name
        self.l1 = Linear(rng, z_dim, hidden, name + ".l1")
        self.l2 = Linear(rng, hidden, n_domains, name + ".l2")

    def __call__(self, z):
        h = ad.relu(self.l1(z))
        return ad.log_softmax(self.l2(h))

    def params(self):
        return self.l1.params() + self.l2.params()


def set_requires_grad(params, flag):
    for _, p in params:
        p.requires_grad = flag
