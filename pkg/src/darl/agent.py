"""Soft actor-critic learner with a gradient-reversal domain discriminator.

Three adversarial modes:
  GRL  - joint backward of critic loss + beta * discriminator loss, with the
         encoder receiving the reversed discriminator gradient.
  ADV  - two-step domain-confusion variant: the discriminator trains on true
         labels with the encoder frozen, then the encoder trains against a
         uniform target with the discriminator frozen.
  OFF  - plain SAC with random crop; bit-identical to GRL with beta = 0.
"""

import dataclasses

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tape, Tensor, no_grad
from .nets import Actor, Discriminator, Encoder, QFunction, set_requires_grad
from .optim import Adam, AdamState


class NanLossError(RuntimeError):
    pass


@dataclasses.dataclass
class TrainConfig:
    z_dim: int = 32
    hidden_dim: int = 256
    disc_hidden: int = 100
    action_dim: int = 2
    batch_size: int = 32
    gamma: float = 0.99
    beta: float = 1.0
    lambda_ramp_steps: int = 50000
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    lr_alpha: float = 1e-4
    lr_disc: float = 1e-3
    beta1_actor: float = 0.9
    beta1_critic: float = 0.9
    beta1_alpha: float = 0.5
    tau: float = 0.005
    actor_update_every: int = 2
    target_update_every: int = 2
    init_temperature: float = 0.1
    target_entropy: float = -2.0
    adversarial_mode: str = "GRL"  # GRL | ADV | OFF
    # extra discriminator-only refinement steps per update. A one-step
    # discriminator lags the encoder and gets circumvented instead of forcing
    # information removal; a few cheap extra steps on the tiny domain head
    # keep it near a best response.
    disc_steps: int = 1
    # decoupled weight decay on the encoder's conv/fc weights. Under the
    # reversed gradient the encoder can defeat the discriminator by blowing
    # up pre-layernorm scale (layernorm makes that free for the critic while
    # crushing the relative state signal); bounding the weights closes that
    # escape so the game resolves by removing domain information instead.
    encoder_weight_decay: float = 0.0
    # decoupled weight decay on the discriminator's linear weights. Keeps the
    # head's logits bounded so its softmax never saturates: a saturated
    # (confidently correct) head passes a vanishing input gradient through the
    # reversal layer, and the residual domain offsets stop shrinking exactly
    # when they become small. A decayed head keeps pulling them toward zero.
    disc_weight_decay: float = 0.0
    # per-dimension batch standardization of the discriminator's input
    # features (batch statistics treated as constants). The encoder can win
    # the adversarial game degenerately by shrinking *all* cross-sample
    # variation to a tiny residual around a near-constant vector: the head's
    # hidden ReLUs then sit in a dead zone and its gradient signal-to-noise
    # vanishes, so adversarial pressure stops while a post-hoc probe still
    # decodes the residual. Standardizing the head's input makes it
    # scale-invariant per dimension, so shrinking buys the encoder nothing
    # and the game has to resolve by actually mixing domain information away.
    disc_standardize: bool = False
    # instance noise: stddev of Gaussian noise added to the discriminator's
    # input features (both when training the head and through the reversed /
    # confusion branch). Blurs small-margin separating directions so the
    # adversarial gradient acts on cluster overlap instead of thin margins.
    disc_input_noise: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if self.lambda_ramp_steps <= 0:
            raise ValueError("lambda_ramp_steps must be positive")
        if self.adversarial_mode not in ("GRL", "ADV", "OFF"):
            raise ValueError("unknown adversarial_mode %r" % self.adversarial_mode)
        if self.disc_steps < 1:
            raise ValueError("disc_steps must be >= 1")
        if self.disc_input_noise < 0.0:
            raise ValueError("disc_input_noise must be nonnegative")
        if self.disc_weight_decay < 0.0:
            raise ValueError("disc_weight_decay must be nonnegative")


@dataclasses.dataclass
class LossReport:
    l_q: float = 0.0
    l_pi: float = 0.0
    l_d: float = 0.0
    l_alpha: float = 0.0
    lambda_now: float = 0.0
    disc_train_accuracy: float = 0.0


def lambda_schedule(step, ramp):
    """Reversal-scale ramp: 2 / (1 + exp(-10 p)) - 1 with p = min(step/ramp, 1)."""
    p = min(step / float(ramp), 1.0)
    return 2.0 / (1.0 + np.exp(-10.0 * p)) - 1.0


class DarlAgent:
    def __init__(self, cfg, env_cfg, n_domains, seed):
        self.cfg = cfg
        self.env_cfg = env_cfg
        self.n_domains = n_domains
        in_ch = env_cfg.frame_stack * env_cfg.channels
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0xA6])))
        self.encoder = Encoder(rng, in_ch, env_cfg.crop_hw, cfg.z_dim)
        self.actor = Actor(rng, cfg.z_dim, cfg.hidden_dim, cfg.action_dim)
        self.q1 = QFunction(rng, cfg.z_dim, cfg.action_dim, cfg.hidden_dim, "q1")
        self.q2 = QFunction(rng, cfg.z_dim, cfg.action_dim, cfg.hidden_dim, "q2")
        self.tq1 = QFunction(rng, cfg.z_dim, cfg.action_dim, cfg.hidden_dim, "tq1")
        self.tq2 = QFunction(rng, cfg.z_dim, cfg.action_dim, cfg.hidden_dim, "tq2")
        self._copy_params(self.q1, self.tq1)
        self._copy_params(self.q2, self.tq2)
        set_requires_grad(self.tq1.params() + self.tq2.params(), False)
        self.disc = Discriminator(rng, cfg.z_dim, cfg.disc_hidden, n_domains)
        self.log_alpha = Tensor(np.array(np.log(cfg.init_temperature)), requires_grad=True)

        critic_params = [p for _, p in self.encoder.params() + self.q1.params() + self.q2.params()]
        self.opt_critic = Adam(critic_params, cfg.lr_critic, beta1=cfg.beta1_critic)
        self.opt_actor = Adam(
            [p for _, p in self.actor.params()], cfg.lr_actor, beta1=cfg.beta1_actor
        )
        self.opt_alpha = Adam([self.log_alpha], cfg.lr_alpha, beta1=cfg.beta1_alpha)
        self.opt_disc = Adam([p for _, p in self.disc.params()], cfg.lr_disc)
        self.n_updates = 0
        # weight-decay floor: the init RMS of each decayed weight tensor
        self._decay_floor = {
            id(w): float(np.sqrt(np.mean(w.data**2)))
            for w in [conv.w for conv in self.encoder.convs] + [self.encoder.fc.w]
        }

    # -- parameter bookkeeping ---------------------------------------------

    @staticmethod
    def _copy_params(src, dst):
        for (_, ps), (_, pd) in zip(src.params(), dst.params()):
            pd.data[...] = ps.data

    def named_params(self):
        out = []
        out.extend(self.encoder.params())
        out.extend(self.actor.params())
        out.extend(self.q1.params())
        out.extend(self.q2.params())
        out.extend(self.tq1.params())
        out.extend(self.tq2.params())
        out.extend(self.disc.params())
        out.append(("log_alpha", self.log_alpha))
        return out

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha.data))

    # -- acting -------------------------------------------------------------

    def encode_np(self, obs_batch):
        """Feature forward pass without taping (evaluation / targets)."""
        with no_grad():
            return self.encoder(Tensor(obs_batch)).data

    def select_action(self, obs_cropped, mode="sample", rng=None):
        obs = obs_cropped[None] if obs_cropped.ndim == 3 else obs_cropped
        with no_grad():
            z = self.encoder(Tensor(obs))
            if mode == "eval":
                a = self.actor.mean_action(z)
            else:
                mu, log_std = self.actor.dist_params(z)
                eps = rng.standard_normal(mu.shape)
                a = np.tanh(mu.data + np.exp(log_std.data) * eps)
        return a[0] if obs_cropped.ndim == 3 else a

    # -- losses -------------------------------------------------------------

    def _critic_targets(self, batch, rng):
        """Bootstrapped targets; entire branch runs without gradient."""
        cfg = self.cfg
        with no_grad():
            z_next = self.encoder(Tensor(batch["next_obs"]))
            mu, log_std = self.actor.dist_params(z_next)
            eps = rng.standard_normal(mu.shape)
            a_next, logp = ad.gaussian_rsample(mu, log_std, eps)
            q1 = self.tq1(z_next, a_next).data[:, 0]
            q2 = self.tq2(z_next, a_next).data[:, 0]
            v = np.minimum(q1, q2) - self.alpha * logp.data
            return batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * v

    def critic_loss(self, z, batch, y):
        """Mean over batch and both critics of the soft Bellman residual."""
        a = Tensor(batch["action"])
        q1 = self.q1(z, a)
        q2 = self.q2(z, a)
        yt = y[:, None]
        l1 = ad.mean(ad.mul(ad.add(q1, -yt), ad.add(q1, -yt)))
        l2 = ad.mean(ad.mul(ad.add(q2, -yt), ad.add(q2, -yt)))
        return ad.mul(ad.add(l1, l2), 0.5)

    def discriminator_loss(self, z_in, labels):
        """Negative log-likelihood of the true domain label."""
        logp = self.disc(z_in)
        picked = ad.select_labels(logp, labels)
        loss = ad.mul(ad.mean(picked), -1.0)
        acc = float(np.mean(np.argmax(logp.data, axis=1) == labels))
        return loss, acc

    def adv_confusion_loss(self, z):
        """Cross-entropy of the discriminator output against uniform labels."""
        logp = self.disc(z)
        return ad.mul(ad.mean(ad.sum_axis(logp, axis=-1)), -1.0 / self.n_domains)

    def actor_loss(self, z_detached, rng):
        eps = rng.standard_normal((z_detached.shape[0], self.cfg.action_dim))
        a, logp = self.actor.sample(z_detached, eps)
        q1 = self.q1(z_detached, a)
        q2 = self.q2(z_detached, a)
        qmin = Tensor(np.minimum(q1.data[:, 0], q2.data[:, 0]))

        def bwd(gy):
            m1 = (q1.data[:, 0] <= q2.data[:, 0]).astype(np.float64)
            return (gy * m1)[:, None], (gy * (1.0 - m1))[:, None]

        ad._record(qmin, (q1, q2), bwd)
        loss = ad.mean(ad.add(ad.mul(logp, self.alpha), ad.mul(qmin, -1.0)))
        return loss, logp

    def temperature_loss(self, logp_detached):
        target = logp_detached + self.cfg.target_entropy
        return ad.mul(self.log_alpha, -float(np.mean(target)))

    # -- update -------------------------------------------------------------

    def _check(self, name, value):
        if not np.isfinite(value):
            raise NanLossError("non-finite %s at update %d: %r" % (name, self.n_updates, value))
        return float(value)

    def update(self, batch, env_step, rng):
        """One learner step; env_step drives the reversal-scale ramp."""
        cfg = self.cfg
        report = LossReport()
        lam = lambda_schedule(env_step, cfg.lambda_ramp_steps)
        report.lambda_now = lam
        use_disc = cfg.adversarial_mode != "OFF" and cfg.beta > 0.0
        labels = batch["domain"]
        y = self._critic_targets(batch, rng)

        with Tape() as tape:
            z = self.encoder(Tensor(batch["obs"]))
            l_q = self.critic_loss(z, batch, y)
            total = l_q
            if use_disc and cfg.adversarial_mode == "GRL":
                zg = self._disc_input(ad.grad_reverse(z, lam), rng)
                l_d, acc = self.discriminator_loss(zg, labels)
                report.l_d = self._check("discriminator loss", l_d.data)
                report.disc_train_accuracy = acc
                total = ad.add(l_q, ad.mul(l_d, cfg.beta))
            elif use_disc and cfg.adversarial_mode == "ADV":
                # step 1 of the two-step schedule: discriminator on true
                # labels, encoder frozen via detach
                l_d, acc = self.discriminator_loss(self._disc_input(z.detach(), rng), labels)
                report.l_d = self._check("discriminator loss", l_d.data)
                report.disc_train_accuracy = acc
                total = ad.add(l_q, ad.mul(l_d, cfg.beta))
            report.l_q = self._check("critic loss", l_q.data)
            ad.backward(tape, total)
        self.opt_critic.step()
        self._decay_encoder()
        if use_disc:
            self.opt_disc.step()
            self._decay_disc()
        self.opt_critic.zero_grads()
        self.opt_disc.zero_grads()

        if use_disc:
            # keep the domain head sharp on the encoder's current operating
            # points; a lagging one-step head gets circumvented rather than
            # forcing information out of the encoder. Deliberately refined on
            # the same batch rows: heads fit to broader feature samples (a
            # replay bank of features, or fresh replay batches re-encoded
            # each step) measured *worse* — the near-memorizing head's sharp
            # local gradients are harder to evade by smooth rearrangement.
            for _ in range(cfg.disc_steps - 1):
                with Tape() as tape:
                    zr = self._disc_input(Tensor(z.data), rng)
                    l_d, acc = self.discriminator_loss(zr, labels)
                    ad.backward(tape, l_d)
                self.opt_disc.step()
                self._decay_disc()
                self.opt_disc.zero_grads()
                report.l_d = self._check("discriminator loss", l_d.data)
                report.disc_train_accuracy = acc

        if use_disc and cfg.adversarial_mode == "ADV":
            # step 2: encoder against a uniform discriminator target,
            # discriminator frozen
            set_requires_grad(self.disc.params(), False)
            with Tape() as tape:
                z2 = self._disc_input(self.encoder(Tensor(batch["obs"])), rng)
                l_conf = ad.mul(self.adv_confusion_loss(z2), cfg.beta * lam)
                self._check("confusion loss", l_conf.data)
                ad.backward(tape, l_conf)
            set_requires_grad(self.disc.params(), True)
            self.opt_critic.step()
            self._decay_encoder()
            self.opt_critic.zero_grads()

        z_detached = Tensor(z.data.copy())
        if self.n_updates % cfg.actor_update_every == 0:
            set_requires_grad(self.q1.params() + self.q2.params(), False)
            with Tape() as tape:
                l_pi, logp = self.actor_loss(z_detached, rng)
                report.l_pi = self._check("actor loss", l_pi.data)
                ad.backward(tape, l_pi)
            set_requires_grad(self.q1.params() + self.q2.params(), True)
            self.opt_actor.step()
            self.opt_actor.zero_grads()

            with Tape() as tape:
                l_alpha = self.temperature_loss(logp.data)
                report.l_alpha = self._check("temperature loss", l_alpha.data)
                ad.backward(tape, l_alpha)
            self.opt_alpha.step()
            self.opt_alpha.zero_grads()

        if self.n_updates % cfg.target_update_every == 0:
            self._soft_update(self.q1, self.tq1)
            self._soft_update(self.q2, self.tq2)

        self.n_updates += 1
        return report

    def _decay_disc(self):
        """Decoupled weight decay on the domain head's linear weights."""
        wd = self.cfg.disc_weight_decay
        if wd <= 0.0:
            return
        factor = 1.0 - self.cfg.lr_disc * wd
        self.disc.l1.w.data *= factor
        self.disc.l2.w.data *= factor

    def _disc_input(self, z, rng):
        """Optional standardization and instance noise on the head's input."""
        if self.cfg.disc_standardize:
            mu = z.data.mean(axis=0)
            inv = 1.0 / np.sqrt(z.data.var(axis=0) + 1e-5)
            z = ad.mul(ad.add(z, Tensor(-mu)), Tensor(inv))
        sigma = self.cfg.disc_input_noise
        if sigma <= 0.0:
            return z
        return ad.add(z, Tensor(sigma * rng.standard_normal(z.data.shape)))

    def _decay_encoder(self):
        """Decoupled weight decay on conv/fc weights (not biases or layernorm).

        Floored at each weight's init RMS: decay exists to cap adversarial
        scale inflation, and an unfloored decay can drag a weakly-anchored
        encoder into feature collapse (constant z, dead policy).
        """
        wd = self.cfg.encoder_weight_decay
        if wd <= 0.0:
            return
        factor = 1.0 - self.cfg.lr_critic * wd
        for w in [conv.w for conv in self.encoder.convs] + [self.encoder.fc.w]:
            rms = float(np.sqrt(np.mean(w.data**2)))
            if rms * factor > self._decay_floor[id(w)]:
                w.data *= factor

    def _soft_update(self, src, dst):
        tau = self.cfg.tau
        for (_, ps), (_, pd) in zip(src.params(), dst.params()):
            pd.data *= 1.0 - tau
            pd.data += tau * ps.data

    # -- checkpointing ------------------------------------------------------

    def _opt_groups(self):
        return [
            ("critic", self.opt_critic),
            ("actor", self.opt_actor),
            ("alpha", self.opt_alpha),
            ("disc", self.opt_disc),
        ]

    def state_groups(self):
        groups = [(name, p.data) for name, p in self.named_params()]
        for oname, opt in self._opt_groups():
            for i, s in enumerate(opt.states):
                groups.append(("adam.%s.%d.m" % (oname, i), s.m))
                groups.append(("adam.%s.%d.v" % (oname, i), s.v))
                groups.append(("adam.%s.%d.t" % (oname, i), np.array(float(s.t))))
        groups.append(("n_updates", np.array(float(self.n_updates))))
        return groups

    def save(self, path):
        checkpoint.save_groups(path, self.state_groups())

    def load(self, path):
        groups = checkpoint.load_groups(path)
        for name, p in self.named_params():
            p.data[...] = groups[name]
        for oname, opt in self._opt_groups():
            for i, s in enumerate(opt.states):
                s.m[...] = groups["adam.%s.%d.m" % (oname, i)]
                s.v[...] = groups["adam.%s.%d.v" % (oname, i)]
                s.t = int(groups["adam.%s.%d.t" % (oname, i)])
        self.n_updates = int(groups["n_updates"])
