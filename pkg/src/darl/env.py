"""Procedurally generated pixel block MDP.

One shared point-mass goal-reaching task in latent space, observed through
per-domain background renderers. Stationary background kinds are generated
once from a palette seed; non-stationary kinds are closed-form functions of
(palette_seed, t), so every frame is reproducible without hidden RNG state.
"""

import dataclasses
import json

import numpy as np

STATIONARY_KINDS = ("stripes", "checker", "gradient", "noise_tile")
NONSTATIONARY_KINDS = ("bouncing_balls", "drifting_noise")

AGENT_COLOR = np.array([1.0, 1.0, 1.0])
GOAL_COLOR = np.array([1.0, 0.15, 0.9])


class EnvContractError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class DomainSpec:
    """Identity and generator parameters of one visual domain."""

    domain_id: int
    kind: str
    palette_seed: int
    motion_params: dict = dataclasses.field(default_factory=dict)

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d):
        return cls(
            domain_id=int(d["domain_id"]),
            kind=str(d["kind"]),
            palette_seed=int(d["palette_seed"]),
            motion_params=dict(d.get("motion_params", {})),
        )


@dataclasses.dataclass
class EnvConfig:
    render_hw: int = 40
    crop_hw: int = 36
    channels: int = 3
    frame_stack: int = 3
    action_repeat: int = 2
    episode_len: int = 125  # agent steps
    gamma: float = 0.99
    reward_sigma: float = 0.4
    dt: float = 0.1
    damping: float = 0.9
    v_max: float = 1.0
    agent_radius: float = 3.5  # pixels
    goal_radius: float = 4.5

    def __post_init__(self):
        if self.render_hw <= self.crop_hw:
            raise ConfigError(
                "render_hw (%d) must exceed crop_hw (%d)" % (self.render_hw, self.crop_hw)
            )


@dataclasses.dataclass
class LatentState:
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray
    t: int = 0


@dataclasses.dataclass
class Observation:
    frames: np.ndarray  # (frame_stack * channels, H, W), oldest -> newest
    domain_id: int


# ---------------------------------------------------------------------------
# background generation


def _pick_colors(rng, n):
    """Saturated colors spread over hue; values away from the marker colors."""
    cols = []
    for _ in range(n):
        h = rng.uniform(0.0, 1.0)
        s = rng.uniform(0.55, 1.0)
        v = rng.uniform(0.25, 0.9)
        cols.append(_hsv_to_rgb(h, s, v))
    return cols


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.array(rgb)


def _coords(hw):
    y, x = np.mgrid[0:hw, 0:hw]
    return x.astype(np.float64), y.astype(np.float64)


def _fold(p, lo, hi):
    """Exact elastic reflection of coordinate p into [lo, hi]."""
    period = 2.0 * (hi - lo)
    q = np.mod(p - lo, period)
    return lo + np.minimum(q, period - q)


def render_background(domain, t, cfg):
    """Background frame (C, H, W) in [0, 1] at environment step t.

    Stationary kinds ignore t; non-stationary kinds are deterministic
    closed-form functions of (palette_seed, t).
    """
    hw = cfg.render_hw
    rng = np.random.Generator(np.random.PCG64(domain.palette_seed))
    kind = domain.kind
    x, y = _coords(hw)
    if kind == "stripes":
        c0, c1 = _pick_colors(rng, 2)
        theta = rng.uniform(0.0, np.pi)
        width = rng.uniform(4.0, 9.0)
        band = np.floor((x * np.cos(theta) + y * np.sin(theta)) / width) % 2
        frame = c0[:, None, None] * (1 - band) + c1[:, None, None] * band
    elif kind == "checker":
        c0, c1 = _pick_colors(rng, 2)
        cx = rng.integers(5, 11)
        cy = rng.integers(5, 11)
        band = (np.floor(x / cx) + np.floor(y / cy)) % 2
        frame = c0[:, None, None] * (1 - band) + c1[:, None, None] * band
    elif kind == "gradient":
        c0, c1 = _pick_colors(rng, 2)
        theta = rng.uniform(0.0, 2 * np.pi)
        proj = x * np.cos(theta) + y * np.sin(theta)
        w = (proj - proj.min()) / (proj.max() - proj.min())
        frame = c0[:, None, None] * (1 - w) + c1[:, None, None] * w
    elif kind == "noise_tile":
        tile = rng.uniform(0.1, 0.9, size=(3, 5, 5))
        up = (hw + 4) // 5
        frame = np.kron(tile, np.ones((up, up)))[:, :hw, :hw]
    elif kind == "drifting_noise":
        tile = rng.uniform(0.1, 0.9, size=(3, 5, 5))
        up = (hw + 4) // 5
        base = np.kron(tile, np.ones((up, up)))[:, :hw, :hw]
        speed = domain.motion_params.get("drift_speed", 0.5)
        shift = int(np.floor(speed * t))
        frame = np.roll(base, (shift, shift), axis=(1, 2))
    elif kind == "bouncing_balls":
        base_color = _pick_colors(rng, 1)[0] * 0.5
        frame = np.broadcast_to(base_color[:, None, None], (3, hw, hw)).copy()
        n_balls = int(domain.motion_params.get("n_balls", 5))
        speed = domain.motion_params.get("ball_speed", 1.0)
        for _ in range(n_balls):
            color = _pick_colors(rng, 1)[0]
            radius = rng.uniform(2.5, 5.0)
            p0 = rng.uniform(radius, hw - 1 - radius, size=2)
            ang = rng.uniform(0.0, 2 * np.pi)
            v = speed * np.array([np.cos(ang), np.sin(ang)])
            cx_t = _fold(p0[0] + v[0] * t, radius, hw - 1 - radius)
            cy_t = _fold(p0[1] + v[1] * t, radius, hw - 1 - radius)
            alpha = np.clip(radius - np.hypot(x - cx_t, y - cy_t), 0.0, 1.0)
            frame = frame * (1 - alpha) + color[:, None, None] * alpha
    else:
        raise ConfigError("unknown background kind %r" % kind)
    return np.clip(frame, 0.0, 1.0)


def _composite_markers(frame, state, cfg):
    """Draw the goal ring then the agent disc over the background."""
    hw = cfg.render_hw
    x, y = _coords(hw)

    def to_px(p):
        return (p + 1.0) / 2.0 * (hw - 1)

    gx, gy = to_px(state.goal[0]), to_px(state.goal[1])
    ring = np.clip(1.5 - np.abs(np.hypot(x - gx, y - gy) - cfg.goal_radius), 0.0, 1.0)
    frame = frame * (1 - ring) + GOAL_COLOR[:, None, None] * ring
    ax, ay = to_px(state.position[0]), to_px(state.position[1])
    disc = np.clip(cfg.agent_radius - np.hypot(x - ax, y - ay), 0.0, 1.0)
    frame = frame * (1 - disc) + AGENT_COLOR[:, None, None] * disc
    return frame


def _quantize(frame):
    # Snap to the 8-bit grid so replay storage as uint8 is lossless.
    return np.round(frame * 255.0) / 255.0


class BlockMDPEnv:
    """Point-mass goal reaching observed through one domain's emission."""

    def __init__(self, domain, cfg=None):
        self.domain = domain
        self.cfg = cfg or EnvConfig()
        self.state = None
        self._frames = None
        self._done = True
        self._bg_cache = None
        if domain.kind in STATIONARY_KINDS:
            self._bg_cache = render_background(domain, 0, self.cfg)

    def _background(self, env_t):
        if self._bg_cache is not None:
            return self._bg_cache
        return render_background(self.domain, env_t, self.cfg)

    def _render(self):
        env_t = self.state.t * self.cfg.action_repeat
        frame = _composite_markers(self._background(env_t).copy(), self.state, self.cfg)
        return _quantize(frame)

    def reset(self, seed):
        """Latent state is a function of the seed only, never the domain."""
        rng = np.random.Generator(np.random.PCG64(seed))
        position = rng.uniform(-1.0, 1.0, size=2)
        goal = rng.uniform(-1.0, 1.0, size=2)
        self.state = LatentState(position=position, velocity=np.zeros(2), goal=goal)
        self._done = False
        frame = self._render()
        self._frames = [frame.copy() for _ in range(self.cfg.frame_stack)]
        return self._observation()

    def _observation(self):
        return Observation(
            frames=np.concatenate(self._frames, axis=0), domain_id=self.domain.domain_id
        )

    def step(self, action):
        if self._done:
            raise EnvContractError("step() called on a finished episode")
        cfg = self.cfg
        action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        st = self.state
        reward = 0.0
        for _ in range(cfg.action_repeat):
            st.velocity = cfg.damping * st.velocity + cfg.dt * action
            st.velocity = np.clip(st.velocity, -cfg.v_max, cfg.v_max)
            st.position = np.clip(st.position + cfg.dt * st.velocity, -1.0, 1.0)
            d2 = float(np.sum((st.position - st.goal) ** 2))
            reward += np.exp(-d2 / cfg.reward_sigma**2)
        st.t += 1
        self._frames.pop(0)
        self._frames.append(self._render())
        self._done = st.t >= cfg.episode_len
        return self._observation(), float(reward), self._done


# ---------------------------------------------------------------------------
# domain splits


def make_domain_split(n_train, n_test, seed, n_extra=2):
    """Deterministic split into train / test / extra (non-stationary) domains.

    Train and test use stationary kinds only; palette seeds are globally
    unique, so no test domain shares a background with a train domain. The
    extra set holds the non-stationary evaluation kinds.
    """
    if n_train < 2:
        raise ConfigError("need at least 2 training domains, got %d" % n_train)
    rng = np.random.Generator(np.random.PCG64(seed))
    used = set()

    def fresh_seed():
        while True:
            s = int(rng.integers(0, 2**63))
            if s not in used:
                used.add(s)
                return s

    train, test, extra = [], [], []
    next_id = 0
    for i in range(n_train):
        kind = STATIONARY_KINDS[i % len(STATIONARY_KINDS)]
        train.append(DomainSpec(next_id, kind, fresh_seed()))
        next_id += 1
    for i in range(n_test):
        kind = STATIONARY_KINDS[(i + 1) % len(STATIONARY_KINDS)]
        test.append(DomainSpec(next_id, kind, fresh_seed()))
        next_id += 1
    for i in range(n_extra):
        kind = NONSTATIONARY_KINDS[i % len(NONSTATIONARY_KINDS)]
        motion = (
            {"n_balls": 5, "ball_speed": 1.0}
            if kind == "bouncing_balls"
            else {"drift_speed": 0.5}
        )
        extra.append(DomainSpec(next_id, kind, fresh_seed(), motion))
        next_id += 1
    return train, test, extra


def save_split(path, train, test, extra):
    doc = {
        "train": [d.to_json() for d in train],
        "test": [d.to_json() for d in test],
        "extra": [d.to_json() for d in extra],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def load_split(path):
    with open(path) as f:
        doc = json.load(f)
    return tuple(
        [DomainSpec.from_json(d) for d in doc.get(k, [])] for k in ("train", "test", "extra")
    )
