"""Experiment 3: cartpole difficulty ladder, REINFORCE, zero-shot transfer.

Agents train on the easy rung only and are evaluated greedily across the
whole ladder; the generalization gap is mean(easy) - mean(very_hard).  Two
constraint pathways share the harness: encoding-level agents consume each
observation as a short dynamical trajectory (12-dim frames over 5 steps),
architecture-level agents consume raw observations through leaky spiking
layers whose membrane persists across environment steps within an episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dynlab import autodiff as ad
from dynlab import runio
from dynlab.autodiff import Tensor
from dynlab.spiking import SpikingModel
from dynlab.systems import DRIVE_CLIP, EncodingConfig, SystemSpec

GRAVITY = 9.8
CART_MASS = 1.0
FORCE_MAG = 10.0
TIME_STEP = 0.02
STEP_LIMIT = 200
THETA_LIMIT = 12.0 * math.pi / 180.0
X_LIMIT = 2.4

RL_ENCODING = EncodingConfig(8.0, 5)


@dataclass(frozen=True)
class DifficultyConfig:
    name: str
    pole_length: float  # half-length of the rod, gym convention
    pole_mass: float
    force_noise: float  # std of the multiplicative force perturbation
    init_range: float  # uniform bound on all four state variables at reset
    gravity: float = GRAVITY


LADDER = {
    "easy": DifficultyConfig("easy", 0.5, 0.1, 0.0, 0.05),
    "medium": DifficultyConfig("medium", 0.8, 0.3, 0.005, 0.08),
    "hard": DifficultyConfig("hard", 1.2, 0.5, 0.01, 0.10),
    "very_hard": DifficultyConfig("very_hard", 1.5, 0.7, 0.015, 0.12),
}


def cartpole_derivatives(state, force, cfg: DifficultyConfig):
    """Accelerations (xacc, thacc) of the standard cart-pole equations."""
    _, x_dot, theta, theta_dot = state
    m_p, length = cfg.pole_mass, cfg.pole_length
    total = CART_MASS + m_p
    sin_t, cos_t = math.sin(theta), math.cos(theta)
    temp = (force + m_p * length * theta_dot**2 * sin_t) / total
    thacc = (cfg.gravity * sin_t - cos_t * temp) / (
        length * (4.0 / 3.0 - m_p * cos_t**2 / total)
    )
    xacc = temp - m_p * length * thacc * cos_t / total
    return xacc, thacc


def mechanical_energy(state, cfg: DifficultyConfig) -> float:
    """Total energy of the rod-on-cart model (zero force reference)."""
    _, x_dot, theta, theta_dot = state
    m_p, length = cfg.pole_mass, cfg.pole_length
    kinetic = (
        0.5 * (CART_MASS + m_p) * x_dot**2
        + m_p * length * x_dot * theta_dot * math.cos(theta)
        + (2.0 / 3.0) * m_p * length**2 * theta_dot**2
    )
    potential = m_p * cfg.gravity * length * math.cos(theta)
    return kinetic + potential


class CartPoleEnv:
    """Semi-implicit Euler cart-pole with a parametric difficulty ladder."""

    def __init__(self, difficulty: DifficultyConfig | str, rng: np.random.Generator):
        self.cfg = LADDER[difficulty] if isinstance(difficulty, str) else difficulty
        self.rng = rng
        self.state = None
        self.steps = 0
        self.done = True

    def reset(self) -> np.ndarray:
        r = self.cfg.init_range
        self.state = self.rng.uniform(-r, r, size=4)
        self.steps = 0
        self.done = False
        return self.state.copy()

    def step(self, action: int):
        if self.done:
            raise RuntimeError("stepping a finished episode; call reset()")
        force = FORCE_MAG if action == 1 else -FORCE_MAG
        if self.cfg.force_noise > 0:
            force *= 1.0 + self.rng.normal(0.0, self.cfg.force_noise)
        x, x_dot, theta, theta_dot = self.state
        xacc, thacc = cartpole_derivatives(self.state, force, self.cfg)
        x_dot += TIME_STEP * xacc
        x += TIME_STEP * x_dot
        theta_dot += TIME_STEP * thacc
        theta += TIME_STEP * theta_dot
        self.state = np.array([x, x_dot, theta, theta_dot])
        self.steps += 1
        self.done = bool(
            abs(x) > X_LIMIT or abs(theta) > THETA_LIMIT or self.steps >= STEP_LIMIT
        )
        return self.state.copy(), 1.0, self.done


class BatchCartPole:
    """Lockstep batch of independent episodes (greedy evaluation path)."""

    def __init__(self, n: int, difficulty, seed: int):
        self.cfg = LADDER[difficulty] if isinstance(difficulty, str) else difficulty
        self.rng = runio.generator(seed, "batch_env", self.cfg.name)
        r = self.cfg.init_range
        self.states = self.rng.uniform(-r, r, size=(n, 4))
        self.active = np.ones(n, dtype=bool)
        self.rewards = np.zeros(n)
        self.steps = 0
        self.n = n

    def step(self, actions: np.ndarray) -> bool:
        force = np.where(actions == 1, FORCE_MAG, -FORCE_MAG)
        if self.cfg.force_noise > 0:
            force = force * (1.0 + self.rng.normal(0.0, self.cfg.force_noise, size=self.n))
        x, x_dot, theta, theta_dot = self.states.T
        m_p, length = self.cfg.pole_mass, self.cfg.pole_length
        total = CART_MASS + m_p
        sin_t, cos_t = np.sin(theta), np.cos(theta)
        temp = (force + m_p * length * theta_dot**2 * sin_t) / total
        thacc = (self.cfg.gravity * sin_t - cos_t * temp) / (
            length * (4.0 / 3.0 - m_p * cos_t**2 / total)
        )
        xacc = temp - m_p * length * thacc * cos_t / total
        x_dot = x_dot + TIME_STEP * xacc
        x = x + TIME_STEP * x_dot
        theta_dot = theta_dot + TIME_STEP * thacc
        theta = theta + TIME_STEP * theta_dot
        new_states = np.stack([x, x_dot, theta, theta_dot], axis=1)
        self.states = np.where(self.active[:, None], new_states, self.states)
        self.rewards += self.active
        self.steps += 1
        crashed = (np.abs(self.states[:, 0]) > X_LIMIT) | (
            np.abs(self.states[:, 2]) > THETA_LIMIT
        )
        self.active &= ~crashed
        if self.steps >= STEP_LIMIT:
            self.active[:] = False
        return bool(self.active.any())


# ---------------------------------------------------------------------------
# observation encoding (encoding-level pathway)

_ENC_SUBSTEPS = RL_ENCODING.resolved_substeps()
_ENC_H = RL_ENCODING.dt_frame / _ENC_SUBSTEPS


def _encode_observation_py(obs, delta, n_steps, substeps, h, clip, a, bc, g, w):
    """Per-observation RK4 drive rollout (scalar math; jitted when possible)."""
    frames = np.empty((n_steps, obs.shape[0], 3))
    for i in range(obs.shape[0]):
        value = obs[i]
        x, y, z = value, 0.2 * value, -value
        frames[0, i, 0] = x
        frames[0, i, 1] = y
        frames[0, i, 2] = z
        for frame in range(1, n_steps):
            for _ in range(substeps):
                k1x = y
                k1y = -a * x - bc * x * x * x - delta * y + g * z
                k1z = -w * x - delta * z + g * x * y
                x2, y2, z2 = x + 0.5 * h * k1x, y + 0.5 * h * k1y, z + 0.5 * h * k1z
                k2x = y2
                k2y = -a * x2 - bc * x2 * x2 * x2 - delta * y2 + g * z2
                k2z = -w * x2 - delta * z2 + g * x2 * y2
                x3, y3, z3 = x + 0.5 * h * k2x, y + 0.5 * h * k2y, z + 0.5 * h * k2z
                k3x = y3
                k3y = -a * x3 - bc * x3 * x3 * x3 - delta * y3 + g * z3
                k3z = -w * x3 - delta * z3 + g * x3 * y3
                x4, y4, z4 = x + h * k3x, y + h * k3y, z + h * k3z
                k4x = y4
                k4y = -a * x4 - bc * x4 * x4 * x4 - delta * y4 + g * z4
                k4z = -w * x4 - delta * z4 + g * x4 * y4
                x += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
                y += h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
                z += h / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
                if x > clip: x = clip
                elif x < -clip: x = -clip
                if y > clip: y = clip
                elif y < -clip: y = -clip
                if z > clip: z = clip
                elif z < -clip: z = -clip
            frames[frame, i, 0] = x
            frames[frame, i, 1] = y
            frames[frame, i, 2] = z
    return frames


try:  # the rollout encoder runs once per environment step; jit when available
    import numba

    _encode_observation_fast = numba.njit(cache=True)(_encode_observation_py)
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _encode_observation_fast = _encode_observation_py


def encode_observation(obs: np.ndarray, delta: float) -> np.ndarray:
    """One observation -> (5, 12) frames of its per-state trajectories."""
    from dynlab.systems import DUFFING_ALPHA, DUFFING_BETA_CUBIC, DUFFING_GAMMA, DUFFING_OMEGA

    obs = np.ascontiguousarray(obs, dtype=np.float64)
    frames = _encode_observation_fast(
        obs, float(delta), RL_ENCODING.n_steps, _ENC_SUBSTEPS, _ENC_H, DRIVE_CLIP,
        DUFFING_ALPHA, DUFFING_BETA_CUBIC, DUFFING_GAMMA, DUFFING_OMEGA,
    )
    return frames.reshape(RL_ENCODING.n_steps, obs.shape[0] * 3)


def encode_observation_batch(obs: np.ndarray, delta: float) -> np.ndarray:
    """(n, 4) observations -> (n, 5, 12) frames via the vectorized integrator."""
    from dynlab.systems import encode_features

    n = obs.shape[0]
    traj = encode_features(obs.ravel(), SystemSpec.duffing(delta), RL_ENCODING, clip=DRIVE_CLIP)
    return np.ascontiguousarray(
        traj.data.reshape(n, 4, RL_ENCODING.n_steps, 3).transpose(0, 2, 1, 3).reshape(n, RL_ENCODING.n_steps, 12)
    )


# ---------------------------------------------------------------------------
# agents

AGENT_KINDS = ("mlp_raw", "mlp_encoded", "snn_encoded", "snn_leaky", "rleaky")


@dataclass(frozen=True)
class AgentSpec:
    kind: str
    delta: float | None = None
    beta: float | None = None
    hidden: int = 256
    lr: float = 5e-4
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"kind must be one of {AGENT_KINDS}")
        if self.kind.endswith("encoded") and self.delta is None:
            raise ValueError("encoded agents need delta")
        if self.kind in ("snn_leaky", "rleaky") and self.beta is None:
            raise ValueError("leaky agents need beta")

    @staticmethod
    def encoding_level(kind: str, delta: float | None = None) -> "AgentSpec":
        return AgentSpec(kind, delta=delta, hidden=128, lr=1e-3)

    @staticmethod
    def architecture_level(kind: str, beta: float | None = None) -> "AgentSpec":
        return AgentSpec(kind, beta=beta, hidden=256, lr=5e-4)

    @property
    def knob(self) -> float:
        if self.kind.endswith("encoded"):
            return self.delta
        if self.kind in ("snn_leaky", "rleaky"):
            return self.beta
        return math.nan

    @property
    def pathway(self) -> str:
        return "encoding" if (self.kind.endswith("encoded") or self.kind == "mlp_raw" and self.hidden == 128) else "architecture"

    @property
    def label(self) -> str:
        knob = self.knob
        return self.kind if math.isnan(knob) else f"{self.kind}({knob:g})"


class Policy:
    """Common interface: per-step logits with graph, batched greedy logits."""

    spec: AgentSpec

    def reset_episode(self, batch: int = 1) -> None:  # pragma: no cover - default
        pass

    def step_logits(self, obs: np.ndarray) -> Tensor:
        raise NotImplementedError

    def greedy_actions(self, obs_batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Tensor]:
        raise NotImplementedError


class MLPPolicy(Policy):
    def __init__(self, spec: AgentSpec, rng: np.random.Generator):
        self.spec = spec
        in_dim = 12 if spec.kind == "mlp_encoded" else 4
        self.net = ad.MLP([in_dim, spec.hidden, spec.hidden, 2], rng, use_layer_norm=True)

    def _inputs(self, obs_batch: np.ndarray) -> np.ndarray:
        if self.spec.kind == "mlp_encoded":
            frames = encode_observation_batch(obs_batch, self.spec.delta)
            return frames.mean(axis=1)  # stateless consumer: time-averaged frame
        return obs_batch

    def step_logits(self, obs: np.ndarray) -> Tensor:
        if self.spec.kind == "mlp_encoded":
            x = encode_observation(obs, self.spec.delta).mean(axis=0)[None, :]
        else:
            x = obs[None, :]
        return self.net.forward(Tensor(x))

    def greedy_actions(self, obs_batch: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            logits = self.net.forward(Tensor(self._inputs(obs_batch)))
        return np.argmax(logits.data, axis=1)

    def params(self):
        return self.net.params()

    def reset_episode(self, batch: int = 1) -> None:
        pass


class EncodedSNNPolicy(Policy):
    """Stateless across env steps: each observation is a fresh 5-frame run."""

    #: encoded frames carry ~0.2x the raw state scale; the input layer is
    #: boosted so typical drives reach threshold within an episode's range
    INPUT_GAIN = 5.0

    def __init__(self, spec: AgentSpec, rng: np.random.Generator):
        self.spec = spec
        self.net = SpikingModel([12, spec.hidden, spec.hidden], 2, beta=0.95, rng=rng)
        self.net.layers[0].w.data *= self.INPUT_GAIN

    def step_logits(self, obs: np.ndarray) -> Tensor:
        frames = encode_observation(obs, self.spec.delta)
        return self.net.run_sequence(frames[None, :, :])

    def greedy_actions(self, obs_batch: np.ndarray) -> np.ndarray:
        frames = encode_observation_batch(obs_batch, self.spec.delta)
        with ad.no_grad():
            logits = self.net.run_sequence(frames)
        return np.argmax(logits.data, axis=1)

    def params(self):
        return self.net.params()

    def reset_episode(self, batch: int = 1) -> None:
        pass


class LeakySNNPolicy(Policy):
    """Raw observations; membrane persists across env steps within an episode."""

    def __init__(self, spec: AgentSpec, rng: np.random.Generator):
        self.spec = spec
        self.net = SpikingModel(
            [4, spec.hidden, spec.hidden], 2, beta=spec.beta, rng=rng,
            recurrent=(spec.kind == "rleaky"),
        )
        self._batch = 0

    def reset_episode(self, batch: int = 1) -> None:
        self.net.reset(batch)
        self._batch = batch

    def step_logits(self, obs: np.ndarray) -> Tensor:
        return self.net.step_logits(Tensor(obs[None, :]))

    def greedy_actions(self, obs_batch: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            logits = self.net.step_logits(Tensor(obs_batch))
        return np.argmax(logits.data, axis=1)

    def params(self):
        return self.net.params()


def build_policy(spec: AgentSpec, seed: int) -> Policy:
    rng = runio.generator(seed, "policy_init", spec.label)
    if spec.kind in ("mlp_raw", "mlp_encoded"):
        return MLPPolicy(spec, rng)
    if spec.kind == "snn_encoded":
        return EncodedSNNPolicy(spec, rng)
    return LeakySNNPolicy(spec, rng)


# ---------------------------------------------------------------------------
# REINFORCE

@dataclass
class TrainResult:
    spec: AgentSpec
    seed: int
    protocol: str
    curve: list
    converged: bool
    convergence_episode: int  # first episode meeting the solved criterion, -1 if never
    final_eval: float


@dataclass
class EvalReport:
    per_difficulty: dict  # name -> (mean, std, success_rate)
    gap: float | None
    converged: bool
    convergence_episode: int


def discounted_returns(rewards, gamma: float = 0.99) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def normalize_returns(returns: np.ndarray) -> np.ndarray:
    centered = returns - returns.mean()
    std = returns.std()
    if std > 1e-8:
        centered = centered / std
    return centered


def greedy_eval(policy: Policy, difficulty: str, episodes: int, seed: int) -> tuple[float, float, float]:
    """Mean/std reward and success rate over lockstep greedy episodes."""
    batch = BatchCartPole(episodes, difficulty, seed)
    policy.reset_episode(batch=episodes)
    while True:
        actions = policy.greedy_actions(batch.states)
        if not batch.step(actions):
            break
    rewards = batch.rewards
    return float(rewards.mean()), float(rewards.std()), float(np.mean(rewards >= 195.0))


#: desk-scale convergence floor: a run whose final greedy easy-rung score
#: falls below this is flagged non-converged and excluded from gap statistics
CONVERGED_EVAL_FLOOR = 150.0

FIXED_BUDGET_EPISODES = 2000
SUFFICIENT_MAX_EPISODES = 5000
SOLVED_TARGET = 195.0
SOLVED_CONSECUTIVE = 5
EVAL_EVERY = 20


def reinforce_train(
    spec: AgentSpec,
    difficulty: str = "easy",
    protocol: str = "fixed",
    episodes: int | None = None,
    seed: int = 0,
    gamma: float = 0.99,
    eval_episodes: int = 5,
    env_factory=None,
) -> tuple[Policy, TrainResult]:
    """Episode-wise REINFORCE with normalized discounted returns.

    protocol="fixed" runs the full budget; protocol="sufficient" stops once
    the greedy evaluation clears the solved target five checks in a row
    (checked every 20 episodes).  Non-convergence is reported, not fatal.
    """
    if protocol not in ("fixed", "sufficient"):
        raise ValueError("protocol must be 'fixed' or 'sufficient'")
    if episodes is None:
        episodes = FIXED_BUDGET_EPISODES if protocol == "fixed" else SUFFICIENT_MAX_EPISODES
    policy = build_policy(spec, seed)
    params = policy.params()
    opt = ad.Adam(params, lr=spec.lr)
    action_rng = runio.generator(seed, "actions", spec.label)
    env_rng = runio.generator(seed, "env", spec.label, difficulty)
    make_env = env_factory or (lambda: CartPoleEnv(difficulty, env_rng))
    env = make_env()

    curve = []
    consecutive = 0
    convergence_episode = -1
    for episode in range(1, episodes + 1):
        obs = env.reset()
        policy.reset_episode()
        logits_steps, actions, rewards = [], [], []
        done = False
        while not done:
            logits = policy.step_logits(obs)
            probs = ad.softmax_probs(logits.data)[0]
            action = int(action_rng.random() < probs[1])
            obs, reward, done = env.step(action)
            logits_steps.append(logits)
            actions.append(action)
            rewards.append(reward)
        curve.append(float(sum(rewards)))
        returns = normalize_returns(discounted_returns(rewards, gamma))
        if np.any(returns != 0.0):
            seq = ad.concat(logits_steps, axis=0)
            logp = ad.gather_logprob(seq, actions)
            loss = ad.smul(ad.tsum(ad.mul(logp, Tensor(returns))), -1.0)
            grads, _ = ad.gradients(loss, params)
            ad.clip_global_norm(grads, spec.grad_clip)
            opt.step(grads)
        if episode % EVAL_EVERY == 0 and convergence_episode < 0:
            mean, _, _ = greedy_eval(policy, difficulty, eval_episodes, seed * 7919 + episode)
            if mean >= SOLVED_TARGET:
                consecutive += 1
                if consecutive >= SOLVED_CONSECUTIVE:
                    convergence_episode = episode
                    if protocol == "sufficient":
                        break
            else:
                consecutive = 0
    final_eval, _, _ = greedy_eval(policy, difficulty, 20, seed * 31 + 1)
    converged = convergence_episode >= 0 or final_eval >= CONVERGED_EVAL_FLOOR
    return policy, TrainResult(
        spec=spec,
        seed=seed,
        protocol=protocol,
        curve=curve,
        converged=converged,
        convergence_episode=convergence_episode,
        final_eval=final_eval,
    )


def evaluate_zero_shot(policy: Policy, result: TrainResult, episodes: int = 100,
                       seed: int = 0) -> EvalReport:
    """Greedy evaluation over the full ladder; gap only for converged runs."""
    per = {}
    for name in LADDER:
        per[name] = greedy_eval(policy, name, episodes, seed)
    gap = (per["easy"][0] - per["very_hard"][0]) if result.converged else None
    return EvalReport(
        per_difficulty=per,
        gap=gap,
        converged=result.converged,
        convergence_episode=result.convergence_episode,
    )


def _sweep_job(job):
    spec, seed, protocol, episodes = job
    try:
        policy, result = reinforce_train(spec, protocol=protocol, episodes=episodes, seed=seed)
        report = evaluate_zero_shot(policy, result, episodes=100, seed=seed)
    except ad.NonFiniteError as err:
        return {"label": spec.label, "seed": seed, "error": str(err)}
    easy = report.per_difficulty["easy"]
    vhard = report.per_difficulty["very_hard"]
    return {
        "pathway": "architecture" if spec.beta is not None or spec.kind == "mlp_raw" else "encoding",
        "kind": spec.kind,
        "delta_or_beta": spec.knob,
        "seed": seed,
        "protocol": protocol,
        "easy_mean": easy[0],
        "easy_std": easy[1],
        "vhard_mean": vhard[0],
        "vhard_std": vhard[1],
        "gap": report.gap if report.gap is not None else math.nan,
        "converged": result.converged,
        "convergence_episode": result.convergence_episode,
        "curve": result.curve,
    }


def run_sweep(specs: list[AgentSpec], seeds, protocol: str = "fixed",
              episodes: int | None = None, processes: int | None = None) -> tuple[list, list]:
    jobs = [(spec, int(seed), protocol, episodes) for spec in specs for seed in seeds]
    results = runio.run_jobs(_sweep_job, jobs, processes)
    rows = [r for r in results if "error" not in r]
    failures = [r for r in results if "error" in r]
    return rows, failures


def beta_sweep(betas, seeds, protocol: str = "fixed", episodes: int | None = None,
               kind: str = "snn_leaky", processes: int | None = None) -> tuple[list, list]:
    """Architecture-level sweep; non-converged runs keep gap as NaN."""
    specs = [AgentSpec.architecture_level(kind, beta=float(b)) for b in betas]
    if not list(seeds):
        return [], []
    return run_sweep(specs, seeds, protocol, episodes, processes)
