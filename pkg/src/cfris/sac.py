"""Soft actor-critic phase optimization over the closed-form sum SE.

The agent tunes all panel phases at once; the environment's reward is the
closed-form sum SE, so one "episode" is a sequence of phase updates under
fixed long-term statistics. Networks are small dense numpy MLPs with
hand-written reverse-mode gradients (finite-difference checkable) and Adam
updates; twin soft Q functions, a state-value network with a Polyak-averaged
target, and a tanh-squashed Gaussian policy.

Gradient-free baselines (uniform random search and cyclic coordinate ascent
on a phase grid) share the same reward evaluator.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .closed_form import helper_scalars, sum_se
from .estimation import LmmseOperator, PilotAssignment
from .geometry import ChannelStatistics, PhaseConfig, TWO_PI

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
SQUASH_EPS = 1e-6


@dataclass
class SacConfig:
    """Training hyperparameters (reference-table defaults)."""

    discount: float = 0.995
    hidden_sizes: tuple = (128, 128)
    learning_rate: float = 3e-4
    buffer_capacity: int = 4000
    batch_size: int = 32
    steps_per_episode: int = 50
    num_episodes: int = 2000
    target_smoothing: float = 0.005
    reward_scale: float = 2.0
    gradient_steps_per_env_step: int = 1

    def __post_init__(self):
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must be in (0, 1]")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size must not exceed buffer_capacity")
        if not (0.0 < self.target_smoothing <= 1.0):
            raise ValueError("target_smoothing must be in (0, 1]")
        if min(self.learning_rate, self.reward_scale) <= 0:
            raise ValueError("learning_rate and reward_scale must be positive")


# ---------------------------------------------------------------------------
# Dense network with explicit reverse mode
# ---------------------------------------------------------------------------

class Mlp:
    """Fully connected net, ReLU hidden layers, linear output."""

    def __init__(self, sizes, rng: np.random.Generator):
        self.sizes = tuple(sizes)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, params):
        for idx in range(len(self.weights)):
            self.weights[idx] = params[2 * idx]
            self.biases[idx] = params[2 * idx + 1]

    def forward(self, x: np.ndarray):
        """Returns (output, cache) for a (B, in) batch."""
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if idx == last else np.maximum(z, 0.0)
            acts.append(h)
        return h, (acts, pre)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients of sum(grad_out * output) w.r.t. params and input."""
        acts, pre = cache
        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for idx in range(len(self.weights) - 1, -1, -1):
            if idx != len(self.weights) - 1:
                g = g * (pre[idx] > 0)
            grads[2 * idx] = acts[idx].T @ g
            grads[2 * idx + 1] = g.sum(axis=0)
            g = g @ self.weights[idx].T
        return grads, g


class Adam:
    """Adaptive-moment updates over a list of parameter arrays."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        scale = self.lr * np.sqrt(1 - self.beta2 ** self.t) / (1 - self.beta1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= scale * m / (np.sqrt(v) + self.eps)


# ---------------------------------------------------------------------------
# Networks bundle and policy head
# ---------------------------------------------------------------------------

@dataclass
class SacNetworks:
    """Value net with Polyak target, twin Q nets and the squashed policy."""

    value: Mlp
    target_value: Mlp
    q1: Mlp
    q2: Mlp
    policy: Mlp
    action_dim: int

    @staticmethod
    def build(obs_dim: int, action_dim: int, hidden, rng: np.random.Generator):
        sizes_v = (obs_dim, *hidden, 1)
        sizes_q = (obs_dim + action_dim, *hidden, 1)
        sizes_pi = (obs_dim, *hidden, 2 * action_dim)
        nets = SacNetworks(Mlp(sizes_v, rng), Mlp(sizes_v, rng), Mlp(sizes_q, rng),
                           Mlp(sizes_q, rng), Mlp(sizes_pi, rng), action_dim)
        for tgt, src in zip(nets.target_value.params, nets.value.params):
            tgt[...] = src
        return nets

    def polyak_update(self, tau: float):
        for tgt, src in zip(self.target_value.params, self.value.params):
            tgt *= 1.0 - tau
            tgt += tau * src


def _policy_stats(networks: SacNetworks, obs: np.ndarray):
    out, cache = networks.policy.forward(obs)
    a_dim = networks.action_dim
    mean, log_std_raw = out[:, :a_dim], out[:, a_dim:]
    log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std, log_std_raw, cache


def _squashed(mean, log_std, eps_noise):
    std = np.exp(log_std)
    u = mean + std * eps_noise
    action = np.tanh(u)
    sq = 1.0 - action ** 2
    log_prob = np.sum(-0.5 * eps_noise ** 2 - log_std - 0.5 * np.log(2.0 * np.pi)
                      - np.log(sq + SQUASH_EPS), axis=1)
    return action, log_prob, u, sq, std


def policy_sample(networks: SacNetworks, obs: np.ndarray, rng: np.random.Generator):
    """Reparameterized action draw; returns (action in [-1,1]^A, log_prob)."""
    single = obs.ndim == 1
    batch = obs[None] if single else obs
    mean, log_std, _, _ = _policy_stats(networks, batch)
    eps_noise = rng.standard_normal(mean.shape)
    action, log_prob, _, _, _ = _squashed(mean, log_std, eps_noise)
    if single:
        return action[0], float(log_prob[0])
    return action, log_prob


def policy_log_prob(networks: SacNetworks, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Log density of a given squashed action under the current policy."""
    mean, log_std, _, _ = _policy_stats(networks, obs)
    u = np.arctanh(np.clip(action, -1 + 1e-12, 1 - 1e-12))
    std = np.exp(log_std)
    z = (u - mean) / std
    sq = 1.0 - action ** 2
    return np.sum(-0.5 * z ** 2 - log_std - 0.5 * np.log(2.0 * np.pi)
                  - np.log(sq + SQUASH_EPS), axis=1)


# ---------------------------------------------------------------------------
# Replay buffer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity ring of (s, a, r, s') transitions, uniform sampling."""

    def __init__(self, obs_dim: int, action_dim: int, capacity: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.cursor = 0
        self.size = 0

    def store(self, obs, action, reward, next_obs):
        idx = self.cursor
        self.obs[idx] = obs
        self.actions[idx] = action
        self.rewards[idx] = reward
        self.next_obs[idx] = next_obs
        self.cursor = (idx + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch_size)
        return (self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx])


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

class RisEnvironment:
    """Phase-tuning environment with the closed-form sum SE as reward.

    Observation: all panel phases followed by the per-(AP, user, antenna)
    phase of the cascaded LoS mean. The estimation matrices are phase
    independent, so they are built once from the bound statistics.
    """

    def __init__(self, stats: ChannelStatistics, operator: LmmseOperator,
                 assignment: PilotAssignment, rho: float, sigma2: float,
                 tau_p: int, tau_c: int):
        self.stats = stats
        self.operator = operator
        self.assignment = assignment
        self.rho, self.sigma2 = rho, sigma2
        self.tau_p, self.tau_c = tau_p, tau_c
        t = stats.topology
        self.action_dim = t.num_ris * t.elements_per_ris
        self.obs_dim = self.action_dim + t.num_aps * t.num_users * t.antennas_per_ap
        self._static = helper_scalars(stats, operator,
                                      PhaseConfig.zeros(t.num_ris, t.elements_per_ris))
        self.phase = PhaseConfig.zeros(t.num_ris, t.elements_per_ris)
        self.clamp_count = 0

    def _helpers_at(self, phase: PhaseConfig):
        st = self.stats
        if st.topology.num_ris == 0:
            return self._static
        f = np.einsum("rjm,rm,rkm->jrk", st.a_ris.conj(), phase.phases,
                      st.los_ris_user)
        g1 = np.einsum("rjk,jrk,rjn->jkn", st.eta1, f, st.a_ap)
        return replace(self._static, phase=phase, f=f, g1=g1)

    def evaluate(self, phase: PhaseConfig) -> float:
        """Closed-form sum SE at the given phases (reward oracle)."""
        report = sum_se(self.stats, self.operator, phase, self.rho, self.sigma2,
                        self.tau_p, self.tau_c, helpers=self._helpers_at(phase))
        return report.sum_se

    def observation(self, phase: PhaseConfig) -> np.ndarray:
        helpers = self._helpers_at(phase)
        return np.concatenate([phase.theta.ravel(), np.angle(helpers.g1).ravel()])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        t = self.stats.topology
        self.phase = PhaseConfig.uniform(t.num_ris, t.elements_per_ris, rng)
        return self.observation(self.phase)

    def step(self, action: np.ndarray):
        """Apply a [-1, 1]^A action (affine map to [0, 2pi]); returns
        (observation, reward). Out-of-range actions are clamped and counted."""
        action = np.asarray(action, dtype=float)
        if action.shape != (self.action_dim,):
            raise ValueError(f"action must have shape ({self.action_dim},)")
        if np.any(np.abs(action) > 1.0):
            self.clamp_count += 1
            action = np.clip(action, -1.0, 1.0)
        t = self.stats.topology
        theta = np.pi * (action + 1.0)
        self.phase = PhaseConfig(theta.reshape(t.num_ris, t.elements_per_ris))
        reward = self.evaluate(self.phase)
        return self.observation(self.phase), reward


# ---------------------------------------------------------------------------
# Losses and gradients
# ---------------------------------------------------------------------------

def _q_forward(net: Mlp, obs, action):
    x = np.concatenate([obs, action], axis=1)
    out, cache = net.forward(x)
    return out[:, 0], cache


def sac_losses(networks: SacNetworks, batch, config: SacConfig,
               rng: np.random.Generator):
    """Value/twin-Q/policy losses with reverse-mode parameter gradients.

    Returns (losses, grads) where losses = (J_V, J_Q1, J_Q2, J_pi) and grads
    maps network name to its parameter gradient list.
    """
    obs, actions, rewards, next_obs = batch
    batch_size = obs.shape[0]
    gamma, alpha = config.discount, config.reward_scale

    # Fresh reparameterized actions for the value and policy objectives.
    mean, log_std, log_std_raw, pi_cache = _policy_stats(networks, obs)
    eps_noise = rng.standard_normal(mean.shape)
    new_action, new_logp, u, sq, std = _squashed(mean, log_std, eps_noise)

    q1_new, q1_new_cache = _q_forward(networks.q1, obs, new_action)
    q2_new, q2_new_cache = _q_forward(networks.q2, obs, new_action)
    q_min = np.minimum(q1_new, q2_new)
    take_q1 = q1_new <= q2_new

    # Value loss against the entropy-regularized Q target.
    v_pred, v_cache = networks.value.forward(obs)
    v_pred = v_pred[:, 0]
    v_target = q_min - new_logp
    v_err = v_pred - v_target
    loss_v = 0.5 * np.mean(v_err ** 2)
    grads_v, _ = networks.value.backward(v_cache, (v_err / batch_size)[:, None])

    # Twin Q losses against the scaled reward plus discounted target value.
    v_next = networks.target_value(next_obs)[:, 0]
    q_target = alpha * rewards + gamma * v_next
    q1_pred, q1_cache = _q_forward(networks.q1, obs, actions)
    q2_pred, q2_cache = _q_forward(networks.q2, obs, actions)
    q1_err = q1_pred - q_target
    q2_err = q2_pred - q_target
    loss_q1 = 0.5 * np.mean(q1_err ** 2)
    loss_q2 = 0.5 * np.mean(q2_err ** 2)
    grads_q1, _ = networks.q1.backward(q1_cache, (q1_err / batch_size)[:, None])
    grads_q2, _ = networks.q2.backward(q2_cache, (q2_err / batch_size)[:, None])

    # Policy loss: E[log pi(a~|s) - min Q(s, a~)], reparameterized.
    loss_pi = float(np.mean(new_logp - q_min))
    # dQ/da through the chosen twin, at the fresh action.
    dq_da = np.zeros_like(new_action)
    for net, cache, mask in ((networks.q1, q1_new_cache, take_q1),
                             (networks.q2, q2_new_cache, ~take_q1)):
        _, g_in = net.backward(cache, mask[:, None].astype(float))
        dq_da += g_in[:, obs.shape[1]:]
    # d log pi / du: only the squash correction depends on u given eps.
    dlogp_du = 2.0 * new_action * sq / (sq + SQUASH_EPS)
    g_u = (dlogp_du - dq_da * sq) / batch_size
    g_mean = g_u
    g_log_std = g_u * std * eps_noise - 1.0 / batch_size
    clip_mask = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
    g_out = np.concatenate([g_mean, g_log_std * clip_mask], axis=1)
    grads_pi, _ = networks.policy.backward(pi_cache, g_out)

    losses = (float(loss_v), float(loss_q1), float(loss_q2), loss_pi)
    grads = {"value": grads_v, "q1": grads_q1, "q2": grads_q2, "policy": grads_pi}
    return losses, grads


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainingTrace:
    """Per-step log, CSV-serializable."""

    columns = ("episode", "step", "reward", "J_V", "J_Q1", "J_Q2", "J_pi")
    rows: list = field(default_factory=list)

    def append(self, episode, step, *rest):
        self.rows.append((int(episode), int(step), *(float(x) for x in rest)))


def sac_train(env: RisEnvironment, config: SacConfig, rng: np.random.Generator):
    """Run SAC on the environment; returns (best PhaseConfig, best reward,
    TrainingTrace, SacNetworks). Aborts on non-finite losses."""
    networks = SacNetworks.build(env.obs_dim, env.action_dim,
                                 config.hidden_sizes, rng)
    buffer = ReplayBuffer(env.obs_dim, env.action_dim, config.buffer_capacity)
    optimizers = {name: Adam(getattr(networks, attr).params, config.learning_rate)
                  for name, attr in (("value", "value"), ("q1", "q1"),
                                     ("q2", "q2"), ("policy", "policy"))}
    trace = TrainingTrace()
    best_reward = -np.inf
    best_phase = env.phase
    losses = (np.nan,) * 4
    for episode in range(config.num_episodes):
        obs = env.reset(rng)
        for step in range(config.steps_per_episode):
            action, _ = policy_sample(networks, obs, rng)
            next_obs, reward = env.step(action)
            buffer.store(obs, action, reward, next_obs)
            if reward > best_reward:
                best_reward = reward
                best_phase = env.phase
            obs = next_obs
            if buffer.size >= config.batch_size:
                for _ in range(config.gradient_steps_per_env_step):
                    batch = buffer.sample(config.batch_size, rng)
                    losses, grads = sac_losses(networks, batch, config, rng)
                    if not all(np.isfinite(losses)):
                        raise RuntimeError(
                            f"divergent SAC loss at episode {episode}: {losses}")
                    for name, attr in (("value", "value"), ("q1", "q1"),
                                       ("q2", "q2"), ("policy", "policy")):
                        optimizers[name].step(getattr(networks, attr).params,
                                              grads[name])
                    networks.polyak_update(config.target_smoothing)
            row_losses = [x if np.isfinite(x) else 0.0 for x in losses]
            trace.append(episode, step, reward, *row_losses)
    return best_phase, float(best_reward), trace, networks


# ---------------------------------------------------------------------------
# Gradient-free baselines
# ---------------------------------------------------------------------------

def random_search(env: RisEnvironment, n_draws: int, rng: np.random.Generator):
    """Best of n uniform phase draws; returns (PhaseConfig, reward, all rewards)."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    t = env.stats.topology
    best = (None, -np.inf)
    rewards = np.zeros(n_draws)
    for idx in range(n_draws):
        phase = PhaseConfig.uniform(t.num_ris, t.elements_per_ris, rng)
        val = env.evaluate(phase)
        rewards[idx] = val
        if val > best[1]:
            best = (phase, val)
    return best[0], float(best[1]), rewards


def coordinate_ascent(env: RisEnvironment, sweeps: int, grid_points: int,
                      rng: np.random.Generator):
    """Cyclic per-element phase optimization over a uniform grid; the
    objective never decreases across moves. Returns (PhaseConfig, reward,
    per-move objective history)."""
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    t = env.stats.topology
    theta = PhaseConfig.uniform(t.num_ris, t.elements_per_ris, rng).theta.copy()
    grid = np.linspace(0.0, TWO_PI, grid_points, endpoint=False)
    current = env.evaluate(PhaseConfig(theta))
    history = [current]
    for _ in range(sweeps):
        for r in range(t.num_ris):
            for m in range(t.elements_per_ris):
                base = theta[r, m]
                candidates = []
                for value in grid:
                    theta[r, m] = value
                    candidates.append(env.evaluate(PhaseConfig(theta)))
                best_idx = int(np.argmax(candidates))
                if candidates[best_idx] > current:
                    theta[r, m] = grid[best_idx]
                    current = candidates[best_idx]
                else:
                    theta[r, m] = base
                history.append(current)
    return PhaseConfig(theta), float(current), np.array(history)
