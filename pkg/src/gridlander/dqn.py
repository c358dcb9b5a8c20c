"""Deep Q-learning landing agent.

The Q-network maps a normalized (dx, dy, dz) offset to five action values
through fully connected layers 3 -> 256 -> 256 -> 128 -> 5 (ReLU hidden,
linear output). Training follows the standard recipe: epsilon-greedy
rollouts into a uniform replay buffer, one Huber TD step per environment
step once the buffer holds a batch, a soft-updated target network, and a
per-episode epsilon decay. Training stops early when both the minimum and
the mean return over a trailing window clear their thresholds.

Determinism: a single seed derives independent substreams for weight
initialization, environment resets/wind, exploration, and replay sampling,
so a run is a pure function of (configs, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .env import (
    Action,
    EnvConfig,
    LanderState,
    LandingEnv,
    Terminal,
)
from .errors import ContractViolation, NumericFault
from .nncore import (
    Activation,
    DenseLayer,
    dense_backward,
    dense_forward,
    dense_preactivation,
)
from .rng import Rng

QNET_LAYOUT = ((3, 256), (256, 256), (256, 128), (128, 5))
_HIDDEN_ACT = (Activation.RELU, Activation.RELU, Activation.RELU, Activation.IDENTITY)


@dataclass
class QNetwork:
    layers: list[DenseLayer]

    def __post_init__(self) -> None:
        shapes = tuple((l.out_dim, l.in_dim) for l in self.layers)
        expected = tuple((o, i) for i, o in QNET_LAYOUT)
        if shapes != expected:
            raise ContractViolation(f"q-network layout {shapes} != required {expected}")

    def clone(self) -> "QNetwork":
        return QNetwork(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def parameters(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.append(l.weights)
            out.append(l.bias)
        return out


def init_qnetwork(seed: int) -> QNetwork:
    """He-initialized weights, zero biases; deterministic under seed."""
    rng = Rng(seed)
    layers = []
    for (in_dim, out_dim), act in zip(QNET_LAYOUT, _HIDDEN_ACT):
        std = math.sqrt(2.0 / in_dim)
        w = rng.normal(size=(out_dim, in_dim), std=std).astype(np.float32)
        layers.append(DenseLayer(w, np.zeros(out_dim, dtype=np.float32), act))
    return QNetwork(layers)


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 5000
    eps_initial: float = 1.0
    eps_final: float = 0.1
    eps_decrement: float = 0.005
    gamma: float = 0.99
    learning_rate: float = 0.001
    tau: float = 0.01
    batch_size: int = 32
    replay_capacity: int = 50000
    stop_window: int = 100
    stop_mean_threshold: float = 350.0
    stop_min_threshold: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.eps_final <= self.eps_initial <= 1.0:
            raise ContractViolation("need 0 <= eps_final <= eps_initial <= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ContractViolation("gamma must lie in (0,1]")
        if not 0.0 < self.tau <= 1.0:
            raise ContractViolation("tau must lie in (0,1]")
        if self.episodes < 1 or self.batch_size < 1:
            raise ContractViolation("episodes and batch_size must be positive")
        if self.replay_capacity < self.batch_size:
            raise ContractViolation("replay capacity smaller than one batch")


def epsilon_schedule(completed_episodes: int, cfg: TrainConfig) -> float:
    """epsilon(e) = max(final, initial - e * decrement) after e episodes."""
    return max(cfg.eps_final, cfg.eps_initial - completed_episodes * cfg.eps_decrement)


@dataclass(frozen=True)
class Transition:
    state: LanderState
    action: Action
    reward: float
    next_state: LanderState
    done: bool  # true MDP terminal; a step-budget cutoff is not done


class ReplayBuffer:
    """Fixed-capacity ring with uniform without-replacement batch sampling."""

    def __init__(self, capacity: int, rng: Rng) -> None:
        if capacity < 1:
            raise ContractViolation("capacity must be positive")
        self.capacity = capacity
        self.rng = rng
        self._items: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, t: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._cursor] = t
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int) -> list[Transition]:
        if batch_size > len(self._items):
            raise ContractViolation("not enough stored transitions to sample")
        idx = self.rng.sample_without_replacement(len(self._items), batch_size)
        return [self._items[int(i)] for i in idx]


def normalize_state(state: LanderState, env_cfg: EnvConfig) -> np.ndarray:
    """Scale offsets by the grid extents before the network sees them."""
    return np.array(
        [
            state.dx / env_cfg.x_range[1],
            state.dy / env_cfg.y_range[1],
            state.dz / env_cfg.z_range[1],
        ],
        dtype=np.float32,
    )


def _forward_batch(net: QNetwork, x: np.ndarray):
    """Q-values for a (batch, 3) matrix plus per-layer inputs and cached
    preactivations for backprop."""
    inputs = []
    preacts = []
    h = x
    for layer in net.layers:
        inputs.append(h)
        z = dense_preactivation(layer, h)
        preacts.append(z)
        if layer.activation is Activation.RELU:
            h = np.maximum(z, 0.0).astype(np.float32)
        else:
            h = z.astype(np.float32)
    return h, inputs, preacts


def q_values(net: QNetwork, state: LanderState, env_cfg: EnvConfig) -> np.ndarray:
    """Five action values in Action enum order."""
    h = normalize_state(state, env_cfg)
    for layer in net.layers:
        h = dense_forward(layer, h)
    return h


def select_action(
    net: QNetwork, state: LanderState, epsilon: float, rng: Rng, env_cfg: EnvConfig
) -> Action:
    """Epsilon-greedy with lowest-index tie-breaking on the greedy branch."""
    if not 0.0 <= epsilon <= 1.0:
        raise ContractViolation("epsilon must lie in [0,1]")
    if epsilon > 0.0 and rng.uniform() < epsilon:
        return Action(int(rng.integers(5)))
    return Action(int(np.argmax(q_values(net, state, env_cfg))))


class AdamOptimizer:
    """Adam with bias correction over a fixed parameter list."""

    def __init__(self, params: list[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8) -> None:
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g32 = g.astype(np.float32)
            m *= self.beta1
            m += (1.0 - self.beta1) * g32
            v *= self.beta2
            v += (1.0 - self.beta2) * g32 * g32
            p -= (lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)


def compute_targets(
    target_net: QNetwork, batch: list[Transition], gamma: float, env_cfg: EnvConfig
) -> np.ndarray:
    """y = r + gamma * max_a' Q_target(s', a'), or y = r on terminal moves."""
    next_x = np.stack([normalize_state(t.next_state, env_cfg) for t in batch])
    next_q, _, _ = _forward_batch(target_net, next_x)
    best = next_q.max(axis=1).astype(np.float64)
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    cont = np.array([0.0 if t.done else 1.0 for t in batch])
    return rewards + gamma * cont * best


def td_update(
    online: QNetwork,
    target: QNetwork,
    batch: list[Transition],
    gamma: float,
    lr: float,
    optimizer: AdamOptimizer,
    env_cfg: EnvConfig,
) -> float:
    """One Huber (delta=1) gradient step on the taken-action Q-values.

    Returns the mean loss over the batch; raises NumericFault on
    non-finite values.
    """
    if not batch:
        raise ContractViolation("td_update needs a non-empty batch")
    y = compute_targets(target, batch, gamma, env_cfg)
    x = np.stack([normalize_state(t.state, env_cfg) for t in batch])
    actions = np.array([int(t.action) for t in batch])
    q, inputs, preacts = _forward_batch(online, x)
    taken = q[np.arange(len(batch)), actions].astype(np.float64)
    err = taken - y
    abs_err = np.abs(err)
    losses = np.where(abs_err <= 1.0, 0.5 * err * err, abs_err - 0.5)
    loss = float(losses.mean())
    if not math.isfinite(loss):
        raise NumericFault(f"non-finite TD loss; |q|max={np.abs(q).max():.3g}")

    grad_q = np.zeros_like(q, dtype=np.float64)
    grad_q[np.arange(len(batch)), actions] = np.clip(err, -1.0, 1.0) / len(batch)
    grads: list[np.ndarray] = []
    g = grad_q
    for layer, layer_in, z in zip(reversed(online.layers), reversed(inputs), reversed(preacts)):
        gw, gb, g = dense_backward(layer, layer_in, g, preactivation=z)
        grads.append(gb)
        grads.append(gw)
    grads.reverse()
    optimizer.step(online.parameters(), grads, lr)
    return loss


def soft_update(target: QNetwork, online: QNetwork, tau: float) -> None:
    """theta_target += tau * (theta_online - theta_target), in place.

    The incremental form keeps target bitwise unchanged when the networks
    already coincide; tau = 1 short-circuits to an exact copy.
    """
    if not 0.0 <= tau <= 1.0:
        raise ContractViolation("tau must lie in [0,1]")
    for t_layer, o_layer in zip(target.layers, online.layers):
        if tau == 1.0:
            t_layer.weights[:] = o_layer.weights
            t_layer.bias[:] = o_layer.bias
        else:
            t_layer.weights += np.float32(tau) * (o_layer.weights - t_layer.weights)
            t_layer.bias += np.float32(tau) * (o_layer.bias - t_layer.bias)


@dataclass
class RewardTrace:
    """Per-episode returns with the window-100 moving average."""

    returns: list[float] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=list)
    window: int = 100

    def moving_average(self) -> list[float]:
        out = []
        acc = 0.0
        for i, r in enumerate(self.returns):
            acc += r
            if i >= self.window:
                acc -= self.returns[i - self.window]
            out.append(acc / min(i + 1, self.window))
        return out


@dataclass
class TrainResult:
    network: QNetwork
    trace: RewardTrace
    episodes_run: int
    stopped_early: bool


_DIVERGENCE_LIMIT = 1e6


def train(env_cfg: EnvConfig, cfg: TrainConfig, seed: int) -> TrainResult:
    """Full training loop; deterministic under (configs, seed)."""
    master = Rng(seed)
    online = init_qnetwork(master.derive(0).seed)
    target = online.clone()
    env = LandingEnv(env_cfg, master.derive(1))
    action_rng = master.derive(2)
    buffer = ReplayBuffer(cfg.replay_capacity, master.derive(3))
    optimizer = AdamOptimizer(online.parameters())
    trace = RewardTrace()

    stopped_early = False
    episodes_run = 0
    for episode in range(cfg.episodes):
        eps = epsilon_schedule(episode, cfg)
        state = env.reset()
        ep_return = 0.0
        while True:
            action = select_action(online, state, eps, action_rng, env_cfg)
            out = env.step(action)
            done = out.terminal not in (Terminal.NONE, Terminal.MAX_STEPS)
            buffer.push(Transition(state, action, out.reward, out.next, done))
            ep_return += out.reward
            state = out.next
            if len(buffer) >= cfg.batch_size:
                td_update(online, target, buffer.sample(cfg.batch_size), cfg.gamma,
                          cfg.learning_rate, optimizer, env_cfg)
                soft_update(target, online, cfg.tau)
            if out.terminal is not Terminal.NONE:
                break
        episodes_run = episode + 1
        trace.returns.append(ep_return)
        trace.epsilons.append(eps)

        q_probe = q_values(online, state, env_cfg)
        if np.abs(q_probe).mean() > _DIVERGENCE_LIMIT:
            raise NumericFault("q-values diverged beyond 1e6")

        if episodes_run >= cfg.stop_window:
            tail = trace.returns[-cfg.stop_window :]
            if min(tail) > cfg.stop_min_threshold and np.mean(tail) > cfg.stop_mean_threshold:
                stopped_early = True
                break
    return TrainResult(online, trace, episodes_run, stopped_early)


@dataclass
class EpisodeStep:
    index: int
    state: LanderState
    action: Action
    reward: float
    terminal: Terminal


@dataclass
class EpisodeLog:
    start: LanderState
    steps: list[EpisodeStep]
    total_reward: float
    terminal: Terminal

    @property
    def final_state(self) -> LanderState:
        return self.steps[-1].state if self.steps else self.start


@dataclass
class EvalResult:
    success_rate: float
    mean_return: float
    mean_final_deviation_m: float  # over episodes that touched down; nan if none
    traces: list[EpisodeLog]


PolicyFn = Callable[[LanderState], Action]


def greedy_policy(net: QNetwork, env_cfg: EnvConfig) -> PolicyFn:
    return lambda s: Action(int(np.argmax(q_values(net, s, env_cfg))))


def rollout(policy: PolicyFn, env: LandingEnv, start: Optional[LanderState] = None) -> EpisodeLog:
    state = env.reset(start)
    first = state
    steps: list[EpisodeStep] = []
    total = 0.0
    while env.terminal is Terminal.NONE:
        action = policy(state)
        out = env.step(action)
        steps.append(EpisodeStep(len(steps), out.next, action, out.reward, out.terminal))
        total += out.reward
        state = out.next
    return EpisodeLog(first, steps, total, env.terminal)


def evaluate_policy(
    policy: PolicyFn, env_cfg: EnvConfig, episodes: int, seed: int
) -> EvalResult:
    """Greedy rollouts from seeded random starts."""
    if episodes < 1:
        raise ContractViolation("evaluation needs at least one episode")
    env = LandingEnv(env_cfg, Rng(seed).derive(1))
    logs = [rollout(policy, env) for _ in range(episodes)]
    successes = sum(1 for l in logs if l.terminal is Terminal.LANDED_SUCCESS)
    deviations = [
        l.final_state.horizontal_distance()
        for l in logs
        if l.terminal in (Terminal.LANDED_SUCCESS, Terminal.LANDED_OUTSIDE)
    ]
    return EvalResult(
        success_rate=successes / episodes,
        mean_return=float(np.mean([l.total_reward for l in logs])),
        mean_final_deviation_m=float(np.mean(deviations)) if deviations else float("nan"),
        traces=logs,
    )


def evaluate(net: QNetwork, env_cfg: EnvConfig, episodes: int, seed: int) -> EvalResult:
    """Evaluate the network's greedy policy (epsilon = 0)."""
    return evaluate_policy(greedy_policy(net, env_cfg), env_cfg, episodes, seed)
