"""Clipped-surrogate PPO over hybrid or classical actor/critic networks.

The update follows the standard recipe: per-iteration rollout collection
with per-step value and log-prob recording, discounted returns and GAE with
termination/truncation handled separately (truncation bootstraps through the
value function), K epochs of shuffled minibatches with advantage
normalization per minibatch, ratio clipping, entropy bonus, separate Adam
groups for actor and critic, and global gradient-norm clipping per group.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import hybrid as qh
from .backend import Exact, QuantumBackend
from .envs import BoxActions, DiscreteActions, VectorEnv, env_spec, make_env
from .nets import Mlp, Orthogonal

log = logging.getLogger(__name__)

SCHEMES = (
    "HybridQuantumActor",
    "HybridQuantumCritic",
    "FullQuantumActorCritic",
    "ClassicalBaseline",
)


class TrainingAbort(RuntimeError):
    """Raised when a non-finite loss is detected; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class PpoConfig:
    max_steps: int
    buffer_size: int
    minibatch_size: int
    epochs: int
    n_actors: int
    gamma: float
    gae_lambda: float
    actor_lr: float
    critic_lr: float
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    grad_norm_clip: float = 0.5
    scheme: str = "HybridQuantumActor"
    value_target: str = "returns"  # "returns" (loss uses R_t) or "gae" (A + V)
    anneal_lr: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae lambda must lie in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip epsilon must be > 0")
        if self.entropy_coef < 0.0 or self.value_coef < 0.0:
            raise ValueError("loss coefficients must be >= 0")
        if self.value_target not in ("returns", "gae"):
            raise ValueError("value_target must be 'returns' or 'gae'")
        if self.minibatch_size > self.buffer_size:
            log.warning(
                "minibatch size %d exceeds buffer size %d; clamping",
                self.minibatch_size,
                self.buffer_size,
            )
            self.minibatch_size = self.buffer_size

    @property
    def n_iterations(self) -> int:
        return self.max_steps // self.buffer_size


# --------------------------------------------------------------------------
# actor / critic wrappers with a shared gradient interface
# --------------------------------------------------------------------------


class HybridPolicy:
    def __init__(self, net: qh.HybridNet):
        self.net = net
        self._grads = {k: np.zeros_like(v) for k, v in net.parameters().items()}

    def forward(self, states, cache: bool = False) -> qh.PolicyOutput:
        return self.net.forward(states, cache=cache)

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g[:] = 0.0

    def backward(self, upstream) -> None:
        for k, g in self.net.backward(upstream).items():
            self._grads[k] += g

    def parameters(self) -> dict[str, np.ndarray]:
        return self.net.parameters()

    def gradients(self) -> dict[str, np.ndarray]:
        return self._grads


class ClassicalPolicy:
    """MLP actor with the same head conventions as the hybrid networks."""

    def __init__(self, state_dim: int, output: qh.OutputSpec, rng, hidden=(64, 64)):
        self.output = output
        width = (
            output.n
            if isinstance(output, qh.Discrete)
            else 2 * output.dims
        )
        self.mlp = Mlp.build(
            (state_dim, *hidden, width),
            rng,
            output_init=Orthogonal(0.01),
        )
        self._h_pairs = None

    def forward(self, states, cache: bool = False) -> qh.PolicyOutput:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        h = self.mlp.forward(states, cache=cache)
        if isinstance(self.output, qh.Discrete):
            return qh.PolicyOutput("discrete", probs=qh.softmax(h))
        pairs = h.reshape(h.shape[0], self.output.dims, 2)
        if cache:
            self._h_pairs = pairs
        sp = qh.softplus(pairs)
        return qh.PolicyOutput("beta", alpha=1.0 + sp[..., 0], beta=1.0 + sp[..., 1])

    def zero_grad(self) -> None:
        self.mlp.zero_grad()

    def backward(self, upstream) -> None:
        if isinstance(self.output, qh.Discrete):
            self.mlp.backward(np.asarray(upstream))
            return
        dalpha, dbeta = upstream
        from scipy.special import expit

        dpairs = np.stack([dalpha, dbeta], axis=-1) * expit(self._h_pairs)
        self.mlp.backward(dpairs.reshape(dpairs.shape[0], -1))

    def parameters(self) -> dict[str, np.ndarray]:
        return self.mlp.parameters()

    def gradients(self) -> dict[str, np.ndarray]:
        return self.mlp.gradients()


class ClassicalCritic:
    def __init__(self, state_dim: int, rng, hidden=(64, 64)):
        self.mlp = Mlp.build((state_dim, *hidden, 1), rng, output_init=Orthogonal(1.0))

    def value(self, states, cache: bool = False) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return self.mlp.forward(states, cache=cache)[:, 0]

    def zero_grad(self) -> None:
        self.mlp.zero_grad()

    def backward(self, dvalue) -> None:
        self.mlp.backward(np.asarray(dvalue)[:, None])

    def parameters(self) -> dict[str, np.ndarray]:
        return self.mlp.parameters()

    def gradients(self) -> dict[str, np.ndarray]:
        return self.mlp.gradients()


class HybridCritic:
    def __init__(self, net: qh.HybridNet):
        if not isinstance(net.config.output, qh.Value):
            raise ValueError("hybrid critic needs a Value output head")
        self.net = net
        self._grads = {k: np.zeros_like(v) for k, v in net.parameters().items()}

    def value(self, states, cache: bool = False) -> np.ndarray:
        return self.net.forward(states, cache=cache).value

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g[:] = 0.0

    def backward(self, dvalue) -> None:
        for k, g in self.net.backward(np.asarray(dvalue)).items():
            self._grads[k] += g

    def parameters(self) -> dict[str, np.ndarray]:
        return self.net.parameters()

    def gradients(self) -> dict[str, np.ndarray]:
        return self._grads


# --------------------------------------------------------------------------
# Adam with parameter groups handled externally
# --------------------------------------------------------------------------


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-5):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr_scale: float = 1.0) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= (self.lr * lr_scale) * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)

    def state_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t}

    def load_state_dict(self, state: dict) -> None:
        self.m = {k: np.asarray(v) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v) for k, v in state["v"].items()}
        self.t = int(state["t"])


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale the whole group so its global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


# --------------------------------------------------------------------------
# returns, GAE, clipped objective
# --------------------------------------------------------------------------


def compute_returns(rewards, terminated, truncated, next_values, gamma) -> np.ndarray:
    """Discounted returns by backward recursion, reset at termination.

    next_values[t] must hold V(s_{t+1}) using the true (pre-reset) successor
    state; it is consumed at truncated steps and at the buffer end.
    """
    rewards = np.asarray(rewards, dtype=float)
    terminated = np.asarray(terminated, dtype=bool)
    truncated = np.asarray(truncated, dtype=bool)
    next_values = np.asarray(next_values, dtype=float)
    returns = np.zeros_like(rewards)
    carry = next_values[-1]
    for t in range(len(rewards) - 1, -1, -1):
        tail = np.where(truncated[t], next_values[t], carry)
        returns[t] = rewards[t] + gamma * np.where(terminated[t], 0.0, tail)
        carry = returns[t]
    return returns


def compute_gae(rewards, values, next_values, terminated, truncated, gamma, lam) -> np.ndarray:
    """GAE by backward recursion over delta_t = r + gamma V(s') - V(s).

    The recursion resets across any episode boundary; terminated steps zero
    the bootstrap inside delta, truncated steps bootstrap through V.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    terminated = np.asarray(terminated, dtype=bool)
    truncated = np.asarray(truncated, dtype=bool)
    not_done = ~(terminated | truncated)
    delta = rewards + gamma * np.where(terminated, 0.0, next_values) - values
    adv = np.zeros_like(rewards)
    carry = np.zeros_like(delta[-1])
    for t in range(len(rewards) - 1, -1, -1):
        carry = delta[t] + gamma * lam * not_done[t] * carry
        adv[t] = carry
    return adv


def clipped_objective(ratio, advantage, eps) -> np.ndarray:
    """Per-sample min(r A, clip(r, 1-eps, 1+eps) A)."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-std (plus 1e-8) normalization at minibatch level."""
    if adv.size > 1:
        return (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv - adv.mean()


# --------------------------------------------------------------------------
# rollout collection
# --------------------------------------------------------------------------


@dataclass
class RolloutBuffer:
    states: np.ndarray  # (T, A, S)
    actions: np.ndarray  # (T, A) ints or (T, A, D) floats
    rewards: np.ndarray  # (T, A)
    final_states: np.ndarray  # (T, A, S): true successor, pre-auto-reset
    terminated: np.ndarray
    truncated: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.states.shape[0] * self.states.shape[1]

    def process(self, critic, gamma: float, lam: float, final_obs: np.ndarray) -> None:
        """Fill returns and advantages, bootstrapping truncations through V."""
        T, A = self.rewards.shape
        next_values = np.empty((T, A))
        next_values[:-1] = self.values[1:]
        next_values[-1] = critic.value(final_obs)
        trunc_t, trunc_a = np.nonzero(self.truncated)
        if trunc_t.size:
            v_fin = critic.value(self.final_states[trunc_t, trunc_a])
            next_values[trunc_t, trunc_a] = v_fin
        next_values[self.terminated] = 0.0
        self.advantages = compute_gae(
            self.rewards, self.values, next_values, self.terminated, self.truncated, gamma, lam
        )
        self.returns = compute_returns(
            self.rewards, self.terminated, self.truncated, next_values, gamma
        )


class EpisodeTracker:
    """Running per-actor episode sums surviving across buffer boundaries."""

    def __init__(self, n_actors: int):
        self.returns = np.zeros(n_actors)
        self.lengths = np.zeros(n_actors, dtype=int)

    def update(self, rewards, done) -> tuple[list[float], list[int]]:
        self.returns += rewards
        self.lengths += 1
        finished_r = self.returns[done].tolist()
        finished_l = self.lengths[done].tolist()
        self.returns[done] = 0.0
        self.lengths[done] = 0
        return finished_r, finished_l

    def state_dict(self) -> dict:
        return {"returns": self.returns.tolist(), "lengths": self.lengths.tolist()}

    def load_state_dict(self, state: dict) -> None:
        self.returns = np.array(state["returns"], dtype=float)
        self.lengths = np.array(state["lengths"], dtype=int)


def collect(
    actor,
    critic,
    venv: VectorEnv,
    states: np.ndarray,
    steps_per_actor: int,
    rng: np.random.Generator,
    bounds: qh.ActionBounds | None,
    tracker: EpisodeTracker,
) -> tuple[RolloutBuffer, np.ndarray]:
    """Roll the behavior policy for steps_per_actor vector steps."""
    A = venv.n_actors
    S = venv.spec.state_dim
    discrete = isinstance(venv.spec.actions, DiscreteActions)
    T = steps_per_actor

    buf = RolloutBuffer(
        states=np.empty((T, A, S)),
        actions=np.empty((T, A), dtype=int) if discrete else np.empty((T, A, len(bounds.low))),
        rewards=np.empty((T, A)),
        final_states=np.empty((T, A, S)),
        terminated=np.zeros((T, A), dtype=bool),
        truncated=np.zeros((T, A), dtype=bool),
        log_probs=np.empty((T, A)),
        values=np.empty((T, A)),
    )
    for t in range(T):
        out = actor.forward(states)
        actions, logp = qh.sample_and_logprob(out, rng, bounds)
        buf.states[t] = states
        buf.actions[t] = actions
        buf.log_probs[t] = logp
        buf.values[t] = critic.value(states)
        res = venv.step(actions)
        buf.rewards[t] = res.rewards
        buf.terminated[t] = res.terminated
        buf.truncated[t] = res.truncated
        buf.final_states[t] = res.final_states
        done = res.terminated | res.truncated
        ep_r, ep_l = tracker.update(res.rewards, done)
        buf.episode_returns.extend(ep_r)
        buf.episode_lengths.extend(ep_l)
        states = res.states
    return buf, states


# --------------------------------------------------------------------------
# the PPO update
# --------------------------------------------------------------------------


def _head_upstream(output, actions, bounds, coeff, ent_coeff):
    """Combine policy-gradient and entropy-bonus head gradients."""
    if output.kind == "discrete":
        lpg = qh.log_prob_grads(output, actions)
        ent = qh.entropy_grads(output)
        return coeff[:, None] * lpg + ent_coeff * ent
    da, db = qh.log_prob_grads(output, actions, bounds)
    ea, eb = qh.entropy_grads(output)
    return (coeff[:, None] * da + ent_coeff * ea, coeff[:, None] * db + ent_coeff * eb)


def ppo_update(
    actor,
    critic,
    buffer: RolloutBuffer,
    config: PpoConfig,
    actor_opt: Adam,
    critic_opt: Adam,
    rng: np.random.Generator,
    bounds: qh.ActionBounds | None,
    lr_scale: float = 1.0,
) -> dict:
    """K epochs of shuffled minibatches; returns mean loss statistics."""
    if buffer.returns is None or buffer.advantages is None:
        raise ValueError("buffer must be processed before updating")
    N = buffer.size
    S = buffer.states.shape[-1]
    states = buffer.states.reshape(N, S)
    actions = buffer.actions.reshape(N, -1) if buffer.actions.ndim == 3 else buffer.actions.reshape(N)
    old_logp = buffer.log_probs.reshape(N)
    advantages = buffer.advantages.reshape(N)
    if config.value_target == "returns":
        targets = buffer.returns.reshape(N)
    else:
        targets = advantages + buffer.values.reshape(N)

    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_frac": 0.0}
    n_minibatches = 0

    for _epoch in range(config.epochs):
        perm = rng.permutation(N)
        for start in range(0, N, config.minibatch_size):
            idx = perm[start : start + config.minibatch_size]
            m = idx.size
            st = states[idx]
            act = actions[idx]
            adv = normalize_advantages(advantages[idx])

            out = actor.forward(st, cache=True)
            new_logp = qh.log_prob(out, act, bounds)
            ratio = np.exp(new_logp - old_logp[idx])
            surr1 = ratio * adv
            surr2 = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv
            policy_loss = -np.minimum(surr1, surr2).mean()
            ent = qh.entropy(out, bounds)
            entropy_mean = ent.mean()

            v = critic.value(st, cache=True)
            v_err = v - targets[idx]
            value_loss = float(np.mean(v_err**2))

            if not (
                math.isfinite(policy_loss)
                and math.isfinite(value_loss)
                and math.isfinite(entropy_mean)
            ):
                raise TrainingAbort(
                    "non-finite loss",
                    {
                        "policy_loss": float(policy_loss),
                        "value_loss": value_loss,
                        "entropy": float(entropy_mean),
                        "ratio_range": [float(ratio.min()), float(ratio.max())],
                        "advantage_range": [float(adv.min()), float(adv.max())],
                    },
                )

            # d(-min(surr1, surr2))/d(log pi): active only on the unclipped branch
            unclipped = surr1 <= surr2
            coeff = -(adv * ratio * unclipped) / m
            upstream = _head_upstream(out, act, bounds, coeff, -config.entropy_coef / m)
            actor.zero_grad()
            actor.backward(upstream)
            clip_gradients(actor.gradients(), config.grad_norm_clip)
            actor_opt.step(actor.gradients(), lr_scale)

            critic.zero_grad()
            critic.backward(config.value_coef * 2.0 * v_err / m)
            clip_gradients(critic.gradients(), config.grad_norm_clip)
            critic_opt.step(critic.gradients(), lr_scale)

            stats["policy_loss"] += float(policy_loss)
            stats["value_loss"] += value_loss
            stats["entropy"] += float(entropy_mean)
            stats["approx_kl"] += float(np.mean(old_logp[idx] - new_logp))
            stats["clip_frac"] += float(np.mean(~unclipped))
            n_minibatches += 1

    for k in stats:
        stats[k] /= max(n_minibatches, 1)
    return stats


# --------------------------------------------------------------------------
# agents, training loop, evaluation, checkpoints
# --------------------------------------------------------------------------


def action_interface(spec) -> tuple[qh.OutputSpec, qh.ActionBounds | None]:
    """Map an env action space to a policy head and optional bounds."""
    if isinstance(spec.actions, DiscreteActions):
        return qh.Discrete(spec.actions.n), None
    bounds = qh.ActionBounds(np.array(spec.actions.low), np.array(spec.actions.high))
    return qh.ContinuousBeta(spec.actions.dims), bounds


def build_agents(
    scheme: str,
    env_specification,
    net_config: qh.HybridNetConfig | None,
    rng: np.random.Generator,
    backend_mode=None,
    critic_hidden=(64, 64),
):
    """Instantiate (actor, critic, bounds) for one of the four schemes."""
    output, bounds = action_interface(env_specification)
    state_dim = env_specification.state_dim
    backend_mode = backend_mode or Exact()

    def hybrid(out_spec):
        from dataclasses import replace

        cfg = replace(net_config, state_dim=state_dim, output=out_spec)
        return qh.HybridNet(cfg, rng, QuantumBackend(backend_mode))

    if scheme == "HybridQuantumActor":
        actor = HybridPolicy(hybrid(output))
        critic = ClassicalCritic(state_dim, rng, critic_hidden)
    elif scheme == "HybridQuantumCritic":
        actor = ClassicalPolicy(state_dim, output, rng, critic_hidden)
        critic = HybridCritic(hybrid(qh.Value()))
    elif scheme == "FullQuantumActorCritic":
        actor = HybridPolicy(hybrid(output))
        critic = HybridCritic(hybrid(qh.Value()))
    elif scheme == "ClassicalBaseline":
        actor = ClassicalPolicy(state_dim, output, rng, critic_hidden)
        critic = ClassicalCritic(state_dim, rng, critic_hidden)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return actor, critic, bounds


@dataclass
class EvalConfig:
    episodes: int = 100
    target_return: float | None = None
    trigger_return: float | None = None  # defaults to target_return
    stop_on_solve: bool = True
    min_iterations_between: int = 5

    def trigger(self) -> float | None:
        return self.trigger_return if self.trigger_return is not None else self.target_return


def evaluate_policy(
    actor,
    env_id: str,
    n_episodes: int,
    seed,
    bounds: qh.ActionBounds | None = None,
    deterministic: bool = False,
) -> dict:
    """Run n_episodes fresh episodes; returns mean/std/min/max of returns.

    Episodes run in lockstep so the policy is queried in batches; finished
    episodes drop out of the batch.
    """
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=n_episodes)
    envs = [make_env(env_id, int(s)) for s in seeds]
    states = np.stack([env.reset() for env in envs])
    totals = np.zeros(n_episodes)
    active = list(range(n_episodes))
    while active:
        out = actor.forward(states[active])
        if deterministic:
            actions = qh.deterministic_action(out, bounds)
        else:
            actions, _ = qh.sample_and_logprob(out, rng, bounds)
        still = []
        for j, i in enumerate(active):
            res = envs[i].step(actions[j])
            totals[i] += res.reward
            if not (res.terminated or res.truncated):
                states[i] = res.next_state
                still.append(i)
        active = still
    return {
        "episodes": n_episodes,
        "mean_return": float(totals.mean()),
        "std_return": float(totals.std()),
        "min_return": float(totals.min()),
        "max_return": float(totals.max()),
    }


CURVE_FIELDS = (
    "iteration",
    "env_steps",
    "return_mean",
    "return_std",
    "episodes",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "steps_per_second",
)


@dataclass
class TrainResult:
    rows: list[dict]
    solved_at_steps: int | None
    final_eval: dict | None
    actor: object
    critic: object
    bounds: qh.ActionBounds | None
    trainer: object | None = None


class Trainer:
    """Owns one seeded training run; supports bit-exact save/restore.

    All randomness flows from five streams spawned off the master seed
    (network init, env resets, action sampling, minibatch shuffling,
    evaluation), so a state_dict snapshot resumes the run exactly.
    """

    def __init__(
        self,
        env_id: str,
        net_config: qh.HybridNetConfig | None,
        ppo_config: PpoConfig,
        seed: int,
        eval_config: EvalConfig | None = None,
        backend_mode=None,
        critic_hidden=(64, 64),
    ):
        self.env_id = env_id
        self.ppo_config = ppo_config
        self.eval_config = eval_config or EvalConfig()
        if ppo_config.buffer_size % ppo_config.n_actors != 0:
            raise ValueError("buffer size must be divisible by the actor count")
        spec = env_spec(env_id)
        ss = np.random.SeedSequence(seed)
        init_ss, env_ss, action_ss, shuffle_ss, eval_ss = ss.spawn(5)
        init_rng = np.random.default_rng(init_ss)
        self.action_rng = np.random.default_rng(action_ss)
        self.shuffle_rng = np.random.default_rng(shuffle_ss)
        self.eval_rng = np.random.default_rng(eval_ss)

        self.actor, self.critic, self.bounds = build_agents(
            ppo_config.scheme, spec, net_config, init_rng, backend_mode, critic_hidden
        )
        self.actor_opt = Adam(self.actor.parameters(), ppo_config.actor_lr)
        self.critic_opt = Adam(self.critic.parameters(), ppo_config.critic_lr)
        self.venv = VectorEnv(env_id, ppo_config.n_actors, env_ss.spawn(ppo_config.n_actors))
        self.states = self.venv.reset()
        self.tracker = EpisodeTracker(ppo_config.n_actors)

        self.rows: list[dict] = []
        self.iteration = 0
        self.env_steps = 0
        self.solved_at_steps: int | None = None
        self.last_eval: dict | None = None
        self._last_eval_iter = -(10**9)
        self._recent_returns: list[float] = []

    # -- the loop ----------------------------------------------------------

    def run(self, max_new_iterations: int | None = None, on_iteration=None) -> TrainResult:
        cfg = self.ppo_config
        steps_per_actor = cfg.buffer_size // cfg.n_actors
        M = cfg.n_iterations
        end = M if max_new_iterations is None else min(M, self.iteration + max_new_iterations)
        while self.iteration < end:
            m = self.iteration + 1
            t0 = time.perf_counter()
            lr_scale = 1.0 - (m - 1) / M if cfg.anneal_lr else 1.0
            buffer, self.states = collect(
                self.actor, self.critic, self.venv, self.states,
                steps_per_actor, self.action_rng, self.bounds, self.tracker,
            )
            buffer.process(self.critic, cfg.gamma, cfg.gae_lambda, self.states)
            stats = ppo_update(
                self.actor, self.critic, buffer, cfg,
                self.actor_opt, self.critic_opt, self.shuffle_rng, self.bounds, lr_scale,
            )
            self.iteration = m
            self.env_steps += buffer.size
            elapsed = time.perf_counter() - t0

            ep = buffer.episode_returns
            self._recent_returns.extend(ep)
            del self._recent_returns[:-20]
            if ep:
                ret_mean, ret_std = float(np.mean(ep)), float(np.std(ep))
            elif self.rows:
                ret_mean, ret_std = self.rows[-1]["return_mean"], self.rows[-1]["return_std"]
            else:
                ret_mean, ret_std = math.nan, math.nan
            row = {
                "iteration": m,
                "env_steps": self.env_steps,
                "return_mean": ret_mean,
                "return_std": ret_std,
                "episodes": len(ep),
                "policy_loss": stats["policy_loss"],
                "value_loss": stats["value_loss"],
                "entropy": stats["entropy"],
                "approx_kl": stats["approx_kl"],
                "steps_per_second": buffer.size / max(elapsed, 1e-9),
            }
            self.rows.append(row)
            if on_iteration is not None:
                on_iteration(row)
            if self._maybe_evaluate() and self.eval_config.stop_on_solve:
                break
        return TrainResult(
            self.rows, self.solved_at_steps, self.last_eval,
            self.actor, self.critic, self.bounds,
        )

    def _maybe_evaluate(self) -> bool:
        """Evaluate when the rolling training return crosses the trigger;
        returns True when the target is newly reached."""
        ec = self.eval_config
        trigger = ec.trigger()
        if (
            trigger is None
            or not self._recent_returns
            or np.mean(self._recent_returns) < trigger
            or self.iteration - self._last_eval_iter < ec.min_iterations_between
        ):
            return False
        self._last_eval_iter = self.iteration
        self.last_eval = evaluate_policy(
            self.actor, self.env_id, ec.episodes,
            self.eval_rng.integers(0, 2**63 - 1), self.bounds,
        )
        if ec.target_return is not None and self.last_eval["mean_return"] >= ec.target_return:
            if self.solved_at_steps is None:
                self.solved_at_steps = self.env_steps
            return True
        return False

    # -- snapshot / restore --------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "actor_params": {k: v.copy() for k, v in self.actor.parameters().items()},
            "critic_params": {k: v.copy() for k, v in self.critic.parameters().items()},
            "actor_opt": {
                "m": {k: v.copy() for k, v in self.actor_opt.m.items()},
                "v": {k: v.copy() for k, v in self.actor_opt.v.items()},
                "t": self.actor_opt.t,
            },
            "critic_opt": {
                "m": {k: v.copy() for k, v in self.critic_opt.m.items()},
                "v": {k: v.copy() for k, v in self.critic_opt.v.items()},
                "t": self.critic_opt.t,
            },
            "env_snapshots": self.venv.get_state(),
            "tracker": self.tracker.state_dict(),
            "rng": {
                "action": self.action_rng.bit_generator.state,
                "shuffle": self.shuffle_rng.bit_generator.state,
                "eval": self.eval_rng.bit_generator.state,
            },
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "solved_at_steps": self.solved_at_steps,
            "recent_returns": list(self._recent_returns),
            "last_eval_iter": self._last_eval_iter,
            "current_states": self.states.copy(),
        }

    def load_state_dict(self, state: dict) -> None:
        for k, v in self.actor.parameters().items():
            v[:] = state["actor_params"][k]
        for k, v in self.critic.parameters().items():
            v[:] = state["critic_params"][k]
        self.actor_opt.load_state_dict(state["actor_opt"])
        self.critic_opt.load_state_dict(state["critic_opt"])
        self.venv.set_state(state["env_snapshots"])
        self.tracker.load_state_dict(state["tracker"])
        self.action_rng.bit_generator.state = state["rng"]["action"]
        self.shuffle_rng.bit_generator.state = state["rng"]["shuffle"]
        self.eval_rng.bit_generator.state = state["rng"]["eval"]
        self.iteration = state["iteration"]
        self.env_steps = state["env_steps"]
        self.solved_at_steps = state["solved_at_steps"]
        self._recent_returns = list(state["recent_returns"])
        self._last_eval_iter = state["last_eval_iter"]
        self.states = np.asarray(state["current_states"])


def train(
    env_id: str,
    net_config: qh.HybridNetConfig | None,
    ppo_config: PpoConfig,
    seed: int,
    eval_config: EvalConfig | None = None,
    backend_mode=None,
    critic_hidden=(64, 64),
    on_iteration=None,
) -> TrainResult:
    trainer = Trainer(
        env_id, net_config, ppo_config, seed, eval_config, backend_mode, critic_hidden
    )
    result = trainer.run(on_iteration=on_iteration)
    result.trainer = trainer
    return result
