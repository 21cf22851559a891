"""Native, seeded classic-control environments plus a vectorized wrapper.

Dynamics constants follow the publicly documented reference Gym
implementations (see _CONSTANTS in each class).  Termination means the task's
own end condition; truncation means the per-episode step limit.  Every
trajectory is bit-reproducible given the reset seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiscreteActions:
    n: int


@dataclass(frozen=True)
class BoxActions:
    low: tuple[float, ...]
    high: tuple[float, ...]

    @property
    def dims(self) -> int:
        return len(self.low)


ActionSpace = DiscreteActions | BoxActions


@dataclass(frozen=True)
class EnvSpec:
    id: str
    state_dim: int
    actions: ActionSpace
    max_episode_steps: int


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


class EnvError(RuntimeError):
    pass


class Env:
    """Single-writer scalar environment with an owned RNG stream."""

    spec: EnvSpec

    def __init__(self, seed: int | None = None):
        self.rng = np.random.default_rng(seed)
        self._state: np.ndarray | None = None
        self._steps = 0
        self._done = False

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self._state = self._sample_initial()
        self._steps = 0
        self._done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        return self._state.copy()

    def step(self, action) -> StepResult:
        if self._state is None:
            raise EnvError("step before reset")
        if self._done:
            raise EnvError("step after terminal state without reset")
        self._check_action(action)
        reward, terminated = self._transition(action)
        self._steps += 1
        truncated = (not terminated) and self._steps >= self.spec.max_episode_steps
        self._done = terminated or truncated
        return StepResult(self.observation(), reward, terminated, truncated)

    # -- checkpoint support ------------------------------------------------

    def get_state(self) -> dict:
        return {
            "state": self._state.tolist() if self._state is not None else None,
            "steps": self._steps,
            "done": self._done,
            "rng": self.rng.bit_generator.state,
        }

    def set_state(self, snapshot: dict) -> None:
        self._state = None if snapshot["state"] is None else np.array(snapshot["state"])
        self._steps = snapshot["steps"]
        self._done = snapshot["done"]
        self.rng.bit_generator.state = snapshot["rng"]

    # -- per-env hooks -------------------------------------------------------

    def _sample_initial(self) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, action) -> tuple[float, bool]:
        raise NotImplementedError

    def _check_action(self, action) -> None:
        space = self.spec.actions
        if isinstance(space, DiscreteActions):
            a = int(action)
            if not 0 <= a < space.n:
                raise EnvError(f"action {action} outside Discrete({space.n})")
        else:
            a = np.atleast_1d(np.asarray(action, dtype=float))
            if a.shape != (space.dims,) or not np.all(np.isfinite(a)):
                raise EnvError(f"action {action} outside Box space")


class CartPoleEnv(Env):
    """Inverted pendulum on a cart, Euler integration.

    Constants: gravity 9.8, cart mass 1.0, pole mass 0.1, half-length 0.5,
    force +-10 N, tau 0.02 s; terminate on |x| > 2.4 or |theta| > 12 deg.
    """

    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    TOTAL_MASS = MASS_CART + MASS_POLE
    LENGTH = 0.5
    POLE_MASS_LENGTH = MASS_POLE * LENGTH
    FORCE_MAG = 10.0
    TAU = 0.02
    THETA_LIMIT = 12.0 * 2.0 * math.pi / 360.0
    X_LIMIT = 2.4

    def __init__(self, seed: int | None = None, version: int = 1):
        super().__init__(seed)
        if version not in (0, 1):
            raise ValueError("CartPole version must be 0 or 1")
        self.spec = EnvSpec(
            f"CartPole-v{version}", 4, DiscreteActions(2), 500 if version == 1 else 200
        )

    def _sample_initial(self) -> np.ndarray:
        return self.rng.uniform(-0.05, 0.05, size=4)

    def _transition(self, action) -> tuple[float, bool]:
        x, x_dot, theta, theta_dot = self._state
        force = self.FORCE_MAG if int(action) == 1 else -self.FORCE_MAG
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + self.POLE_MASS_LENGTH * theta_dot**2 * sin_t) / self.TOTAL_MASS
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos_t**2 / self.TOTAL_MASS)
        )
        x_acc = temp - self.POLE_MASS_LENGTH * theta_acc * cos_t / self.TOTAL_MASS
        x += self.TAU * x_dot
        x_dot += self.TAU * x_acc
        theta += self.TAU * theta_dot
        theta_dot += self.TAU * theta_acc
        self._state = np.array([x, x_dot, theta, theta_dot])
        terminated = abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT
        return 1.0, terminated


class MountainCarEnv(Env):
    """Discrete mountain car: force 0.001, gravity term 0.0025, goal 0.5."""

    MIN_POS = -1.2
    MAX_POS = 0.6
    MAX_SPEED = 0.07
    GOAL_POS = 0.5
    FORCE = 0.001
    GRAVITY = 0.0025

    def __init__(self, seed: int | None = None):
        super().__init__(seed)
        self.spec = EnvSpec("MountainCar-v0", 2, DiscreteActions(3), 200)

    def _sample_initial(self) -> np.ndarray:
        return np.array([self.rng.uniform(-0.6, -0.4), 0.0])

    def _transition(self, action) -> tuple[float, bool]:
        position, velocity = self._state
        velocity += (int(action) - 1) * self.FORCE + math.cos(3 * position) * (-self.GRAVITY)
        velocity = min(max(velocity, -self.MAX_SPEED), self.MAX_SPEED)
        position += velocity
        position = min(max(position, self.MIN_POS), self.MAX_POS)
        if position == self.MIN_POS and velocity < 0:
            velocity = 0.0
        self._state = np.array([position, velocity])
        terminated = position >= self.GOAL_POS and velocity >= 0.0
        return -1.0, terminated


class MountainCarContinuousEnv(Env):
    """Continuous mountain car: power 0.0015, +100 at the 0.45 goal,
    -0.1 a^2 action cost per step."""

    MIN_POS = -1.2
    MAX_POS = 0.6
    MAX_SPEED = 0.07
    GOAL_POS = 0.45
    POWER = 0.0015

    def __init__(self, seed: int | None = None):
        super().__init__(seed)
        self.spec = EnvSpec(
            "MountainCarContinuous-v0", 2, BoxActions((-1.0,), (1.0,)), 999
        )

    def _sample_initial(self) -> np.ndarray:
        return np.array([self.rng.uniform(-0.6, -0.4), 0.0])

    def _transition(self, action) -> tuple[float, bool]:
        position, velocity = self._state
        force = min(max(float(np.asarray(action).reshape(-1)[0]), -1.0), 1.0)
        velocity += force * self.POWER - 0.0025 * math.cos(3 * position)
        velocity = min(max(velocity, -self.MAX_SPEED), self.MAX_SPEED)
        position += velocity
        position = min(max(position, self.MIN_POS), self.MAX_POS)
        if position == self.MIN_POS and velocity < 0:
            velocity = 0.0
        self._state = np.array([position, velocity])
        terminated = position >= self.GOAL_POS and velocity >= 0.0
        reward = (100.0 if terminated else 0.0) - 0.1 * force**2
        return reward, terminated


def _angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2.0 * math.pi)) - math.pi


class PendulumEnv(Env):
    """Torque-limited pendulum swing-up; never terminates, truncates at 200."""

    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0
    DT = 0.05
    G = 10.0
    M = 1.0
    L = 1.0

    def __init__(self, seed: int | None = None):
        super().__init__(seed)
        self.spec = EnvSpec("Pendulum-v1", 3, BoxActions((-2.0,), (2.0,)), 200)

    def _sample_initial(self) -> np.ndarray:
        return np.array([self.rng.uniform(-math.pi, math.pi), self.rng.uniform(-1.0, 1.0)])

    def observation(self) -> np.ndarray:
        theta, theta_dot = self._state
        return np.array([math.cos(theta), math.sin(theta), theta_dot])

    def _transition(self, action) -> tuple[float, bool]:
        theta, theta_dot = self._state
        u = min(max(float(np.asarray(action).reshape(-1)[0]), -self.MAX_TORQUE), self.MAX_TORQUE)
        cost = _angle_normalize(theta) ** 2 + 0.1 * theta_dot**2 + 0.001 * u**2
        theta_dot = theta_dot + (
            3.0 * self.G / (2.0 * self.L) * math.sin(theta) + 3.0 / (self.M * self.L**2) * u
        ) * self.DT
        theta_dot = min(max(theta_dot, -self.MAX_SPEED), self.MAX_SPEED)
        theta = theta + theta_dot * self.DT
        self._state = np.array([theta, theta_dot])
        return -cost, False


def _acrobot_wrap(x: float) -> float:
    diff = 2.0 * math.pi
    while x > math.pi:
        x -= diff
    while x < -math.pi:
        x += diff
    return x


class AcrobotEnv(Env):
    """Two-link underactuated arm, RK4 integration of the book dynamics."""

    DT = 0.2
    M1 = M2 = 1.0
    L1 = 1.0
    LC1 = LC2 = 0.5
    I1 = I2 = 1.0
    G = 9.8
    MAX_VEL_1 = 4.0 * math.pi
    MAX_VEL_2 = 9.0 * math.pi
    TORQUES = (-1.0, 0.0, 1.0)

    def __init__(self, seed: int | None = None):
        super().__init__(seed)
        self.spec = EnvSpec("Acrobot-v1", 6, DiscreteActions(3), 500)

    def _sample_initial(self) -> np.ndarray:
        return self.rng.uniform(-0.1, 0.1, size=4)

    def observation(self) -> np.ndarray:
        t1, t2, dt1, dt2 = self._state
        return np.array([math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), dt1, dt2])

    def _dsdt(self, s: tuple, torque: float) -> tuple:
        t1, t2, dt1, dt2 = s
        d1 = (
            self.M1 * self.LC1**2
            + self.M2 * (self.L1**2 + self.LC2**2 + 2 * self.L1 * self.LC2 * math.cos(t2))
            + self.I1
            + self.I2
        )
        d2 = self.M2 * (self.LC2**2 + self.L1 * self.LC2 * math.cos(t2)) + self.I2
        phi2 = self.M2 * self.LC2 * self.G * math.cos(t1 + t2 - math.pi / 2.0)
        phi1 = (
            -self.M2 * self.L1 * self.LC2 * dt2**2 * math.sin(t2)
            - 2 * self.M2 * self.L1 * self.LC2 * dt2 * dt1 * math.sin(t2)
            + (self.M1 * self.LC1 + self.M2 * self.L1) * self.G * math.cos(t1 - math.pi / 2.0)
            + phi2
        )
        ddt2 = (
            torque
            + d2 / d1 * phi1
            - self.M2 * self.L1 * self.LC2 * dt1**2 * math.sin(t2)
            - phi2
        ) / (self.M2 * self.LC2**2 + self.I2 - d2**2 / d1)
        ddt1 = -(d2 * ddt2 + phi1) / d1
        return (dt1, dt2, ddt1, ddt2)

    def _transition(self, action) -> tuple[float, bool]:
        torque = self.TORQUES[int(action)]
        y0 = tuple(self._state)
        h = self.DT
        k1 = self._dsdt(y0, torque)
        k2 = self._dsdt(tuple(y + 0.5 * h * k for y, k in zip(y0, k1)), torque)
        k3 = self._dsdt(tuple(y + 0.5 * h * k for y, k in zip(y0, k2)), torque)
        k4 = self._dsdt(tuple(y + h * k for y, k in zip(y0, k3)), torque)
        ns = [
            y + h / 6.0 * (a + 2 * b + 2 * c + d)
            for y, a, b, c, d in zip(y0, k1, k2, k3, k4)
        ]
        t1 = _acrobot_wrap(ns[0])
        t2 = _acrobot_wrap(ns[1])
        dt1 = min(max(ns[2], -self.MAX_VEL_1), self.MAX_VEL_1)
        dt2 = min(max(ns[3], -self.MAX_VEL_2), self.MAX_VEL_2)
        self._state = np.array([t1, t2, dt1, dt2])
        terminated = -math.cos(t1) - math.cos(t2 + t1) > 1.0
        return (0.0 if terminated else -1.0), terminated


_ENV_FACTORY = {
    "CartPole-v1": lambda seed: CartPoleEnv(seed, version=1),
    "CartPole-v0": lambda seed: CartPoleEnv(seed, version=0),
    "MountainCar-v0": MountainCarEnv,
    "MountainCarContinuous-v0": MountainCarContinuousEnv,
    "Acrobot-v1": AcrobotEnv,
    "Pendulum-v1": PendulumEnv,
}

ENV_IDS = tuple(_ENV_FACTORY)


def make_env(env_id: str, seed: int | None = None) -> Env:
    if env_id not in _ENV_FACTORY:
        raise EnvError(f"unknown or out-of-scope environment {env_id!r}")
    return _ENV_FACTORY[env_id](seed)


def env_spec(env_id: str) -> EnvSpec:
    return make_env(env_id).spec


@dataclass
class VectorStepResult:
    states: np.ndarray  # post-auto-reset observations, (A, S)
    rewards: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    final_states: np.ndarray  # pre-reset observation of the finished step


class VectorEnv:
    """n_actors independent scalar envs stepped in lockstep with auto-reset.

    Per-actor streams are identical to running the scalar envs standalone
    with the same seeds.
    """

    def __init__(self, env_id: str, n_actors: int, seeds):
        if n_actors < 1:
            raise EnvError("need at least one actor")
        seeds = list(seeds)
        if len(seeds) != n_actors:
            raise EnvError(f"expected {n_actors} seeds, got {len(seeds)}")
        self.envs = [make_env(env_id, s) for s in seeds]
        self.spec = self.envs[0].spec
        self.n_actors = n_actors

    def reset(self) -> np.ndarray:
        return np.stack([env.reset() for env in self.envs])

    def step(self, actions) -> VectorStepResult:
        n = self.n_actors
        states = np.empty((n, self.spec.state_dim))
        final_states = np.empty_like(states)
        rewards = np.empty(n)
        terminated = np.zeros(n, dtype=bool)
        truncated = np.zeros(n, dtype=bool)
        for i, env in enumerate(self.envs):
            res = env.step(actions[i])
            rewards[i] = res.reward
            terminated[i] = res.terminated
            truncated[i] = res.truncated
            final_states[i] = res.next_state
            states[i] = env.reset() if (res.terminated or res.truncated) else res.next_state
        return VectorStepResult(states, rewards, terminated, truncated, final_states)

    def get_state(self) -> list[dict]:
        return [env.get_state() for env in self.envs]

    def set_state(self, snapshots: list[dict]) -> None:
        for env, snap in zip(self.envs, snapshots):
            env.set_state(snap)


def dump_trajectory(path, states, actions, rewards, terminated, truncated) -> None:
    """Debug CSV: step, state..., action..., reward, terminated, truncated."""
    states = np.atleast_2d(states)
    actions = np.atleast_2d(np.asarray(actions, dtype=float).reshape(len(states), -1))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = (
            ["step"]
            + [f"state_{i}" for i in range(states.shape[1])]
            + [f"action_{i}" for i in range(actions.shape[1])]
            + ["reward", "terminated", "truncated"]
        )
        writer.writerow(header)
        for t in range(len(states)):
            writer.writerow(
                [t, *states[t], *actions[t], rewards[t], int(terminated[t]), int(truncated[t])]
            )
