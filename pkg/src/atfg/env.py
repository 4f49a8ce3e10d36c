"""Agent-facing attitude-rate environment: reset/step, setpoints, reward."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from atfg import dynamics
from atfg.dynamics import AircraftConfig, SimState
from atfg.sensors import StackedState, observe, push

OMEGA_LIMIT = 5.24


@dataclass(frozen=True)
class TaskConfig:
    mode: Literal["episodic", "continuous"] = "episodic"
    omega_min: float = -OMEGA_LIMIT
    omega_max: float = OMEGA_LIMIT
    episode_max: float = 1.0
    memory: int = 1
    pulse_bounds: tuple[float, float] = (0.1, 1.0)
    seed: int = 0
    dt: float = dynamics.DEFAULT_DT
    reward: Literal["abs_sum", "sparse", "euclidean", "quadratic"] = "abs_sum"
    sparse_threshold: float = 0.1
    kill_omega: float | None = None
    active_axes: tuple[bool, bool, bool] = (True, True, True)

    def __post_init__(self):
        if self.mode not in ("episodic", "continuous"):
            raise ValueError(f"mode must be 'episodic' or 'continuous', got {self.mode!r}")
        if not self.omega_min < self.omega_max:
            raise ValueError("omega_min must be < omega_max")
        if not self.episode_max > 0:
            raise ValueError("episode_max must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.memory) != self.memory or self.memory < 1:
            raise ValueError("memory must be an integer >= 1")
        lo, hi = self.pulse_bounds
        if not 0 < lo <= hi:
            raise ValueError("pulse_bounds must satisfy 0 < low <= high")
        if self.reward not in REWARDS:
            raise ValueError(f"unknown reward {self.reward!r}; choose from {sorted(REWARDS)}")

    @property
    def reward_scale(self) -> float:
        """Largest setpoint magnitude; the normalizer in the reward."""
        return max(abs(self.omega_min), abs(self.omega_max))

    @property
    def max_steps(self) -> int:
        # Guard the ceiling against 1.0/1e-3 landing a hair above 1000.
        return math.ceil(self.episode_max / self.dt - 1e-9)


@dataclass(frozen=True)
class StepResult:
    state: StackedState
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class EpisodeFinished(RuntimeError):
    """step() called on an episodic environment that already reported done."""


def compute_reward(setpoint, omega, omega_max: float) -> float:
    """Negative clipped sum of absolute rate errors, normalized into [-1, 0]."""
    if not omega_max > 0:
        raise ValueError("omega_max must be positive")
    total = sum(abs(s - w) for s, w in zip(setpoint, omega))
    return -min(1.0, max(0.0, total / (3.0 * omega_max)))


def _sparse_reward(setpoint, omega, omega_max, threshold):
    total = sum(abs(s - w) for s, w in zip(setpoint, omega))
    return 0.0 if total < threshold else -1.0


def _euclidean_reward(setpoint, omega, omega_max, threshold):
    norm = math.sqrt(sum((s - w) ** 2 for s, w in zip(setpoint, omega)))
    return -min(1.0, norm / (math.sqrt(3.0) * omega_max))


def _quadratic_reward(setpoint, omega, omega_max, threshold):
    sq = sum((s - w) ** 2 for s, w in zip(setpoint, omega))
    return -min(1.0, sq / (3.0 * omega_max * omega_max))


REWARDS = {
    "abs_sum": lambda sp, w, wmax, thr: compute_reward(sp, w, wmax),
    "sparse": _sparse_reward,
    "euclidean": _euclidean_reward,
    "quadratic": _quadratic_reward,
}


def action_to_command(action):
    """Map agent actions in [-1, 1] onto motor commands in [0, 1]."""
    return tuple(min(1.0, max(0.0, 0.5 * (float(a) + 1.0))) for a in action)


class LocalPlant:
    """In-process plant backend; the link client offers the same two calls."""

    def __init__(self, aircraft: AircraftConfig | None = None, dt: float = dynamics.DEFAULT_DT):
        self.aircraft = aircraft or AircraftConfig()
        self.dt = dt
        self.sim = dynamics.reset_state(self.aircraft)

    def reset(self) -> SimState:
        self.sim = dynamics.reset_state(self.aircraft)
        return self.sim

    def write(self, cmd) -> SimState:
        self.sim = dynamics.step(self.sim, cmd, self.aircraft, self.dt)
        return self.sim


class AttitudeEnv:
    """Episodic or continuous rate-tracking task over a plant backend."""

    def __init__(self, task: TaskConfig | None = None, aircraft: AircraftConfig | None = None, plant=None):
        self.task = task or TaskConfig()
        self.plant = plant if plant is not None else LocalPlant(aircraft, self.task.dt)
        self.rng = np.random.default_rng(self.task.seed)
        self._reward_fn = REWARDS[self.task.reward]
        self.steps = 0
        self.done = True
        self.setpoint = (0.0, 0.0, 0.0)
        self.stacked = StackedState.empty(self.task.memory)
        self.sim: SimState | None = None
        self._pulse_on = False
        self._next_switch = 0

    def seed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def _draw_setpoint(self):
        draw = self.rng.uniform(self.task.omega_min, self.task.omega_max, 3)
        return tuple(float(v) if on else 0.0 for v, on in zip(draw, self.task.active_axes))

    def _draw_duration_steps(self) -> int:
        lo, hi = self.task.pulse_bounds
        return max(1, round(float(self.rng.uniform(lo, hi)) / self.task.dt))

    def reset(self) -> StepResult:
        self.sim = self.plant.reset()
        self.steps = 0
        self.done = False
        if self.task.mode == "episodic":
            self.setpoint = self._draw_setpoint()
        else:
            # Continuous: start at rest, first command arrives after a random wait.
            self.setpoint = (0.0, 0.0, 0.0)
            self._pulse_on = False
            self._next_switch = self._draw_duration_steps()
        self.stacked = push(StackedState.empty(self.task.memory), observe(self.sim, self.setpoint))
        return StepResult(self.stacked, 0.0, False, self._info())

    def _info(self) -> dict:
        return {"setpoint": self.setpoint, "omega": self.sim.omega_body, "time": self.steps * self.task.dt}

    def _advance_pulses(self) -> None:
        if self.steps < self._next_switch:
            return
        if self._pulse_on:
            self.setpoint = (0.0, 0.0, 0.0)
        else:
            self.setpoint = self._draw_setpoint()
        self._pulse_on = not self._pulse_on
        self._next_switch = self.steps + self._draw_duration_steps()

    def step(self, action) -> StepResult:
        if self.sim is None:
            raise RuntimeError("reset() must be called before step()")
        if self.done and self.task.mode == "episodic":
            raise EpisodeFinished("episode is over; call reset()")
        if len(action) != 4 or not all(math.isfinite(a) for a in action):
            raise ValueError(f"action must be 4 finite values, got {action!r}")
        self.sim = self.plant.write(action_to_command(action))
        self.steps += 1
        if self.task.mode == "continuous":
            self._advance_pulses()
        omega = self.sim.omega_body
        reward = self._reward_fn(self.setpoint, omega, self.task.reward_scale, self.task.sparse_threshold)
        self.stacked = push(self.stacked, observe(self.sim, self.setpoint))
        done = self.steps >= self.task.max_steps
        if self.task.kill_omega is not None and max(abs(w) for w in omega) > self.task.kill_omega:
            done = True
        self.done = done
        return StepResult(self.stacked, reward, done, self._info())


def env_reset(env: AttitudeEnv) -> StepResult:
    return env.reset()


def env_step(env: AttitudeEnv, action) -> StepResult:
    return env.step(action)
