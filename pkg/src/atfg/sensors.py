"""Agent observations built from the simulated gyro and ESC readings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from atfg.dynamics import SimState

N_AXES = 3
N_MOTORS = 4
OBS_SIZE = N_AXES + N_MOTORS


@dataclass(frozen=True)
class Observation:
    error: tuple[float, float, float]
    rotor_omega: tuple[float, float, float, float]

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(self.error) + tuple(self.rotor_omega)


ZERO_OBSERVATION = Observation((0.0,) * N_AXES, (0.0,) * N_MOTORS)


def observe(sim: SimState, setpoint) -> Observation:
    error = tuple(float(s) - w for s, w in zip(setpoint, sim.omega_body))
    return Observation(error, tuple(sim.rotor_omega))


@dataclass(frozen=True)
class StackedState:
    """The ``memory_size`` most recent observations, newest last."""

    memory_size: int
    buffer: tuple[Observation, ...]

    @classmethod
    def empty(cls, memory_size: int) -> "StackedState":
        if memory_size < 1:
            raise ValueError(f"memory_size must be >= 1, got {memory_size}")
        return cls(memory_size, (ZERO_OBSERVATION,) * memory_size)

    @property
    def newest(self) -> Observation:
        return self.buffer[-1]

    @property
    def flat(self) -> np.ndarray:
        return np.array([v for obs in self.buffer for v in obs.as_tuple()], dtype=float)


def push(state: StackedState, obs: Observation) -> StackedState:
    return StackedState(state.memory_size, state.buffer[1:] + (obs,))
