"""Per-axis discrete PID rate controller and motor mixer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

HOVER_BIAS = 0.5

# Gains and mixer of the ported Betaflight controller, per axis [Kp, Ki, Kd].
BETAFLIGHT_GAINS = ((2.0, 10.0, 0.005), (10.0, 10.0, 0.005), (4.0, 50.0, 0.0))
BETAFLIGHT_MIXER = (
    (-1.0, 0.598, -1.0),
    (-0.927, -0.598, 1.0),
    (1.0, 0.598, 1.0),
    (0.927, -0.598, -1.0),
)
# The Betaflight table assumes pitch-up and yaw-left positive; the plant uses
# the opposite sense on those axes, so their PID sums enter the mixer negated.
BETAFLIGHT_AXIS_SIGN = (1.0, -1.0, -1.0)


@dataclass(frozen=True)
class PidConfig:
    gains: tuple[tuple[float, float, float], ...] = BETAFLIGHT_GAINS
    integrator_limit: float = 1.0
    output_limit: float = 1.0e6
    dt: float = 1e-3

    def __post_init__(self):
        gains = tuple(tuple(float(k) for k in axis) for axis in self.gains)
        object.__setattr__(self, "gains", gains)
        if len(gains) != 3 or any(len(axis) != 3 for axis in gains):
            raise ValueError("gains must be 3 axes of [Kp, Ki, Kd]")
        if any(k < 0 or not math.isfinite(k) for axis in gains for k in axis):
            raise ValueError(f"gains must be finite and >= 0, got {gains!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not (self.integrator_limit > 0 and self.output_limit > 0):
            raise ValueError("integrator_limit and output_limit must be positive")


@dataclass(frozen=True)
class MixerTable:
    rows: tuple[tuple[float, float, float], ...] = BETAFLIGHT_MIXER
    throttle: float = 1.0
    axis_sign: tuple[float, float, float] = BETAFLIGHT_AXIS_SIGN

    def __post_init__(self):
        rows = tuple(tuple(float(m) for m in row) for row in self.rows)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "axis_sign", tuple(float(s) for s in self.axis_sign))
        if len(rows) != 4 or any(len(row) != 3 for row in rows):
            raise ValueError("mixer must have 4 rows of [roll, pitch, yaw]")
        if any(abs(m) > 1.0 + 1e-9 for row in rows for m in row):
            raise ValueError("mixer entries must lie in [-1, 1]")
        if not self.throttle >= 0:
            raise ValueError("throttle coefficient must be >= 0")
        if any(s not in (-1.0, 1.0) for s in self.axis_sign):
            raise ValueError("axis_sign entries must be +1 or -1")


@dataclass
class PidState:
    integral: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    prev_error: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])


def pid_step(ctl_state: PidState, error, cfg: PidConfig, dt: float | None = None):
    """One control tick; mutates ``ctl_state`` and returns the three axis sums.

    Rectangle-rule integral clamped so the I term stays within
    ``integrator_limit``; derivative taken on the error.
    """
    dt = cfg.dt if dt is None else dt
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    out = []
    for axis in range(3):
        e = float(error[axis])
        if not math.isfinite(e):
            raise FloatingPointError(f"non-finite error on axis {axis}: {e!r}")
        kp, ki, kd = cfg.gains[axis]
        integral = ctl_state.integral[axis] + e * dt
        if ki > 0:
            bound = cfg.integrator_limit / ki
            integral = min(bound, max(-bound, integral))
        ctl_state.integral[axis] = integral
        deriv = (e - ctl_state.prev_error[axis]) / dt
        ctl_state.prev_error[axis] = e
        u = kp * e + ki * integral + kd * deriv
        out.append(min(cfg.output_limit, max(-cfg.output_limit, u)))
    return tuple(out)


def mix_raw(axis_outputs, table: MixerTable):
    """Per-motor contributions before the hover bias is applied."""
    u_phi, u_theta, u_psi = axis_outputs
    f = table.throttle
    return tuple(f * (m_phi * u_phi + m_theta * u_theta + m_psi * u_psi) for m_phi, m_theta, m_psi in table.rows)


def mix(axis_outputs, table: MixerTable, bias: float = HOVER_BIAS):
    """Normalized motor signals in [0, 1] centered on the hover bias."""
    return tuple(min(1.0, max(0.0, bias + y)) for y in mix_raw(axis_outputs, table))


def ziegler_nichols(ku: float, tu: float, dt: float = 1e-3) -> PidConfig:
    """Classic Ziegler-Nichols PID gains, applied to every axis."""
    if not (ku > 0 and tu > 0):
        raise ValueError(f"ku and tu must be positive, got ku={ku!r}, tu={tu!r}")
    axis = (0.6 * ku, 1.2 * ku / tu, 0.075 * ku * tu)
    return PidConfig(gains=(axis, axis, axis), dt=dt)


class PidAgent:
    """PID + mixer exposed through the agent interface used by the evaluator."""

    def __init__(self, pid: PidConfig | None = None, mixer: MixerTable | None = None):
        self.pid = pid or PidConfig()
        self.mixer = mixer or MixerTable()
        self.state = PidState()

    def reset(self) -> None:
        self.state = PidState()

    def act(self, stacked) -> tuple[float, ...]:
        error = stacked.newest.error
        sums = pid_step(self.state, error, self.pid)
        signed = tuple(s * u for s, u in zip(self.mixer.axis_sign, sums))
        return tuple(2.0 * y - 1.0 for y in mix(signed, self.mixer))
