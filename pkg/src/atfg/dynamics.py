"""Fixed-pivot rotational dynamics of an X-frame quadrotor.

The airframe is pinned at its center of mass so only attitude evolves.
Rotors follow a first-order lag toward ``cmd * rotor_omega_max`` and the
body rates obey Euler's rotational equation. Everything is plain float
arithmetic: a step costs a few microseconds, which keeps both the
lock-step server and the trainers fast.

Sign convention (frozen): raising motors 3 and 4 rolls positive, raising
motors 2 and 4 pitches positive, raising motors 1 and 4 yaws positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_DT = 1e-3


class SimulationDiverged(FloatingPointError):
    """Raised when a state or command stops being finite."""


@dataclass(frozen=True)
class AircraftConfig:
    mass: float = 1.5
    motor_to_motor: float = 0.55
    inertia_diag: tuple[float, float, float] | None = None
    thrust_factor_b: float = 3.0e-4
    drag_factor_d: float | None = None
    rotor_omega_max: float = 1000.0
    motor_time_constant: float = 0.05
    rotational_damping: tuple[float, float, float] = (0.002, 0.002, 0.002)

    def __post_init__(self):
        # Unset inertia/drag fall back to the point-mass-arm model and d/b = 0.016.
        if self.inertia_diag is None:
            arm = self.motor_to_motor / 2.0
            jxy = 4.0 * (self.mass / 6.0) * arm * arm
            object.__setattr__(self, "inertia_diag", (jxy, jxy, 2.0 * jxy))
        if self.drag_factor_d is None:
            object.__setattr__(self, "drag_factor_d", 0.016 * self.thrust_factor_b)
        object.__setattr__(self, "inertia_diag", tuple(float(v) for v in self.inertia_diag))
        damping = self.rotational_damping
        if isinstance(damping, (int, float)):
            damping = (damping,) * 3
        object.__setattr__(self, "rotational_damping", tuple(float(v) for v in damping))
        self.validate()

    def validate(self) -> None:
        positive = {
            "mass": self.mass,
            "motor_to_motor": self.motor_to_motor,
            "thrust_factor_b": self.thrust_factor_b,
            "drag_factor_d": self.drag_factor_d,
            "rotor_omega_max": self.rotor_omega_max,
            "motor_time_constant": self.motor_time_constant,
        }
        for key, value in positive.items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{key} must be a positive finite number, got {value!r}")
        if len(self.inertia_diag) != 3 or any(not (j > 0) for j in self.inertia_diag):
            raise ValueError(f"inertia_diag must hold 3 positive values, got {self.inertia_diag!r}")
        if len(self.rotational_damping) != 3 or any(not (c >= 0) for c in self.rotational_damping):
            raise ValueError(
                f"rotational_damping must hold 3 non-negative values, got {self.rotational_damping!r}"
            )

    @property
    def arm_projection(self) -> float:
        """Lever arm of each rotor about the roll and pitch axes of an X frame."""
        return self.motor_to_motor / 2.0 * math.cos(math.radians(45.0))


@dataclass(frozen=True)
class SimState:
    time: float = 0.0
    omega_body: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    rotor_omega: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    last_command: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RotorEffects:
    u_f: float
    u_phi: float
    u_theta: float
    u_psi: float


def rotor_effects(rotor_omega, b: float) -> RotorEffects:
    """Thrust, roll, pitch and yaw effects of the four rotor speeds."""
    w1, w2, w3, w4 = (w * w for w in rotor_omega)
    return _effects_from_squares(w1, w2, w3, w4, b)


def _effects_from_squares(s1, s2, s3, s4, b) -> RotorEffects:
    return RotorEffects(
        u_f=b * (s1 + s2 + s3 + s4),
        u_phi=b * (s1 + s2 - s3 - s4),
        u_theta=b * (s1 - s2 + s3 - s4),
        u_psi=b * (s1 - s2 - s3 + s4),
    )


def body_torques(effects: RotorEffects, cfg: AircraftConfig, omega_body=(0.0, 0.0, 0.0)):
    """Map rotor effects to body torques (N*m), including rotational damping.

    Roll and pitch use the X-frame arm projection; the sign flip on those two
    axes is what makes motors 3/4 roll right and motors 2/4 pitch forward.
    Yaw is the rotor reaction torque, scaled by ``d / b``.
    """
    c = cfg.rotational_damping
    tx, ty, tz = _rotor_torque(effects, cfg)
    return (tx - c[0] * omega_body[0], ty - c[1] * omega_body[1], tz - c[2] * omega_body[2])


def _rotor_torque(effects: RotorEffects, cfg: AircraftConfig):
    arm = cfg.arm_projection
    return (
        -arm * effects.u_phi,
        -arm * effects.u_theta,
        (cfg.drag_factor_d / cfg.thrust_factor_b) * effects.u_psi,
    )


def reset_state(cfg: AircraftConfig | None = None) -> SimState:
    return SimState()


def _finite(values) -> bool:
    return all(math.isfinite(v) for v in values)


def step(state: SimState, motor_cmd, cfg: AircraftConfig, dt: float = DEFAULT_DT) -> SimState:
    """Advance the plant by one physics tick of length ``dt``.

    The rotor lag is discretized exactly under a zero-order hold, and the
    rotor torque is averaged over the tick in closed form. Damping is
    trapezoidal and the gyroscopic term is taken at a predicted midpoint rate;
    the attitude quaternion is then rotated by the updated body rate.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    cmd = tuple(float(c) for c in motor_cmd)
    if len(cmd) != 4:
        raise ValueError(f"expected 4 motor commands, got {len(cmd)}")
    if not _finite(cmd):
        raise SimulationDiverged(f"non-finite motor command {cmd!r}")
    cmd = tuple(min(1.0, max(0.0, c)) for c in cmd)

    tau = cfg.motor_time_constant
    decay = math.exp(-dt / tau)
    k1 = tau * (1.0 - decay) / dt
    k2 = tau * (1.0 - decay * decay) / (2.0 * dt)
    w_max = cfg.rotor_omega_max
    rotors = []
    mean_sq = []
    for c, w in zip(cmd, state.rotor_omega):
        target = c * w_max
        gap = w - target
        rotors.append(min(w_max, max(0.0, target + gap * decay)))
        mean_sq.append(target * target + 2.0 * target * gap * k1 + gap * gap * k2)

    torque = _rotor_torque(_effects_from_squares(*mean_sq, cfg.thrust_factor_b), cfg)

    jx, jy, jz = cfg.inertia_diag
    cx, cy, cz = cfg.rotational_damping
    p, q, r = state.omega_body
    h = 0.5 * dt
    # Euler: J dW/dt = tau - W x (J W) - c W. Damping uses the trapezoidal
    # rule; the gyroscopic term is evaluated at a predicted midpoint rate.
    pm, qm, rm = p, q, r
    for _ in range(2):
        gx = (jz - jy) * qm * rm
        gy = (jx - jz) * rm * pm
        gz = (jy - jx) * pm * qm
        p1 = ((jx - cx * h) * p + dt * (torque[0] - gx)) / (jx + cx * h)
        q1 = ((jy - cy * h) * q + dt * (torque[1] - gy)) / (jy + cy * h)
        r1 = ((jz - cz * h) * r + dt * (torque[2] - gz)) / (jz + cz * h)
        pm, qm, rm = 0.5 * (p + p1), 0.5 * (q + q1), 0.5 * (r + r1)
    omega = (p1, q1, r1)

    orientation = _rotate(state.orientation, omega, dt)
    if not (_finite(omega) and _finite(orientation)):
        raise SimulationDiverged(f"state diverged at t={state.time + dt:.6f}: omega={omega!r}")
    return SimState(
        time=state.time + dt,
        omega_body=omega,
        orientation=orientation,
        rotor_omega=tuple(rotors),
        last_command=cmd,
    )


def _rotate(quat, omega, dt):
    """Right-multiply ``quat`` by the exact increment for a constant body rate."""
    p, q, r = omega
    rate = math.sqrt(p * p + q * q + r * r)
    half = 0.5 * rate * dt
    if rate > 0.0:
        s = math.sin(half) / rate
        dw, dx, dy, dz = math.cos(half), p * s, q * s, r * s
    else:
        dw, dx, dy, dz = 1.0, 0.0, 0.0, 0.0
    w, x, y, z = quat
    nw = w * dw - x * dx - y * dy - z * dz
    nx = w * dx + x * dw + y * dz - z * dy
    ny = w * dy - x * dz + y * dw + z * dx
    nz = w * dz + x * dy - y * dx + z * dw
    norm = math.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
    return (nw / norm, nx / norm, ny / norm, nz / norm)

