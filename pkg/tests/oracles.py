"""Reference implementations used only to check the package."""
import numpy as np

SIGNS = np.array([
    # thrust, roll, pitch, yaw per motor
    [1, 1, 1, 1],
    [1, 1, -1, -1],
    [1, -1, 1, -1],
    [1, -1, -1, 1],
], dtype=float)


def effects_by_sum(omega, b):
    """Evaluate the four sign-pattern sums term by term."""
    u = [0.0, 0.0, 0.0, 0.0]
    for i, w in enumerate(omega):
        for k in range(4):
            u[k] += b * SIGNS[i, k] * w * w
    return u


def plant_rhs(x, cmd, cfg):
    """Continuous-time derivative of [rotor x4, body rate x3, quaternion x4]."""
    rotors, omega, q = x[:4], x[4:7], x[7:]
    target = np.clip(cmd, 0, 1) * cfg.rotor_omega_max
    d_rot = (target - rotors) / cfg.motor_time_constant
    _, u_phi, u_theta, u_psi = effects_by_sum(rotors, cfg.thrust_factor_b)
    arm = cfg.motor_to_motor / 2 * np.sqrt(0.5)
    torque = np.array([-arm * u_phi, -arm * u_theta, cfg.drag_factor_d / cfg.thrust_factor_b * u_psi])
    J = np.array(cfg.inertia_diag)
    c = np.array(cfg.rotational_damping)
    d_omega = (torque - np.cross(omega, J * omega) - c * omega) / J
    w, xq, yq, zq = q
    p, qq, r = omega
    d_q = 0.5 * np.array([
        -xq * p - yq * qq - zq * r,
        w * p + yq * r - zq * qq,
        w * qq - xq * r + zq * p,
        w * r + xq * qq - yq * p,
    ])
    return np.concatenate([d_rot, d_omega, d_q])


def rk4_trajectory(commands, cfg, dt_outer=1e-3, substeps=100):
    """Integrate under zero-order-hold commands; returns body rates after each outer step."""
    x = np.zeros(11)
    x[7] = 1.0
    h = dt_outer / substeps
    out = []
    for cmd in commands:
        cmd = np.asarray(cmd, dtype=float)
        for _ in range(substeps):
            k1 = plant_rhs(x, cmd, cfg)
            k2 = plant_rhs(x + 0.5 * h * k1, cmd, cfg)
            k3 = plant_rhs(x + 0.5 * h * k2, cmd, cfg)
            k4 = plant_rhs(x + h * k3, cmd, cfg)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(x[4:7].copy())
    return np.array(out)


def gae_direct(rewards, values, dones, gamma, lam):
    """Advantages by explicit discounted summation of TD residuals."""
    n = len(rewards)
    deltas = [rewards[t] + gamma * values[t + 1] * (1 - dones[t]) - values[t] for t in range(n)]
    adv = np.zeros(n)
    for t in range(n):
        total, weight = 0.0, 1.0
        for k in range(t, n):
            total += weight * deltas[k]
            if dones[k]:
                break
            weight *= gamma * lam
        adv[t] = total
    return adv


def naive_forward(net, x):
    """Loop-based forward pass of policy mean and value for one input."""
    z = [(xi - o) / s for xi, o, s in zip(x, net.obs_offset, net.obs_scale)]

    def mlp(layers, h):
        for li, (w, b) in enumerate(layers):
            nxt = []
            for row, bias in zip(w, b):
                acc = bias
                for wij, hj in zip(row, h):
                    acc += wij * hj
                nxt.append(np.tanh(acc) if li < len(layers) - 1 else acc)
            h = nxt
        return h

    mean = [np.tanh(v) for v in mlp(net.pi, z)]
    value = mlp(net.vf, z)[0]
    return np.array(mean), value
