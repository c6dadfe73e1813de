"""Adaptive control of a two-link planar arm with the composite tracking variable s."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .adaptive_loop import AdaptiveLoop
from .bounds import make_certificate
from .errors import ConfigError, MissingChannel, SingularInertia
from .reference_signals import ReferenceSignal

logger = logging.getLogger(__name__)

DET_TOL = 1e-12
GRAVITY = 9.81


@dataclass(frozen=True)
class RobotModel:
    """Point masses at the link tips; parameters a = ((m1+m2) l1^2, m2 l2^2, m2 l1 l2)."""

    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    g0: float = GRAVITY

    def __post_init__(self):
        for key in ("m1", "m2", "l1", "l2"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"robot.{key}: must be positive, got {getattr(self, key)}")

    @property
    def a(self):
        return np.array([(self.m1 + self.m2) * self.l1 ** 2, self.m2 * self.l2 ** 2, self.m2 * self.l1 * self.l2])

    def inertia(self, q, a=None):
        a1, a2, a3 = self.a if a is None else a
        c2 = math.cos(q[1])
        H = np.array([[a1 + a2 + 2 * a3 * c2, a2 + a3 * c2], [a2 + a3 * c2, a2]])
        if np.linalg.det(H) <= DET_TOL:
            raise SingularInertia(f"det H = {np.linalg.det(H):.3g} at q={list(q)}")
        return H

    def coriolis(self, q, qd, a=None):
        a3 = (self.a if a is None else a)[2]
        h = a3 * math.sin(q[1])
        return np.array([[-h * qd[1], -h * (qd[0] + qd[1])], [h * qd[0], 0.0]])

    def gravity(self, q, a=None):
        a1, a2, _ = self.a if a is None else a
        c1 = math.cos(q[0])
        c12 = math.cos(q[0] + q[1])
        return np.array([a1 / self.l1 * self.g0 * c1 + a2 / self.l2 * self.g0 * c12, a2 / self.l2 * self.g0 * c12])

    def regressor(self, q, qd, v, vd):
        """Y with Y a = H(q) vd + C(q, qd) v + g(q)."""
        c1, c2 = math.cos(q[0]), math.cos(q[1])
        s2 = math.sin(q[1])
        c12 = math.cos(q[0] + q[1])
        g0 = self.g0
        return np.array([
            [vd[0] + g0 * c1 / self.l1, vd[0] + vd[1] + g0 * c12 / self.l2,
             c2 * (2 * vd[0] + vd[1]) - s2 * (qd[1] * v[0] + (qd[0] + qd[1]) * v[1])],
            [0.0, vd[0] + vd[1] + g0 * c12 / self.l2, c2 * vd[0] + s2 * qd[0] * v[0]],
        ])

    def acceleration(self, q, qd, torque):
        H = self.inertia(q)
        return np.linalg.solve(H, torque - self.coriolis(q, qd) @ qd - self.gravity(q))


@dataclass(frozen=True)
class RobotController:
    lam: float = 5.0
    k_d: np.ndarray = None
    Gamma: np.ndarray = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"robot.lambda: must be positive, got {self.lam}")
        k_d = 10.0 * np.eye(2) if self.k_d is None else np.atleast_2d(np.asarray(self.k_d, dtype=float))
        Gamma = 5.0 * np.eye(3) if self.Gamma is None else np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        for name, value, shape in (("k_d", k_d, (2, 2)), ("Gamma", Gamma, (3, 3))):
            if value.shape != shape:
                raise ConfigError(f"robot.{name}: expected shape {shape}, got {value.shape}")
            if not np.allclose(value, value.T) or np.any(np.linalg.eigvalsh(value) <= 0):
                raise ConfigError(f"robot.{name}: must be symmetric positive definite")
        object.__setattr__(self, "k_d", k_d)
        object.__setattr__(self, "Gamma", Gamma)


def default_desired():
    """q_d = (sin t, cos 2t)."""
    return (ReferenceSignal(kind="sine", omega=1.0), ReferenceSignal(kind="sine", omega=2.0, phase=math.pi / 2))


class RobotLoop(AdaptiveLoop):
    """State (q, q', a_hat) plus the quadrature of s^T k_d s."""

    family = "robot"
    state_names = ("q_1", "q_2", "qd_1", "qd_2", "a_hat_1", "a_hat_2", "a_hat_3", "int_s_kd_s")
    channel_order = ("q_1", "q_2", "q_tilde_1", "q_tilde_2", "s_1", "s_2", "a_hat_1", "a_hat_2", "a_hat_3",
                     "tau_1", "tau_2", "V")

    def __init__(self, model, controller, desired=None, q0=(0.3, 0.7), qd0=(0.0, 0.0), a_hat0=None):
        self.model = model
        self.controller = controller
        self.desired = default_desired() if desired is None else tuple(desired)
        if len(self.desired) != 2:
            raise ConfigError("robot.desired: need one trajectory per joint")
        self.q0 = np.asarray(q0, dtype=float).reshape(2)
        self.qd0 = np.asarray(qd0, dtype=float).reshape(2)
        self.a_hat0 = np.zeros(3) if a_hat0 is None else np.asarray(a_hat0, dtype=float).reshape(3)
        self.Gamma_inv = np.linalg.inv(controller.Gamma)

    def initial_state(self):
        return np.concatenate([self.q0, self.qd0, self.a_hat0, [0.0]])

    def desired_at(self, t):
        """(q_d, q_d', q_d'') at time t."""
        values = np.array([sig.derivatives(t, 2) for sig in self.desired])
        return values[:, 0], values[:, 1], values[:, 2]

    def control(self, t, state):
        """Torque, composite variable s, regressor Y and tracking error at one point."""
        q, qd, a_hat = state[:2], state[2:4], state[4:7]
        lam = self.controller.lam
        q_des, qd_des, qdd_des = self.desired_at(t)
        q_tilde = q - q_des
        v = qd_des - lam * q_tilde
        vd = qdd_des - lam * (qd - qd_des)
        s = qd - v
        Y = self.model.regressor(q, qd, v, vd)
        torque = Y @ a_hat - self.controller.k_d @ s
        return torque, s, Y, q_tilde

    def rhs(self, t, state):
        q, qd = state[:2], state[2:4]
        torque, s, Y, _ = self.control(t, state)
        return np.concatenate([
            qd,
            self.model.acceleration(q, qd, torque),
            -self.controller.Gamma @ Y.T @ s,
            [s @ self.controller.k_d @ s],
        ])

    def lyapunov(self, t, state):
        """V = (s^T H s + a_err^T Gamma^-1 a_err) / 2."""
        _, s, _, _ = self.control(t, state)
        err = state[4:7] - self.model.a
        return float(0.5 * s @ self.model.inertia(state[:2]) @ s + 0.5 * err @ self.Gamma_inv @ err)

    def derived_channels(self, traj):
        states = self.states_at(traj)
        rows = {name: np.empty(len(traj)) for name in ("q_tilde_1", "q_tilde_2", "s_1", "s_2", "tau_1", "tau_2", "V")}
        for k, (t, state) in enumerate(zip(traj.times, states)):
            torque, s, _, q_tilde = self.control(t, state)
            for i in range(2):
                rows[f"q_tilde_{i + 1}"][k] = q_tilde[i]
                rows[f"s_{i + 1}"][k] = s[i]
                rows[f"tau_{i + 1}"][k] = torque[i]
            rows["V"][k] = self.lyapunov(t, state)
        return rows

    def lyapunov_rate_residual(self, t, state, step=1e-5):
        """|V' + s^T k_d s| with V' by a central difference along the closed-loop flow."""
        flow = self.rhs(t, state)
        ahead = self.lyapunov(t + step, state + step * flow)
        behind = self.lyapunov(t - step, state - step * flow)
        return abs((ahead - behind) / (2 * step) + flow[-1])


def robot_loop(model, controller, desired=None, q0=(0.3, 0.7), qd0=(0.0, 0.0), a_hat0=None):
    return RobotLoop(model, controller, desired, q0, qd0, a_hat0)


def skew_symmetry_residual(model, samples=100, seed=0, step=1e-6):
    """max |x^T (H' - 2C) x| over random (q, q', x) with H' by a central difference."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        q = rng.uniform(-math.pi, math.pi, 2)
        qd = rng.uniform(-2.0, 2.0, 2)
        x = rng.standard_normal(2)
        H_dot = (model.inertia(q + step * qd) - model.inertia(q - step * qd)) / (2 * step)
        worst = max(worst, abs(float(x @ (H_dot - 2 * model.coriolis(q, qd)) @ x)))
    return worst


def regressor_residual(model, samples=100, seed=0):
    """max |Y a - (H vd + C v + g)| over random arguments."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        q, qd, v, vd = (rng.uniform(-2.0, 2.0, 2) for _ in range(4))
        direct = model.inertia(q) @ vd + model.coriolis(q, qd) @ v + model.gravity(q)
        worst = max(worst, float(np.max(np.abs(model.regressor(q, qd, v, vd) @ model.a - direct))))
    return worst


def certify_robot_run(traj, scenario, checkpoints=20):
    """Lyapunov decrease, dissipation bound and model-structure checks of a robot run."""
    loop = scenario.loop
    for name in ("V", "int_s_kd_s"):
        if name not in traj:
            raise MissingChannel(f"Trajectory lacks channel '{name}'")
    tol = scenario.tolerance
    v = traj.channel("V")
    dissipated = traj.channel("int_s_kd_s")
    balance = np.diff(v) + np.diff(dissipated)
    worst = int(np.argmax(np.abs(balance)))
    states = loop.states_at(traj)
    indices = np.unique(np.linspace(0, len(traj) - 1, checkpoints).astype(int))
    rate = max(loop.lyapunov_rate_residual(traj.times[k], states[k]) for k in indices)
    return [
        make_certificate("s_kd_s_l2", float(dissipated[-1]), float(v[0]), tol, integral=True,
                         detail="int s^T k_d s <= V(0)"),
        make_certificate("v_balance", float(abs(balance[worst])), 1e-5, tol,
                         detail=f"|dV + d int s^T k_d s|, worst at t={traj.times[worst]:.6g}"),
        make_certificate("lyapunov_rate_residual", rate, 1e-4, tol, detail=f"{indices.size} checkpoints"),
        make_certificate("skew_symmetry", skew_symmetry_residual(loop.model), 1e-8, tol),
        make_certificate("regressor_residual", regressor_residual(loop.model), 1e-9, tol),
    ]
