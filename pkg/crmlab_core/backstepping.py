"""Tuning-function adaptive backstepping for strict-feedback systems of order 1 to 3.

The plant is

    x_i' = x_{i+1} + phi_i(x_1..x_i)^T theta*,   i < n
    x_n' = beta(x) u + phi_n(x)^T theta*

with polynomial regressors. The closed loop in the error coordinates z has
the same structure as a closed-loop reference model: the design gains c_i
feed the tracking errors back into the reference trajectories.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .adaptive_loop import AdaptiveLoop
from .bounds import make_certificate
from .errors import ConfigError, MissingChannel, SingularBeta, UnsupportedOrder

logger = logging.getLogger(__name__)

SUPPORTED_ORDERS = (1, 2, 3)
BETA_TOL = 1e-12
FD_STEP = 1e-6


@dataclass(frozen=True)
class Polynomial:
    """Sum of monomials coef * prod_k x_k^p_k, stored as ((coef, powers), ...)."""

    terms: tuple = ()

    @classmethod
    def from_config(cls, spec, n):
        """Parse a term list such as [{coef: 1, powers: {x1: 2}}] or a bare constant."""
        if spec is None:
            return cls(())
        if isinstance(spec, (int, float)):
            return cls(((float(spec), (0,) * n),))
        terms = []
        for term in spec:
            powers = [0] * n
            for key, power in (term.get("powers") or {}).items():
                index = int(str(key).lstrip("x")) - 1
                if not 0 <= index < n:
                    raise ConfigError(f"backstepping: monomial uses {key} but the order is {n}")
                if int(power) < 0:
                    raise ConfigError(f"backstepping: negative power {power} for {key}")
                powers[index] = int(power)
            terms.append((float(term.get("coef", 1.0)), tuple(powers)))
        return cls(tuple(terms))

    def highest_variable(self):
        """1-based index of the last variable with a non-zero power (0 for constants)."""
        last = 0
        for coef, powers in self.terms:
            for k, p in enumerate(powers):
                if p and coef:
                    last = max(last, k + 1)
        return last

    def __call__(self, x):
        return sum(coef * math.prod(x[k] ** p for k, p in enumerate(powers)) for coef, powers in self.terms)

    def gradient(self, x):
        grad = np.zeros(len(x))
        for coef, powers in self.terms:
            for k, p in enumerate(powers):
                if p == 0:
                    continue
                factor = coef * p * x[k] ** (p - 1)
                grad[k] += factor * math.prod(x[j] ** q for j, q in enumerate(powers) if j != k)
        return grad


@dataclass(frozen=True)
class StrictFeedbackSystem:
    """phi[i][j] is component j of the regressor of state i; beta multiplies the input."""

    phi: tuple
    beta: Polynomial
    theta_star: np.ndarray

    def __post_init__(self):
        n = len(self.phi)
        if n not in SUPPORTED_ORDERS:
            raise UnsupportedOrder(f"backstepping order must be one of {SUPPORTED_ORDERS}, got {n}")
        theta_star = np.atleast_1d(np.asarray(self.theta_star, dtype=float))
        for i, row in enumerate(self.phi):
            if len(row) != theta_star.size:
                raise ConfigError(f"backstepping.phi[{i}]: expected {theta_star.size} components, got {len(row)}")
            for poly in row:
                if poly.highest_variable() > i + 1:
                    raise ConfigError(f"backstepping.phi[{i}]: may depend only on x1..x{i + 1}")
        object.__setattr__(self, "theta_star", theta_star)

    @property
    def n(self):
        return len(self.phi)

    @property
    def p(self):
        return self.theta_star.size

    def regressor(self, i, x):
        return np.array([poly(x) for poly in self.phi[i]])

    def regressor_jacobian(self, i, x):
        """Rows: parameter components; columns: d/dx_k."""
        return np.array([poly.gradient(x) for poly in self.phi[i]]).reshape(self.p, len(x))

    def beta_at(self, x):
        value = float(self.beta(x))
        if abs(value) < BETA_TOL:
            raise SingularBeta(f"|beta(x)| = {abs(value):.3g} < {BETA_TOL} at x={np.asarray(x).tolist()}")
        return value

    def drift(self, x):
        """Unforced dynamics x_i' without the input term."""
        out = np.empty(self.n)
        for i in range(self.n):
            nxt = x[i + 1] if i + 1 < self.n else 0.0
            out[i] = nxt + self.regressor(i, x) @ self.theta_star
        return out


@dataclass(frozen=True)
class BacksteppingDesign:
    c: tuple
    Gamma: np.ndarray

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        if not c or any(v <= 0 for v in c):
            raise ConfigError(f"backstepping.c: gains must be positive, got {self.c}")
        Gamma = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        if Gamma.shape[0] != Gamma.shape[1] or not np.allclose(Gamma, Gamma.T):
            raise ConfigError("backstepping.Gamma: must be a symmetric square matrix")
        if np.any(np.linalg.eigvalsh(Gamma) <= 0):
            raise ConfigError("backstepping.Gamma: must be positive definite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "Gamma", Gamma)

    @property
    def c0(self):
        return min(self.c)


@dataclass(frozen=True)
class _Partials:
    """Partial derivatives of one stabilizing function alpha_i."""

    dx: np.ndarray
    dyr: np.ndarray
    dtheta: np.ndarray


@dataclass(frozen=True)
class DesignOutput:
    u: float
    tau: np.ndarray
    z: np.ndarray
    alpha: np.ndarray
    W: np.ndarray
    A_z: np.ndarray


class _Recursion:
    """Evaluates z_i, alpha_i, w_i, tau_i up to a given order at one point."""

    def __init__(self, system, design):
        self.system = system
        self.design = design

    def run(self, x, yr, theta, order):
        system, design = self.system, self.design
        Gamma = design.Gamma
        z = np.zeros(order)
        alpha = np.zeros(order)
        w = np.zeros((order, system.p))
        tau = np.zeros(system.p)
        partials = []
        for i in range(order):
            prev_alpha = alpha[i - 1] if i else 0.0
            z[i] = x[i] - yr[i] - prev_alpha
            phi_i = system.regressor(i, x)
            if i == 0:
                w[0] = phi_i
            else:
                dprev = partials[i - 1]
                w[i] = phi_i - sum(dprev.dx[k] * system.regressor(k, x) for k in range(i))
            tau = tau + w[i] * z[i]
            value = -design.c[i] * z[i] - w[i] @ theta
            if i:
                dprev = partials[i - 1]
                value -= z[i - 1]
                value += sum(dprev.dx[k] * x[k + 1] + dprev.dyr[k] * yr[k + 1] for k in range(i))
                value += dprev.dtheta @ Gamma @ tau
                value += sum(partials[k - 1].dtheta @ Gamma @ w[i] * z[k] for k in range(1, i))
            alpha[i] = value
            if i + 1 < order:
                partials.append(self.partials(i, x, yr, theta))
        return z, alpha, w, tau, partials

    def partials(self, i, x, yr, theta):
        """Partials of alpha_i; closed form for alpha_1, central differences otherwise."""
        system, design = self.system, self.design
        if i == 0:
            jac = system.regressor_jacobian(0, x)
            dx = np.zeros(system.n)
            dx[0] = -design.c[0] - jac[:, 0] @ theta
            dyr = np.zeros(system.n + 1)
            dyr[0] = design.c[0]
            return _Partials(dx, dyr, -system.regressor(0, x))
        return self._numeric_partials(i, x, yr, theta)

    def _numeric_partials(self, i, x, yr, theta):
        def alpha_at(xv, yv, tv):
            return self.run(xv, yv, tv, i + 1)[1][i]

        dx = np.zeros(self.system.n)
        for k in range(i + 1):
            step = np.zeros_like(x)
            step[k] = FD_STEP
            dx[k] = (alpha_at(x + step, yr, theta) - alpha_at(x - step, yr, theta)) / (2 * FD_STEP)
        dyr = np.zeros(len(yr))
        for k in range(i + 1):
            step = np.zeros_like(yr)
            step[k] = FD_STEP
            dyr[k] = (alpha_at(x, yr + step, theta) - alpha_at(x, yr - step, theta)) / (2 * FD_STEP)
        dtheta = np.zeros(theta.size)
        for j in range(theta.size):
            step = np.zeros_like(theta)
            step[j] = FD_STEP
            dtheta[j] = (alpha_at(x, yr, theta + step) - alpha_at(x, yr, theta - step)) / (2 * FD_STEP)
        return _Partials(dx, dyr, dtheta)


def error_matrix(design, w, partials):
    """A_z: -c_i on the diagonal, +1/-1 off it, plus sigma_ik = -(d alpha_{i-1}/d theta) Gamma w_k."""
    n = len(design.c)
    A = np.diag([-c for c in design.c])
    for i in range(n - 1):
        A[i, i + 1] += 1.0
        A[i + 1, i] -= 1.0
    for i in range(1, n):
        for k in range(i + 1, n):
            sigma = -partials[i - 1].dtheta @ design.Gamma @ w[k]
            A[i, k] += sigma
            A[k, i] -= sigma
    return A


def backstepping_design(system, design, theta, x, yr):
    """Control, tuning function and error coordinates at one point.

    Args:
        theta: Parameter estimate.
        x: Plant state.
        yr: Reference derivatives y_r, y_r', ..., y_r^(n).

    Raises:
        UnsupportedOrder: Order outside 1..3.
        SingularBeta: |beta(x)| < 1e-12.
    """
    n = system.n
    if n not in SUPPORTED_ORDERS:
        raise UnsupportedOrder(f"backstepping order must be one of {SUPPORTED_ORDERS}, got {n}")
    if len(design.c) != n:
        raise ConfigError(f"backstepping.c: expected {n} gains, got {len(design.c)}")
    x = np.asarray(x, dtype=float)
    yr = np.asarray(yr, dtype=float)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    beta = system.beta_at(x)
    z, alpha, w, tau, partials = _Recursion(system, design).run(x, yr, theta, n)
    u = (alpha[-1] + yr[n]) / beta
    return DesignOutput(u, tau, z, alpha, w, error_matrix(design, w, partials))


class BacksteppingLoop(AdaptiveLoop):
    family = "backstepping"

    def __init__(self, system, design, y_r, x0, theta0=None):
        self.system = system
        self.design = design
        self.y_r = y_r
        self.x0 = np.asarray(x0, dtype=float).reshape(system.n)
        self.theta0 = np.zeros(system.p) if theta0 is None else np.atleast_1d(np.asarray(theta0, dtype=float))
        if self.theta0.size != system.p:
            raise ConfigError(f"backstepping.theta0: expected {system.p} components, got {self.theta0.size}")
        if design.Gamma.shape != (system.p, system.p):
            raise ConfigError(f"backstepping.Gamma: expected shape ({system.p}, {system.p})")
        if len(design.c) != system.n:
            raise ConfigError(f"backstepping.c: expected {system.n} gains, got {len(design.c)}")
        n, p = system.n, system.p
        self.Gamma_inv = np.linalg.inv(design.Gamma)
        self.state_names = tuple([f"x_{i + 1}" for i in range(n)] + [f"theta_hat_{j + 1}" for j in range(p)]
                                 + ["int_z2"])
        self.channel_order = tuple(
            [f"x_{i + 1}" for i in range(n)] + [f"z_{i + 1}" for i in range(n)]
            + [f"theta_hat_{j + 1}" for j in range(p)] + ["u", "V"]
            + [f"Az_{i + 1}{k + 1}" for i in range(n) for k in range(n)]
        )

    def initial_state(self):
        return np.concatenate([self.x0, self.theta0, [0.0]])

    def split(self, state):
        n, p = self.system.n, self.system.p
        return state[:n], state[n:n + p]

    def evaluate(self, t, state):
        x, theta = self.split(state)
        return backstepping_design(self.system, self.design, theta, x, self.y_r.derivatives(t, self.system.n))

    def rhs(self, t, state):
        x, _ = self.split(state)
        out = self.evaluate(t, state)
        x_dot = self.system.drift(x)
        x_dot[-1] += self.system.beta_at(x) * out.u
        theta_dot = self.design.Gamma @ out.tau
        return np.concatenate([x_dot, theta_dot, [out.z @ out.z]])

    def lyapunov(self, z, theta):
        err = self.system.theta_star - theta
        return float(0.5 * z @ z + 0.5 * err @ self.Gamma_inv @ err)

    def derived_channels(self, traj):
        n = self.system.n
        states = self.states_at(traj)
        z = np.empty((len(traj), n))
        A = np.empty((len(traj), n, n))
        u = np.empty(len(traj))
        v = np.empty(len(traj))
        for k, (t, state) in enumerate(zip(traj.times, states)):
            out = self.evaluate(t, state)
            z[k], A[k], u[k] = out.z, out.A_z, out.u
            v[k] = self.lyapunov(out.z, self.split(state)[1])
        channels = {f"z_{i + 1}": z[:, i] for i in range(n)}
        channels["u"] = u
        channels["V"] = v
        for i in range(n):
            for j in range(n):
                channels[f"Az_{i + 1}{j + 1}"] = A[:, i, j]
        return channels

    def z_dynamics_residual(self, t, state, step=None):
        """|z' - (A_z z + W (theta* - theta))| with z' by a central difference along the flow."""
        if step is None:
            step = 1e-5 if self.system.n <= 2 else 1e-4
        flow = self.rhs(t, state)
        ahead = self.evaluate(t + step, state + step * flow).z
        behind = self.evaluate(t - step, state - step * flow).z
        z_dot = (ahead - behind) / (2 * step)
        out = self.evaluate(t, state)
        predicted = out.A_z @ out.z + out.W @ (self.system.theta_star - self.split(state)[1])
        return float(np.max(np.abs(z_dot - predicted)))


def backstepping_loop(system, design, y_r, x0, theta0=None):
    loop = BacksteppingLoop(system, design, y_r, x0, theta0)
    logger.debug(f"Backstepping loop: n={system.n} p={system.p} c={design.c}")
    return loop


def residual_tolerance(n):
    return 1e-6 if n <= 2 else 1e-4


def certify_backstepping_run(traj, scenario, checkpoints=20):
    """z-L2 bound, Lyapunov decrease and the z-dynamics structure along the run."""
    loop = scenario.loop
    for name in ("V", "int_z2"):
        if name not in traj:
            raise MissingChannel(f"Trajectory lacks channel '{name}'")
    tol = scenario.tolerance
    c0 = loop.design.c0
    v = traj.channel("V")
    v0 = float(v[0])
    certs = [make_certificate("z_l2", float(traj.channel("int_z2")[-1]), v0 / c0, tol, integral=True,
                              detail="int ||z||^2 <= V(0)/c0")]
    rate = np.diff(v) + c0 * np.diff(traj.channel("int_z2"))
    worst = int(np.argmax(rate))
    certs.append(make_certificate("v_rate", float(rate[worst]), 1e-7, tol,
                                  detail=f"V' <= -c0 ||z||^2, worst at t={traj.times[worst]:.6g}"))
    states = loop.states_at(traj)
    indices = np.unique(np.linspace(0, len(traj) - 1, checkpoints).astype(int))
    residual = max(loop.z_dynamics_residual(traj.times[k], states[k]) for k in indices)
    certs.append(make_certificate("z_dynamics_residual", residual, residual_tolerance(loop.system.n), tol,
                                  detail=f"{indices.size} checkpoints"))
    n = loop.system.n
    A = np.stack([np.column_stack([traj.channel(f"Az_{i + 1}{j + 1}") for j in range(n)]) for i in range(n)], axis=1)
    symmetric = A + np.transpose(A, (0, 2, 1)) + 2 * np.diag(loop.design.c)
    certs.append(make_certificate("A_z_skew", float(np.max(np.abs(symmetric))), 1e-12, tol,
                                  detail="A_z + A_z^T = -2 diag(c)"))
    return certs
