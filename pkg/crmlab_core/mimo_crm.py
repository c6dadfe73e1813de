"""States-accessible n-dimensional CRM adaptive system and its certificates."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from .adaptive_loop import AdaptiveLoop
from .bounds import envelope_certificate, make_certificate, trend_record
from .errors import AssumptionViolated, ConfigError, MissingChannel, NoMatch, PreconditionViolated
from .projection import ProjectionSet, project
from .trajectory import quadrature_tail

logger = logging.getLogger(__name__)

MATCH_TOL = 1e-9


def _matrix(value, name, shape=None):
    arr = np.atleast_2d(np.array(value, dtype=float))
    if shape is not None and arr.shape != shape:
        raise ConfigError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name}: entries must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MimoPlant:
    """x_p' = A x_p + B Lambda u with A, Lambda unknown and an upper bound lambda_bar on Lambda."""

    A: np.ndarray
    B: np.ndarray
    Lambda: np.ndarray
    lambda_bar: float

    def __post_init__(self):
        A = _matrix(self.A, "mimo.A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ConfigError(f"mimo.A: must be square, got {A.shape}")
        B = _matrix(self.B, "mimo.B")
        if B.shape[0] != n:
            raise ConfigError(f"mimo.B: expected {n} rows, got {B.shape[0]}")
        m = B.shape[1]
        Lam = _matrix(self.Lambda, "mimo.Lambda", (m, m))
        if not np.allclose(Lam, Lam.T, atol=1e-12):
            raise ConfigError("mimo.Lambda: must be symmetric")
        eig = np.linalg.eigvalsh(Lam)
        if np.any(eig <= 0):
            raise ConfigError(f"mimo.Lambda: eigenvalues must be positive, got {eig}")
        if np.max(eig) > self.lambda_bar * (1 + 1e-12):
            raise ConfigError(f"mimo.lambda_bar: {self.lambda_bar} is below max eig(Lambda) = {np.max(eig)}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Lambda", Lam)
        object.__setattr__(self, "lambda_bar", float(self.lambda_bar))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class MimoReference:
    """Reference model with L = -A_m + g I, P = I/2 and Q = |g| I."""

    A_m: np.ndarray
    g: float

    def __post_init__(self):
        A_m = _matrix(self.A_m, "mimo.A_m")
        if A_m.shape[0] != A_m.shape[1]:
            raise ConfigError(f"mimo.A_m: must be square, got {A_m.shape}")
        if np.max(np.real(np.linalg.eigvals(A_m))) >= 0:
            raise ConfigError("mimo.A_m: must be Hurwitz")
        if not self.g < 0:
            raise ConfigError(f"mimo.g: must be < 0, got {self.g}")
        object.__setattr__(self, "A_m", A_m)
        object.__setattr__(self, "g", float(self.g))

    @property
    def n(self):
        return self.A_m.shape[0]

    @property
    def L(self):
        return -self.A_m + self.g * np.eye(self.n)

    @property
    def P(self):
        return 0.5 * np.eye(self.n)

    @property
    def Q(self):
        return abs(self.g) * np.eye(self.n)


@dataclass(frozen=True)
class MimoGains:
    Theta_star: np.ndarray
    K_star: np.ndarray
    gamma: float
    theta_projection: ProjectionSet = None
    k_projection: ProjectionSet = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError(f"mimo.gamma: must be > 0, got {self.gamma}")
        for pset, star, name in ((self.theta_projection, self.Theta_star, "theta_radius"),
                                 (self.k_projection, self.K_star, "k_radius")):
            if pset is not None and not pset.contains(star):
                raise ConfigError(
                    f"mimo.{name}: {pset.theta_bound} is below the matched gain norm {np.linalg.norm(star):.6g}"
                )

    @property
    def Gamma(self):
        return self.gamma * np.eye(self.Theta_star.shape[0])

    @property
    def theta_max(self):
        return self.theta_projection.theta_max if self.theta_projection else math.nan

    @property
    def k_max(self):
        return self.k_projection.theta_max if self.k_projection else math.nan


@dataclass(frozen=True)
class DecayEnvelope:
    """||exp(A_m t)|| <= a1 exp(-a2 t)."""

    a1: float
    a2: float

    def sample_times(self, count=400):
        return np.linspace(0.0, 20.0 / self.a2, count)

    def verify(self, A_m, count=400, rtol=1e-9):
        for t in self.sample_times(count):
            if np.linalg.norm(expm(np.asarray(A_m) * t), 2) > self.a1 * math.exp(-self.a2 * t) * (1 + rtol) + 1e-15:
                return False
        return True


def decay_envelope(A_m, fraction=0.9, count=400):
    """a2 = fraction * |max Re eig(A_m)|, a1 = max over samples of ||exp(A_m t)|| exp(a2 t)."""
    A_m = np.asarray(A_m, dtype=float)
    a2 = fraction * abs(float(np.max(np.real(np.linalg.eigvals(A_m)))))
    times = np.linspace(0.0, 20.0 / a2, count)
    a1 = max(np.linalg.norm(expm(A_m * t), 2) * math.exp(a2 * t) for t in times)
    return DecayEnvelope(float(a1), a2)


def mimo_matched_gains(plant, A_m):
    """Theta* with A + B Lambda Theta* = A_m (least squares, residual checked) and K* = Lambda^-1.

    Raises:
        NoMatch: The least-squares residual exceeds 1e-9.
    """
    A_m = np.asarray(A_m, dtype=float)
    BL = plant.B @ plant.Lambda
    Theta_star, *_ = np.linalg.lstsq(BL, A_m - plant.A, rcond=None)
    residual = float(np.linalg.norm(plant.A + BL @ Theta_star - A_m))
    if residual >= MATCH_TOL:
        raise NoMatch(f"matching residual {residual:.3g} >= {MATCH_TOL}")
    K_star = np.linalg.inv(plant.Lambda)
    return Theta_star, K_star


def lyapunov_residual(ref):
    """Frobenius norm of (A_m+L)^T P + P (A_m+L) + Q."""
    A_cl = ref.A_m + ref.L
    return float(np.linalg.norm(A_cl.T @ ref.P + ref.P @ A_cl + ref.Q))


def lyapunov_cross_check(ref):
    """P from a general continuous Lyapunov solve; equals I/2 under the structured design."""
    A_cl = ref.A_m + ref.L
    return solve_continuous_lyapunov(A_cl.T, -ref.Q)


def check_structure(ref, gains, L=None, Gamma=None):
    """Raise AssumptionViolated unless L = -A_m + g I and Gamma = gamma I."""
    if L is not None and not np.allclose(np.asarray(L, dtype=float), ref.L, rtol=0, atol=1e-12):
        raise AssumptionViolated("mimo.L: must equal -A_m + g I")
    if Gamma is not None and not np.allclose(np.asarray(Gamma, dtype=float), gains.Gamma, rtol=0, atol=1e-12):
        raise AssumptionViolated("mimo.Gamma: must equal gamma I")


class MimoCrmLoop(AdaptiveLoop):
    family = "mimo"

    def __init__(self, plant, ref, gains, r, x_p0, x_m0=None, Theta0=None, K0=None):
        self.plant = plant
        self.ref = ref
        self.gains = gains
        self.r = r
        n, m = plant.n, plant.m
        self.x_p0 = np.asarray(x_p0, dtype=float).reshape(n)
        self.x_m0 = self.x_p0.copy() if x_m0 is None else np.asarray(x_m0, dtype=float).reshape(n)
        self.Theta0 = np.zeros((m, n)) if Theta0 is None else np.asarray(Theta0, dtype=float).reshape(m, n)
        self.K0 = np.eye(m) if K0 is None else np.asarray(K0, dtype=float).reshape(m, m)
        for pset, value, name in ((gains.theta_projection, self.Theta0, "Theta0"),
                                  (gains.k_projection, self.K0, "K0")):
            if pset is not None and not pset.contains(value):
                raise ConfigError(f"mimo.{name}: lies outside its projection ball")
        self._BtP = plant.B.T @ ref.P
        self._L = ref.L
        self.state_names = tuple(
            [f"x_p_{i + 1}" for i in range(n)]
            + [f"x_m_{i + 1}" for i in range(n)]
            + [f"x_m_o_{i + 1}" for i in range(n)]
            + [f"Theta_{i + 1}{j + 1}" for i in range(m) for j in range(n)]
            + [f"K_{i + 1}{j + 1}" for i in range(m) for j in range(m)]
            + ["int_e2", "int_Theta_dot2", "int_K_dot2"]
        )
        self.channel_order = tuple(
            [f"x_p_{i + 1}" for i in range(n)]
            + [f"x_m_{i + 1}" for i in range(n)]
            + [f"x_m_o_{i + 1}" for i in range(n)]
            + [f"e_{i + 1}" for i in range(n)]
            + [f"Theta_{i + 1}{j + 1}" for i in range(m) for j in range(n)]
            + [f"K_{i + 1}{j + 1}" for i in range(m) for j in range(m)]
            + ["V"]
        )

    def _unpack(self, x):
        n, m = self.plant.n, self.plant.m
        x_p = x[:n]
        x_m = x[n:2 * n]
        x_mo = x[2 * n:3 * n]
        offset = 3 * n
        Theta = x[offset:offset + m * n].reshape(m, n)
        offset += m * n
        K = x[offset:offset + m * m].reshape(m, m)
        return x_p, x_m, x_mo, Theta, K

    def initial_state(self):
        return np.concatenate([self.x_p0, self.x_m0, self.x_m0, self.Theta0.ravel(), self.K0.ravel(), np.zeros(3)])

    def reference_vector(self, t):
        return np.asarray(self.r(t), dtype=float).reshape(self.plant.m)

    def rhs(self, t, x):
        x_p, x_m, x_mo, Theta, K = self._unpack(x)
        plant, ref, gains = self.plant, self.ref, self.gains
        r = self.reference_vector(t)
        e = x_p - x_m
        u = Theta @ x_p + K @ r
        BtPe = self._BtP @ e
        Theta_dot = project(-gains.gamma * np.outer(BtPe, x_p), Theta, gains.theta_projection, strict=False)
        K_dot = project(-gains.gamma * np.outer(BtPe, r), K, gains.k_projection, strict=False)
        return np.concatenate([
            plant.A @ x_p + plant.B @ (plant.Lambda @ u),
            ref.A_m @ x_m + plant.B @ r - self._L @ e,
            ref.A_m @ x_mo + plant.B @ r,
            Theta_dot.ravel(),
            K_dot.ravel(),
            [e @ e, np.sum(Theta_dot ** 2), np.sum(K_dot ** 2)],
        ])

    def lyapunov(self, e, Theta, K):
        """V = e^T P e + Tr(Theta_err^T Lambda Theta_err)/gamma + Tr(K_err^T Lambda K_err)/gamma."""
        Lam = self.plant.Lambda
        dT = Theta - self.gains.Theta_star
        dK = K - self.gains.K_star
        return float(e @ self.ref.P @ e + (np.trace(dT.T @ Lam @ dT) + np.trace(dK.T @ Lam @ dK)) / self.gains.gamma)

    def derived_channels(self, traj):
        n = self.plant.n
        states = self.states_at(traj)
        channels = {}
        errors = np.empty((len(traj), n))
        v = np.empty(len(traj))
        for k, x in enumerate(states):
            x_p, x_m, _, Theta, K = self._unpack(x)
            errors[k] = x_p - x_m
            v[k] = self.lyapunov(errors[k], Theta, K)
        for i in range(n):
            channels[f"e_{i + 1}"] = errors[:, i]
        channels["V"] = v
        return channels

    @property
    def error_names(self):
        return [f"e_{i + 1}" for i in range(self.plant.n)]

    def initial_v(self):
        return self.lyapunov(self.x_p0 - self.x_m0, self.Theta0, self.K0)


def mimo_crm_loop(plant, ref, gains, r, x_p0, x_m0=None, Theta0=None, K0=None, L=None, Gamma=None):
    """Assemble the MIMO closed loop after checking the structured design.

    Raises:
        AssumptionViolated: L or Gamma given and not of the form -A_m + g I, gamma I.
    """
    check_structure(ref, gains, L, Gamma)
    return MimoCrmLoop(plant, ref, gains, r, x_p0, x_m0, Theta0, K0)


def g_satisfies_threshold(g, t2):
    """exp(-|g| t2) <= |g|^(-1/2)."""
    x = abs(g)
    return x > 0 and -x * t2 + 0.5 * math.log(x) <= 1e-12


def certify_mimo_run(traj, scenario, t2):
    """Certificates of a MIMO run: structure, V decrease, Gronwall envelope and tails.

    Raises:
        PreconditionViolated: gamma != |g|, no projection, or g above the threshold for t2.
    """
    loop = scenario.loop
    plant, ref, gains = loop.plant, loop.ref, loop.gains
    for name in loop.error_names + ["V", "int_e2", "int_Theta_dot2", "int_K_dot2"]:
        if name not in traj:
            raise MissingChannel(f"Trajectory lacks channel '{name}'")
    if gains.theta_projection is None or gains.k_projection is None:
        raise PreconditionViolated("MIMO tail bounds need projection on Theta and K")
    if abs(gains.gamma - abs(ref.g)) > 1e-12 * max(1.0, gains.gamma):
        raise PreconditionViolated(f"MIMO tail bounds need gamma = |g|, got gamma={gains.gamma}, g={ref.g}")
    if not g_satisfies_threshold(ref.g, t2):
        raise PreconditionViolated(f"g={ref.g} does not satisfy exp(-|g| t2) <= |g|^(-1/2) for t2={t2}")

    tol = scenario.tolerance
    g = abs(ref.g)
    t = traj.times
    v = traj.channel("V")
    v0 = float(v[0])
    e0_sq = float(sum(traj.channel(name)[0] ** 2 for name in loop.error_names))
    theta_max, k_max = gains.theta_max, gains.k_max
    offset = plant.lambda_bar * (theta_max ** 2 + k_max ** 2) / gains.gamma
    r_sup = float(np.max([np.linalg.norm(loop.reference_vector(tk)) for tk in t]))
    certs = [
        make_certificate("assumption_residual", lyapunov_residual(ref), 0.0, tol,
                         detail="(A_m+L)^T P + P (A_m+L) + Q"),
    ]
    envelope = decay_envelope(ref.A_m)
    certs.append(make_certificate("decay_envelope", 0.0 if envelope.verify(ref.A_m) else 1.0, 0.0, tol,
                                  detail=f"a1={envelope.a1:.6g}, a2={envelope.a2:.6g}"))

    increments = np.diff(v) + g * np.diff(traj.channel("int_e2"))
    worst = int(np.argmax(increments))
    certs.append(make_certificate("v_rate", float(increments[worst]), 1e-7, tol,
                                  detail=f"V(t_k+1) - V(t_k) + |g| int ||e||^2, worst at t={t[worst]:.6g}"))
    certs.append(make_certificate("e_l2", float(traj.channel("int_e2")[-1]), v0 / g, tol, integral=True,
                                  detail="int ||e||^2 <= V(0)/|g|"))

    decay = np.exp(-2 * g * t)
    certs.append(envelope_certificate("v_envelope", t, v, v0 * decay + offset * (1 - decay), tol,
                                      detail="V(0) e^(-2|g|t) + lambda_bar (Theta_max^2 + K_max^2)/gamma"))

    e_bound = (0.5 * e0_sq / g + offset) / g
    certs.append(make_certificate("e_tail_l2", quadrature_tail(traj, "int_e2", t2), e_bound, tol, integral=True,
                                  detail=f"t2={t2}"))
    b_norm = float(np.linalg.norm(plant.B, 2))
    k_bound = b_norm ** 2 * r_sup ** 2 * (0.5 * e0_sq + plant.lambda_bar * (theta_max ** 2 + k_max ** 2)) / 4
    certs.append(make_certificate("K_dot_tail_l2", quadrature_tail(traj, "int_K_dot2", t2), k_bound, tol,
                                  integral=True, detail="||B||^2 ||r||^2 (||e(0)||^2/2 + lambda_bar (Theta^2+K^2))/4"))
    certs.append(trend_record("Theta_dot_tail_l2", quadrature_tail(traj, "int_Theta_dot2", t2),
                              detail="non-increasing in gamma = |g|"))

    mask = t >= t2 - 1e-12
    n = plant.n
    x_m = np.column_stack([traj.channel(f"x_m_{i + 1}") for i in range(n)])
    x_mo = np.column_stack([traj.channel(f"x_m_o_{i + 1}") for i in range(n)])
    x_mo_t2 = float(np.linalg.norm([traj.value_at(f"x_m_o_{i + 1}", t2) for i in range(n)]))
    fade = np.exp(-envelope.a2 * (t[mask] - t2))
    c5 = (envelope.a1 * x_mo_t2 * fade + envelope.a1 * b_norm * r_sup * (1 - fade) / envelope.a2) ** 2
    delta_sup = (envelope.a1 * float(np.linalg.norm(ref.L, 2)) * math.sqrt(1 / (2 * envelope.a2))
                 * math.sqrt(v0 / g))
    certs.append(make_certificate("delta_x_m_sup", float(np.max(np.linalg.norm(x_m - x_mo, axis=1))), delta_sup,
                                  tol, detail="a1 ||L|| sqrt(1/(2 a2)) sqrt(V(0)/|g|)"))
    certs.append(envelope_certificate("x_m_tail", t[mask], np.sum(x_m[mask] ** 2, axis=1),
                                      2 * c5 + 2 * delta_sup ** 2, tol, detail="||x_m||^2 <= 2 c5(t) + 2 sup||dx_m||^2"))

    for name, radius in (("Theta", gains.theta_projection.theta_bound), ("K", gains.k_projection.theta_bound)):
        cols = [c for c in traj.names if c.startswith(f"{name}_")]
        norms = np.sqrt(sum(traj.channel(c) ** 2 for c in cols))
        certs.append(make_certificate(f"{name}_containment", float(np.max(norms)), radius + 1e-6, tol))
    logger.debug(f"MIMO certificates for n={n}: {sum(c.passed for c in certs)}/{len(certs)} pass")
    return certs


def certify_mimo_basic(traj, scenario):
    """Certificates that hold without projection or gamma = |g|."""
    loop = scenario.loop
    tol = scenario.tolerance
    g = abs(loop.ref.g)
    v = traj.channel("V")
    increments = np.diff(v) + g * np.diff(traj.channel("int_e2"))
    worst = int(np.argmax(increments))
    return [
        make_certificate("assumption_residual", lyapunov_residual(loop.ref), 0.0, tol),
        make_certificate("v_rate", float(increments[worst]), 1e-7, tol,
                         detail=f"worst at t={traj.times[worst]:.6g}"),
        make_certificate("e_l2", float(traj.channel("int_e2")[-1]), float(v[0]) / g, tol, integral=True),
    ]
