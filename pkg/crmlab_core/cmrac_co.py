"""Composite MRAC with observer feedback (CMRAC-CO) and the classical CMRAC comparator.

Both variants share the plant, the observer and the sensor noise. CMRAC-CO
feeds back the observer state and tracks a closed-loop reference model;
classical CMRAC feeds back the measured state and tracks the open-loop model.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import trapezoid

from .adaptive_loop import AdaptiveLoop
from .bounds import envelope_certificate, make_certificate, trend_record
from .errors import ConfigError, MismatchedScenarios, MissingChannel, PreconditionViolated, UnstableGain
from .projection import ProjectionSet, project
from .reference_signals import ReferenceSignal
from .trajectory import numeric_derivative, quadrature_tail

logger = logging.getLogger(__name__)

VARIANTS = ("CMRAC", "CMRAC_CO")
REGION_END = 15.0
TIE_TOL = 1e-9


def _sequence_length(count):
    # doubling keeps the cache small; prefixes agree across lengths
    length = 4096
    while length < count:
        length *= 2
    return length


@lru_cache(maxsize=32)
def _raw_sequence(seed, length):
    values = np.random.default_rng(seed).standard_normal(length)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class NoiseModel:
    """Clamped Gaussian sequence held constant between samples at ``rate`` Hz."""

    seed: int = 42
    rate: float = 100.0
    raw_variance: float = 1.0
    clamp: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        if self.rate <= 0:
            raise ConfigError(f"noise.rate: must be positive, got {self.rate}")
        if self.raw_variance < 0:
            raise ConfigError(f"noise.raw_variance: must be >= 0, got {self.raw_variance}")
        if self.clamp < 0:
            raise ConfigError(f"noise.clamp: must be >= 0, got {self.clamp}")

    @classmethod
    def from_config(cls, section, seed=42):
        section = section or {}
        return cls(
            seed=int(seed if section.get("seed") is None else section["seed"]),
            rate=float(section.get("rate", 100.0)),
            raw_variance=float(section.get("raw_variance", 1.0)),
            clamp=float(section.get("clamp", 0.1)),
            enabled=bool(section.get("enabled", True)),
        )

    def samples(self, count):
        """The first ``count`` held samples, clamped."""
        raw = _raw_sequence(self.seed, _sequence_length(count))[:count]
        return np.clip(math.sqrt(self.raw_variance) * raw, -self.clamp, self.clamp)

    def sample(self, index):
        raw = _raw_sequence(self.seed, _sequence_length(index + 1))[index]
        return min(self.clamp, max(-self.clamp, math.sqrt(self.raw_variance) * float(raw)))

    def __call__(self, t):
        return noise_signal(self, t)


def noise_signal(model, t):
    """Measurement offset n(t); zero when the model is disabled."""
    if not model.enabled:
        return 0.0
    index = int(math.floor(t * model.rate + 1e-9))
    return model.sample(index)


@dataclass(frozen=True)
class CmracConfig:
    """Plant, design gains and schedule of one CMRAC or CMRAC-CO run."""

    a_p: float = 1.0
    k_p: float = 1.0
    a_m: float = -1.0
    k_m: float = 1.0
    ell: float = -10.0
    gamma: float = 100.0
    eta: float = 1.0
    projection: ProjectionSet = field(default_factory=lambda: ProjectionSet(5.0))
    variant: str = "CMRAC_CO"
    region_switch: float = 4.0
    horizon: float = REGION_END
    filter_time_constant: float = 0.5
    step_amplitude: float = 1.0
    x_a0: float = 1.0
    x_o0: float = None
    x_m0: float = 0.0
    theta0: float = 0.0
    theta_hat0: float = 0.0
    noise: NoiseModel = field(default_factory=lambda: NoiseModel(enabled=False))
    use_truth: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"cmrac.variant: must be one of {', '.join(VARIANTS)}, got '{self.variant}'")
        if self.k_p == 0:
            raise ConfigError("plant.k_p: must be non-zero")
        if not self.a_m < 0:
            raise ConfigError(f"reference.a_m: must be < 0, got {self.a_m}")
        for key in ("gamma", "eta", "filter_time_constant"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"cmrac.{key}: must be > 0, got {getattr(self, key)}")
        if self.x_o0 is None:
            object.__setattr__(self, "x_o0", self.x_a0)
        if self.projection is None:
            raise ConfigError("cmrac.projection: a projection set is required")
        for name in ("theta0", "theta_hat0"):
            if not self.projection.contains(getattr(self, name)):
                raise ConfigError(f"cmrac.{name}: lies outside the projection ball")
        if not self.projection.contains(self.theta_star):
            raise ConfigError(f"projection.theta_bound: {self.projection.theta_bound} does not cover "
                              f"theta*={self.theta_star:.6g}")
        if self.variant == "CMRAC_CO" and self.g_theta >= 0:
            raise UnstableGain(f"g_theta = a_m + ell + |k_p theta| = {self.g_theta:.6g} must be < 0")

    @property
    def sign(self):
        return 1.0 if self.k_p > 0 else -1.0

    @property
    def theta_star(self):
        return (self.a_m - self.a_p) / self.k_p

    @property
    def k_star(self):
        return self.k_m / self.k_p

    @property
    def coupling_magnitude(self):
        """|k_p theta*|, or |k_p| theta_bound when the true parameter is not used."""
        if self.use_truth:
            return abs(self.k_p * self.theta_star)
        return abs(self.k_p) * self.projection.theta_bound

    @property
    def g_theta(self):
        return self.a_m + self.ell + self.coupling_magnitude

    @property
    def g_n(self):
        return self.a_m + self.ell + 2 * self.coupling_magnitude

    @property
    def theta_max(self):
        return self.projection.theta_max

    def reference(self):
        return ReferenceSignal(kind="filtered_step", amplitude=self.step_amplitude, onset=self.region_switch,
                               time_constant=self.filter_time_constant)

    def scenario_key(self):
        """Everything two compared runs must share."""
        return (self.a_p, self.k_p, self.a_m, self.k_m, self.ell, self.gamma, self.eta,
                self.projection, self.region_switch, self.horizon, self.filter_time_constant,
                self.step_amplitude, self.x_a0, self.x_o0, self.x_m0, self.theta0, self.theta_hat0, self.noise)


def coupling_ratio(cfg):
    """ell^2 / g_theta^2; tends to 1 as ell -> -inf."""
    return cfg.ell ** 2 / cfg.g_theta ** 2


class CmracLoop(AdaptiveLoop):
    """State (x_a, x_m or x_m_o, x_o, theta, theta_hat) plus quadratures."""

    state_names = ("x_a", "x_m", "x_o", "theta", "theta_hat",
                   "int_e_m2", "int_e_o2", "int_eps2", "int_theta_dot2", "int_theta_hat_dot2")

    def __init__(self, cfg):
        self.cfg = cfg
        self.r = cfg.reference()
        self.noise = cfg.noise
        self.observer_feedback = cfg.variant == "CMRAC_CO"
        self.family = "cmrac-co" if self.observer_feedback else "cmrac"
        model = "x_m" if self.observer_feedback else "x_m_o"
        self.model_channel = model
        self.state_names = ("x_a", model) + CmracLoop.state_names[2:]
        self.channel_order = ("x_a", "x_p_measured", model, "x_o", "e_m", "e_o", "eps_theta", "theta",
                              "theta_hat", "u", "du_dt", "V", "r", "n")

    def initial_state(self):
        c = self.cfg
        return np.array([c.x_a0, c.x_m0, c.x_o0, c.theta0, c.theta_hat0, 0.0, 0.0, 0.0, 0.0, 0.0])

    def control(self, x_p, x_o, theta, r):
        regressor = x_o if self.observer_feedback else x_p
        return theta * regressor + self.cfg.k_star * r

    def parameter_rates(self, e_m, e_o, x_p, x_o, theta, theta_hat):
        c = self.cfg
        regressor = x_o if self.observer_feedback else x_p
        eps = theta - theta_hat
        theta_dot = project(np.array([-c.gamma * c.sign * e_m * regressor]), np.array([theta]),
                            c.projection, strict=False)[0] - c.eta * eps
        theta_hat_dot = project(np.array([c.gamma * c.sign * e_o * regressor]), np.array([theta_hat]),
                                c.projection, strict=False)[0] + c.eta * eps
        return theta_dot, theta_hat_dot

    def rhs(self, t, x):
        x_a, x_m, x_o, theta, theta_hat = x[:5]
        c = self.cfg
        r = self.r(t)
        x_p = x_a + noise_signal(self.noise, t)
        e_m = x_p - x_m
        e_o = x_o - x_p
        u = self.control(x_p, x_o, theta, r)
        theta_dot, theta_hat_dot = self.parameter_rates(e_m, e_o, x_p, x_o, theta, theta_hat)
        ell_feedback = c.ell * e_m if self.observer_feedback else 0.0
        return np.array([
            c.a_p * x_a + c.k_p * u,
            c.a_m * x_m + c.k_m * r - ell_feedback,
            c.ell * (x_o - x_p) + (c.a_m - c.k_p * theta_hat) * x_o + c.k_p * u,
            theta_dot,
            theta_hat_dot,
            e_m * e_m,
            e_o * e_o,
            (theta - theta_hat) ** 2,
            theta_dot ** 2,
            theta_hat_dot ** 2,
        ])

    def lyapunov(self, e_m, e_o, theta, theta_hat):
        """V = (e_m^2 + e_o^2 + |k_p|/gamma (theta_err^2 + theta_hat_err^2)) / 2."""
        c = self.cfg
        weight = abs(c.k_p) / c.gamma
        return 0.5 * (np.square(e_m) + np.square(e_o)
                      + weight * (np.square(theta - c.theta_star) + np.square(theta_hat - c.theta_star)))

    def derived_channels(self, traj):
        n = np.array([noise_signal(self.noise, t) for t in traj.times])
        r = np.array([self.r(t) for t in traj.times])
        x_p = traj.channel("x_a") + n
        x_o = traj.channel("x_o")
        theta = traj.channel("theta")
        theta_hat = traj.channel("theta_hat")
        e_m = x_p - traj.channel(self.model_channel)
        e_o = x_o - x_p
        u = self.control(x_p, x_o, theta, r)
        derived = {
            "x_p_measured": x_p,
            "e_m": e_m,
            "e_o": e_o,
            "eps_theta": theta - theta_hat,
            "u": u,
            "V": self.lyapunov(e_m, e_o, theta, theta_hat),
            "r": r,
            "n": n,
        }
        derived["du_dt"] = numeric_derivative(traj.with_channels({"u": u}), "u")
        return derived

    def initial_v(self):
        c = self.cfg
        x_p0 = c.x_a0 + noise_signal(self.noise, 0.0)
        return float(self.lyapunov(x_p0 - c.x_m0, c.x_o0 - x_p0, c.theta0, c.theta_hat0))


def cmracco_loop(cfg):
    """Closed loop of either variant.

    Raises:
        UnstableGain: CMRAC-CO with g_theta >= 0 (raised while building the config).
    """
    loop = CmracLoop(cfg)
    logger.debug(f"{cfg.variant} loop: ell={cfg.ell} gamma={cfg.gamma} eta={cfg.eta} "
                 f"g_theta={cfg.g_theta:.6g} g_n={cfg.g_n:.6g} noise={'on' if cfg.noise.enabled else 'off'}")
    return loop


@dataclass(frozen=True)
class VariantMetrics:
    variant: str
    region2_max_du_dt: float
    region2_l2_du_dt: float
    region1_tracking_l2: float
    region2_tracking_l2: float
    final_tracking_error: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class VariantComparison:
    co: VariantMetrics
    classical: VariantMetrics
    verdict: str

    def to_dict(self):
        return {"CMRAC_CO": self.co.to_dict(), "CMRAC": self.classical.to_dict(), "verdict": self.verdict}


def _region_l2(t, values, mask):
    if np.count_nonzero(mask) < 2:
        return 0.0
    return float(trapezoid(values[mask] ** 2, t[mask]))


def variant_metrics(traj, cfg):
    t = traj.times
    du = traj.channel("du_dt")
    e_m = traj.channel("e_m")
    region1 = t < cfg.region_switch
    region2 = (t >= cfg.region_switch - 1e-12) & (t <= cfg.horizon + 1e-12)
    return VariantMetrics(
        cfg.variant,
        float(np.max(np.abs(du[region2]))) if np.any(region2) else 0.0,
        _region_l2(t, du, region2),
        _region_l2(t, e_m, region1),
        _region_l2(t, e_m, region2),
        float(abs(e_m[-1])),
    )


def compare_variants(co_traj, co_cfg, cmrac_traj, cmrac_cfg):
    """Region-2 control-rate comparison of a seed-paired CMRAC-CO / CMRAC pair.

    Raises:
        MismatchedScenarios: The two configurations differ in anything but the variant.
    """
    if co_cfg.variant != "CMRAC_CO" or cmrac_cfg.variant != "CMRAC":
        raise MismatchedScenarios(f"expected one CMRAC_CO and one CMRAC run, got {co_cfg.variant}, {cmrac_cfg.variant}")
    if co_cfg.scenario_key() != cmrac_cfg.scenario_key():
        raise MismatchedScenarios("compared runs differ in plant, gains, schedule or noise")
    if not np.array_equal(co_traj.times, cmrac_traj.times):
        raise MismatchedScenarios("compared runs use different record grids")
    co = variant_metrics(co_traj, co_cfg)
    classical = variant_metrics(cmrac_traj, cmrac_cfg)
    gap = classical.region2_max_du_dt - co.region2_max_du_dt
    if abs(gap) <= TIE_TOL * max(1.0, classical.region2_max_du_dt):
        verdict = "tie"
    else:
        verdict = "CMRAC_CO" if gap > 0 else "CMRAC"
    logger.info(f"Variant comparison: CMRAC_CO max|du/dt|={co.region2_max_du_dt:.6g}, "
                f"CMRAC max|du/dt|={classical.region2_max_du_dt:.6g}, verdict={verdict}")
    return VariantComparison(co, classical, verdict)


def g_satisfies_threshold(g, t3):
    """exp(-|g| t3) <= |g|^(-1/2)."""
    x = abs(g)
    return x > 0 and -x * t3 + 0.5 * math.log(x) <= 1e-12


def smoothed_noise_derivative(traj, a_p):
    """xi = n' - a_p n with n smoothed by a 3-sample moving average before differencing."""
    n = traj.channel("n")
    if n.size < 3:
        return np.zeros_like(n)
    smooth = np.convolve(n, np.ones(3) / 3.0, mode="same")
    smooth[0], smooth[-1] = n[0], n[-1]
    dn = np.diff(smooth) / np.diff(traj.times)
    return dn - a_p * smooth[:-1]


def certify_containment(traj, scenario):
    """theta and theta_hat stay inside the projection ball (either variant)."""
    cfg = scenario.loop.cfg
    return [
        make_certificate(f"{name}_containment", float(np.max(np.abs(traj.channel(name)))),
                         cfg.projection.theta_bound + 1e-6, scenario.tolerance)
        for name in ("theta", "theta_hat")
    ]


def certify_cmracco_run(traj, scenario, t3):
    """Lyapunov, envelope and tail certificates of a CMRAC-CO run.

    Noiseless runs get the exact certificates. Runs with sensor noise get
    the bounded-disturbance envelope instead, marked approximate because the
    held noise is not differentiable.

    Raises:
        PreconditionViolated: Classical CMRAC run, or g_n does not satisfy the tail threshold for t3.
    """
    loop = scenario.loop
    cfg = loop.cfg
    if cfg.variant != "CMRAC_CO":
        raise PreconditionViolated("CMRAC-CO certificates need the observer-feedback variant")
    for name in ("e_m", "e_o", "eps_theta", "V", "theta", "theta_hat", "int_e_m2", "int_e_o2", "int_eps2"):
        if name not in traj:
            raise MissingChannel(f"Trajectory lacks channel '{name}'")
    tol = scenario.tolerance
    t = traj.times
    v = traj.channel("V")
    v0 = float(v[0])
    kp = abs(cfg.k_p)
    g = abs(cfg.g_n)
    theta_max = cfg.theta_max
    certs = []

    certs.extend(certify_containment(traj, scenario))

    if cfg.noise.enabled:
        xi = smoothed_noise_derivative(traj, cfg.a_p)
        xi_sup = float(np.max(np.abs(xi))) if xi.size else 0.0
        decay = np.exp(-g * t)
        envelope = v0 * decay + kp * theta_max ** 2 / cfg.gamma + xi_sup ** 2 / (4 * g ** 2)
        certs.append(envelope_certificate("v_noise_envelope", t, v, envelope, tol, kind="approximate",
                                          detail=f"||xi||={xi_sup:.6g} from 3-sample smoothed noise"))
        return certs

    if g <= 0 or cfg.g_n >= 0:
        raise PreconditionViolated(f"envelope needs g_n < 0, got {cfg.g_n}")
    increments = np.diff(v)
    worst = int(np.argmax(increments))
    certs.append(make_certificate("v_monotone", float(increments[worst]), 1e-8, tol,
                                  detail=f"max V(t_k+1) - V(t_k) at t={t[worst]:.6g}"))
    rate = (np.diff(v) + g * (np.diff(traj.channel("int_e_m2")) + np.diff(traj.channel("int_e_o2")))
            + cfg.eta * kp / cfg.gamma * np.diff(traj.channel("int_eps2")))
    worst = int(np.argmax(rate))
    certs.append(make_certificate("v_rate", float(rate[worst]), 1e-7, tol,
                                  detail="V' <= g_n (e_m^2 + e_o^2) - eta |k_p|/gamma eps^2"))
    decay = np.exp(-2 * g * t)
    certs.append(envelope_certificate("v_envelope", t, v, v0 * decay + kp * theta_max ** 2 / cfg.gamma * (1 - decay),
                                      tol, detail="V(0) e^(-2|g_n|t) + |k_p| Theta^2/gamma"))

    if not g_satisfies_threshold(cfg.g_n, t3):
        raise PreconditionViolated(f"g_n={cfg.g_n} does not satisfy exp(-|g_n| t3) <= |g_n|^(-1/2) for t3={t3}")
    e0_sq = float(traj.channel("e_m")[0] ** 2 + traj.channel("e_o")[0] ** 2)
    error_bound = (math.sqrt(e0_sq) / (math.sqrt(2) * g) + math.sqrt(kp / (cfg.gamma * g)) * theta_max) ** 2
    for name in ("e_m", "e_o"):
        certs.append(make_certificate(f"{name}_tail_l2", quadrature_tail(traj, f"int_{name}2", t3), error_bound, tol,
                                      integral=True, detail=f"t3={t3}"))
    eps_bound = (math.sqrt(cfg.gamma * e0_sq / (2 * cfg.eta * kp * g)) + theta_max / math.sqrt(cfg.eta)) ** 2
    certs.append(make_certificate("eps_theta_tail_l2", quadrature_tail(traj, "int_eps2", t3), eps_bound, tol,
                                  integral=True, detail=f"t3={t3}"))
    certs.append(trend_record("theta_dot_tail_l2", quadrature_tail(traj, "int_theta_dot2", t3)))
    certs.append(trend_record("theta_hat_dot_tail_l2", quadrature_tail(traj, "int_theta_hat_dot2", t3)))
    return certs
