"""Scalar adaptive system with a closed-loop (CRM) or open-loop (ORM) reference model."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .adaptive_loop import AdaptiveLoop
from .errors import ConfigError, ZeroInputGain
from .projection import ProjectionSet, project

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScalarPlant:
    """x_p' = a_p x_p + k_p u with a_p unknown to the controller and sgn(k_p) known."""

    a_p: float
    k_p: float

    def __post_init__(self):
        if self.k_p == 0:
            raise ZeroInputGain("plant.k_p: must be non-zero")

    @property
    def sign(self):
        return 1.0 if self.k_p > 0 else -1.0


@dataclass(frozen=True)
class ReferenceModel:
    """x_m' = a_m x_m + k_m r - ell (x_p - x_m); ell = 0 gives the open-loop model."""

    a_m: float
    k_m: float
    ell: float = 0.0

    def __post_init__(self):
        if not self.a_m < 0:
            raise ConfigError(f"reference.a_m: must be < 0, got {self.a_m}")
        if self.ell > 0:
            raise ConfigError(f"reference.ell: must be <= 0, got {self.ell}")

    @property
    def is_open_loop(self):
        return self.ell == 0

    @property
    def error_pole(self):
        """a_m + ell, the pole of the tracking error dynamics."""
        return self.a_m + self.ell


@dataclass(frozen=True)
class AdaptationConfig:
    gamma: float
    theta0: tuple = (0.0, 0.0)
    projection: ProjectionSet = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError(f"adaptation.gamma: must be > 0, got {self.gamma}")
        theta0 = tuple(float(v) for v in self.theta0)
        if len(theta0) != 2:
            raise ConfigError(f"adaptation.theta0: expected (theta, k), got {self.theta0!r}")
        object.__setattr__(self, "theta0", theta0)
        if self.projection is not None and not self.projection.contains(theta0):
            raise ConfigError(
                f"adaptation.theta0: {theta0} lies outside the projection ball of radius {self.projection.theta_bound}"
            )


@dataclass(frozen=True)
class MatchedGains:
    theta_star: float
    k_star: float

    @property
    def vector(self):
        return np.array([self.theta_star, self.k_star])


def matched_gains(plant, ref):
    """Ideal gains with a_p + k_p theta* = a_m and k_p k* = k_m.

    Raises:
        ZeroInputGain: If k_p is zero.
    """
    if plant.k_p == 0:
        raise ZeroInputGain("plant.k_p: must be non-zero")
    return MatchedGains((ref.a_m - plant.a_p) / plant.k_p, ref.k_m / plant.k_p)


def lyapunov_v(e, theta_bar, plant, adapt, gains):
    """V = e^2/2 + |k_p|/(2 gamma) ||theta_bar - theta_bar*||^2.

    Args:
        e: Tracking error, scalar or array of samples.
        theta_bar: (theta, k), shape (2,) or (samples, 2).

    Returns:
        float or np.ndarray matching the shape of e.
    """
    e = np.asarray(e, dtype=float)
    theta_err = np.asarray(theta_bar, dtype=float) - gains.vector
    weight = abs(plant.k_p) / (2.0 * adapt.gamma)
    value = 0.5 * np.square(e) + weight * np.sum(np.square(theta_err), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


class ScalarCrmLoop(AdaptiveLoop):
    """State (x_p, x_m, x_m_o, theta, k) plus quadratures of e^2, theta'^2 and k'^2."""

    family = "crm-scalar"
    state_names = ("x_p", "x_m", "x_m_o", "theta", "k", "int_e2", "int_theta_dot2", "int_k_dot2")
    channel_order = ("x_p", "x_m", "x_m_o", "e", "theta", "k", "u", "V")

    def __init__(self, plant, ref, adapt, r, x_p0=1.0, x_m0=0.0):
        self.plant = plant
        self.ref = ref
        self.adapt = adapt
        self.r = r
        self.x_p0 = float(x_p0)
        self.x_m0 = float(x_m0)
        self.gains = matched_gains(plant, ref)
        if ref.is_open_loop:
            self.family = "orm-scalar"

    def initial_state(self):
        theta0, k0 = self.adapt.theta0
        return np.array([self.x_p0, self.x_m0, self.x_m0, theta0, k0, 0.0, 0.0, 0.0])

    def parameter_velocity(self, e, x_p, r, theta, k):
        update = -self.adapt.gamma * self.plant.sign * e * np.array([x_p, r])
        return project(update, (theta, k), self.adapt.projection, strict=False)

    def rhs(self, t, x):
        x_p, x_m, x_m_o, theta, k = x[:5]
        p, ref = self.plant, self.ref
        r = self.r(t)
        e = x_p - x_m
        u = theta * x_p + k * r
        velocity = self.parameter_velocity(e, x_p, r, theta, k)
        return np.array([
            p.a_p * x_p + p.k_p * u,
            ref.a_m * x_m + ref.k_m * r - ref.ell * e,
            ref.a_m * x_m_o + ref.k_m * r,
            velocity[0],
            velocity[1],
            e * e,
            velocity[0] ** 2,
            velocity[1] ** 2,
        ])

    def derived_channels(self, traj):
        x_p = traj.channel("x_p")
        e = x_p - traj.channel("x_m")
        r = np.array([self.r(t) for t in traj.times])
        theta_bar = np.column_stack([traj.channel("theta"), traj.channel("k")])
        return {
            "e": e,
            "u": theta_bar[:, 0] * x_p + theta_bar[:, 1] * r,
            "V": lyapunov_v(e, theta_bar, self.plant, self.adapt, self.gains),
            "delta_x_m": traj.channel("x_m") - traj.channel("x_m_o"),
        }

    def parameter_rates(self, traj):
        """(theta', k') at every recorded sample, projection included."""
        rates = np.empty((len(traj), 2))
        e = traj.channel("x_p") - traj.channel("x_m")
        for i, t in enumerate(traj.times):
            rates[i] = self.parameter_velocity(
                e[i], traj.channel("x_p")[i], self.r(t), traj.channel("theta")[i], traj.channel("k")[i]
            )
        return rates

    def initial_v(self):
        return lyapunov_v(self.x_p0 - self.x_m0, self.adapt.theta0, self.plant, self.adapt, self.gains)

    def theta_max(self):
        """Sup of ||theta_bar - theta_bar*||: 2 theta_bound with projection, else from V(0)."""
        if self.adapt.projection is not None:
            return self.adapt.projection.theta_max
        return math.sqrt(2.0 * self.adapt.gamma * self.initial_v() / abs(self.plant.k_p))


def crm_loop(plant, ref, adapt, r, x_p0=1.0, x_m0=0.0):
    """Assemble the scalar closed loop; ell = 0 yields the open-loop reference system."""
    loop = ScalarCrmLoop(plant, ref, adapt, r, x_p0=x_p0, x_m0=x_m0)
    logger.debug(
        f"Scalar loop: a_p={plant.a_p} k_p={plant.k_p} a_m={ref.a_m} ell={ref.ell} gamma={adapt.gamma} "
        f"theta*={loop.gains.theta_star:.6g} k*={loop.gains.k_star:.6g}"
    )
    return loop
