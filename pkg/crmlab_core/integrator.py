"""Deterministic ODE integration onto a uniform record grid."""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, Divergence, StepUnderflow
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

METHODS = ("rk4", "rk45")


@dataclass(frozen=True)
class IntegratorConfig:
    """Integrator settings.

    ``rk4`` is the classical fixed-step Runge-Kutta method and gives bit-exact
    regression output. ``rk45`` is the embedded Dormand-Prince pair with error
    control; its dense output is sampled on the record grid.
    """

    method: str = "rk45"
    horizon: float = 15.0
    record_dt: float = 0.01
    dt: float = 1e-3
    abs_tol: float = 1e-9
    rel_tol: float = 1e-7
    dt_max: float = 0.01

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"integrator.method: must be one of {', '.join(METHODS)}, got '{self.method}'")
        for key in ("horizon", "record_dt", "dt", "abs_tol", "rel_tol", "dt_max"):
            value = getattr(self, key)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"integrator.{key}: must be a positive number, got {value!r}")
        if self.method == "rk4" and self.record_dt < self.dt:
            raise ConfigError(f"integrator.record_dt: must be >= dt ({self.dt}) for rk4, got {self.record_dt}")

    @classmethod
    def from_config(cls, section):
        section = section or {}
        kwargs = {}
        for key in cls.__dataclass_fields__:
            if key in section and section[key] is not None:
                kwargs[key] = section[key] if key == "method" else float(section[key])
        if "method" in kwargs:
            kwargs["method"] = str(kwargs["method"]).lower()
        return cls(**kwargs)

    def as_dict(self):
        return asdict(self)

    def check_step_rule(self, gamma=1.0, ell=0.0):
        """Reject fixed-step settings too coarse for the fast error mode.

        Raises:
            ConfigError: If rk4 is selected and dt > 0.1 / max(1, gamma, |ell|).
        """
        if self.method != "rk4":
            return
        limit = 0.1 / max(1.0, abs(gamma), abs(ell))
        if self.dt > limit * (1 + 1e-12):
            raise ConfigError(
                f"integrator.dt: {self.dt} exceeds the fixed-step limit {limit:.3g} "
                f"for gamma={gamma}, ell={ell}"
            )

    def record_grid(self):
        """Uniform grid from 0 to horizon with spacing at most record_dt."""
        intervals = max(1, math.ceil(self.horizon / self.record_dt - 1e-9))
        return np.linspace(0.0, self.horizon, intervals + 1)


def _rk4_step(rhs, t, x, h):
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate_rk4(rhs, x0, grid, dt):
    states = np.empty((grid.size, x0.size))
    states[0] = x0
    x = x0
    for i in range(grid.size - 1):
        t0 = grid[i]
        interval = grid[i + 1] - t0
        substeps = max(1, math.ceil(interval / dt - 1e-9))
        h = interval / substeps
        for j in range(substeps):
            x = _rk4_step(rhs, t0 + j * h, x, h)
        if not np.all(np.isfinite(x)):
            raise Divergence(f"State became non-finite before t={grid[i + 1]:.6g}")
        states[i + 1] = x
    return states


def _integrate_rk45(rhs, x0, grid, cfg):
    solution = solve_ivp(
        rhs,
        (grid[0], grid[-1]),
        x0,
        method="RK45",
        t_eval=grid,
        rtol=cfg.rel_tol,
        atol=cfg.abs_tol,
        max_step=cfg.dt_max,
    )
    if solution.status == -1:
        raise StepUnderflow(f"RK45 failed: {solution.message}")
    if solution.y.shape[1] != grid.size:
        raise StepUnderflow(f"RK45 stopped early at t={solution.t[-1]:.6g}: {solution.message}")
    return solution.y.T


def integrate(rhs, x0, cfg, names=None, meta=None):
    """Integrate x' = rhs(t, x) from t=0 and record the state on the record grid.

    Args:
        rhs (callable): Vector field ``rhs(t, x) -> array``.
        x0 (array-like): Finite initial state.
        cfg (IntegratorConfig): Method, step/tolerances, horizon and record_dt.
        names (list[str]): Channel names for the state components.
        meta (dict): Extra metadata stored on the trajectory.

    Returns:
        Trajectory: The state channels on the record grid.

    Raises:
        Divergence: If the state becomes non-finite.
        StepUnderflow: If the adaptive step size collapses.
    """
    x0 = np.array(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x0)):
        raise Divergence("Initial state is not finite")
    if names is None:
        names = [f"x{i + 1}" for i in range(x0.size)]
    if len(names) != x0.size:
        raise ValueError(f"{len(names)} channel names for a state of size {x0.size}")

    def guarded_rhs(t, x):
        dx = np.asarray(rhs(t, x), dtype=float)
        if not np.all(np.isfinite(dx)):
            raise Divergence(f"Vector field is non-finite at t={t:.6g}")
        return dx

    grid = cfg.record_grid()
    logger.debug(f"Integrating {x0.size} states with {cfg.method} over {cfg.horizon}s ({grid.size} records)")
    if cfg.method == "rk4":
        states = _integrate_rk4(guarded_rhs, x0, grid, cfg.dt)
    else:
        states = _integrate_rk45(guarded_rhs, x0, grid, cfg)

    if not np.all(np.isfinite(states)):
        raise Divergence("Recorded state contains non-finite samples")
    run_meta = {"integrator": cfg.as_dict()}
    run_meta.update(meta or {})
    return Trajectory(grid, {name: states[:, i] for i, name in enumerate(names)}, run_meta)
