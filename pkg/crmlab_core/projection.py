"""Smooth parameter projection onto a ball centred at the origin."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, OutsideSet

CONTAINMENT_TOL = 1e-9


@dataclass(frozen=True)
class ProjectionSet:
    """Closed ball of radius theta_bound with a boundary layer of relative width smoothing.

    Works for vectors and, with the Frobenius norm, for matrices.
    """

    theta_bound: float
    smoothing: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.theta_bound) and self.theta_bound > 0):
            raise ConfigError(f"projection.theta_bound: must be positive, got {self.theta_bound}")
        if not 0 < self.smoothing < 1:
            raise ConfigError(f"projection.smoothing: must lie in (0, 1), got {self.smoothing}")

    @property
    def theta_max(self):
        """Largest parameter error inside the set when the true parameter is also inside."""
        return 2.0 * self.theta_bound

    def contains(self, theta, tol=CONTAINMENT_TOL):
        return float(np.linalg.norm(np.asarray(theta, dtype=float))) <= self.theta_bound + tol

    def boundary_function(self, theta):
        """Convex function that is 0 on the inner ball and 1 on the boundary."""
        norm2 = float(np.sum(np.square(theta)))
        bound2 = self.theta_bound ** 2
        return (norm2 - bound2 * (1.0 - self.smoothing)) / (self.smoothing * bound2)

    @classmethod
    def from_config(cls, section):
        section = section or {}
        if not section.get("enabled", False):
            return None
        return cls(float(section.get("theta_bound", 5.0)), float(section.get("smoothing", 0.1)))


def project(update, theta, pset, strict=True):
    """Project a parameter velocity so the flow never leaves the set.

    Inside the inner ball, or when the update points inward, the update is
    returned unchanged. In the boundary layer the outward radial component is
    scaled by 1 - f(theta), reaching full removal on the boundary.

    Args:
        update: Unprojected parameter velocity (vector or matrix).
        theta: Current parameter value, same shape as update.
        pset (ProjectionSet): The set; None disables projection.
        strict (bool): Raise OutsideSet when theta is outside the set.

    Returns:
        np.ndarray: The projected velocity, continuous in (update, theta).
    """
    y = np.asarray(update, dtype=float)
    if pset is None:
        return y
    th = np.asarray(theta, dtype=float)
    if strict and not pset.contains(th):
        raise OutsideSet(
            f"||theta||={np.linalg.norm(th):.12g} exceeds bound {pset.theta_bound} (tol {CONTAINMENT_TOL})"
        )
    f = pset.boundary_function(th)
    if f <= 0.0:
        return y
    radial = float(np.sum(th * y))
    if radial <= 0.0:
        return y
    f = min(f, 1.0)
    return y - f * (radial / float(np.sum(th * th))) * th
