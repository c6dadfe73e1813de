"""Common shape of the closed-loop vector fields of every system family."""

import logging
from abc import ABC, abstractmethod

import numpy as np

from .integrator import integrate

logger = logging.getLogger(__name__)


class AdaptiveLoop(ABC):
    """Plant, reference model(s), controller and update law as one vector field.

    Subclasses declare ``state_names`` and ``channel_order``, implement
    ``initial_state``, ``rhs`` and ``derived_channels``. Quadrature states
    (names starting with ``int_``) integrate squared signals alongside the
    loop so that L2 certificates inherit the integrator's accuracy.
    """

    family = "abstract"
    state_names = ()
    channel_order = ()

    @abstractmethod
    def initial_state(self):
        """Return the initial state vector."""

    @abstractmethod
    def rhs(self, t, x):
        """Return dx/dt."""

    def derived_channels(self, traj):
        """Channels computed from the recorded state (e.g. errors, inputs, V)."""
        return {}

    def __call__(self, t, x):
        return self.rhs(t, x)

    def simulate(self, cfg, meta=None):
        """Integrate the loop and return the trajectory in CSV channel order."""
        run_meta = {"family": self.family}
        run_meta.update(meta or {})
        raw = integrate(self.rhs, self.initial_state(), cfg, names=list(self.state_names), meta=run_meta)
        full = raw.with_channels(self.derived_channels(raw))
        order = [name for name in self.channel_order if name in full] + [
            name for name in full.names if name not in self.channel_order
        ]
        logger.debug(f"{self.family} loop simulated: {len(full)} samples, {len(order)} channels")
        return full.select(order)

    def states_at(self, traj):
        """Recorded state matrix (samples x states) in state_names order."""
        return np.column_stack([traj.channel(name) for name in self.state_names])
