"""Reference inputs r(t) shared by every system family."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("step", "sine", "square", "zero", "filtered_step")


@dataclass(frozen=True)
class ReferenceSignal:
    """Bounded, piecewise continuous reference input.

    ``filtered_step`` is a step of the given amplitude passed through a
    first-order filter with time constant ``time_constant``, starting at
    ``onset``. ``sine`` uses angular frequency ``omega`` in rad/s.
    """

    kind: str = "step"
    amplitude: float = 1.0
    onset: float = 0.0
    omega: float = 1.0
    phase: float = 0.0
    offset: float = 0.0
    time_constant: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"input.kind: must be one of {', '.join(KINDS)}, got '{self.kind}'")
        if self.kind == "filtered_step" and self.time_constant <= 0:
            raise ConfigError(f"input.time_constant: must be positive, got {self.time_constant}")
        if self.onset < 0:
            raise ConfigError(f"input.onset: must be >= 0, got {self.onset}")

    @classmethod
    def from_config(cls, section):
        section = dict(section or {})
        kwargs = {"kind": str(section.pop("kind", "step"))}
        for key in ("amplitude", "onset", "omega", "phase", "offset", "time_constant"):
            if key in section:
                kwargs[key] = float(section[key])
        return cls(**kwargs)

    def __call__(self, t):
        if self.kind == "zero":
            return 0.0
        if self.kind == "sine":
            return self.offset + self.amplitude * math.sin(self.omega * t + self.phase)
        if t < self.onset:
            return self.offset
        if self.kind == "step":
            return self.offset + self.amplitude
        if self.kind == "square":
            return self.offset + self.amplitude * (1.0 if math.sin(self.omega * (t - self.onset)) >= 0 else -1.0)
        return self.offset + self.amplitude * (1.0 - math.exp(-(t - self.onset) / self.time_constant))

    def derivative(self, t, order):
        """Analytic time derivative of the given order (order 0 is the value)."""
        if order == 0:
            return self(t)
        if self.kind == "sine":
            return self.amplitude * self.omega ** order * math.sin(self.omega * t + self.phase + order * math.pi / 2)
        if self.kind == "filtered_step" and t >= self.onset:
            decay = math.exp(-(t - self.onset) / self.time_constant)
            return self.amplitude * -((-1.0 / self.time_constant) ** order) * decay
        return 0.0

    def derivatives(self, t, count):
        """Values y_r, y_r', ..., y_r^(count) at time t."""
        return [self.derivative(t, k) for k in range(count + 1)]

    @property
    def sup_norm(self):
        if self.kind == "zero":
            return 0.0
        if self.kind in ("step", "filtered_step"):
            return max(abs(self.offset), abs(self.offset + self.amplitude))
        return abs(self.offset) + abs(self.amplitude)

    @property
    def smooth(self):
        """True when derivatives of every order exist for all t."""
        return self.kind in ("sine", "zero") or (self.kind == "step" and self.onset == 0.0)


@dataclass(frozen=True)
class BroadcastReference:
    """The same scalar reference applied to each of ``width`` input channels."""

    signal: ReferenceSignal
    width: int

    def __call__(self, t):
        return np.full(self.width, self.signal(t))

    @property
    def sup_norm(self):
        return math.sqrt(self.width) * self.signal.sup_norm
