"""Recorded simulation output and the quadratures evaluated on it."""

import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .errors import Divergence, PreconditionViolated, TooFewSamples, UnknownChannel
from .file_system_manager import atomic_write_text

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


def _frozen(values):
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Trajectory:
    """Time series of named channels sampled on a common time grid.

    Attributes:
        times: Strictly increasing sample times in seconds.
        channels: Channel name to sample array, in declared (CSV) order.
        meta: Scenario identifier and integrator settings used.
    """

    times: np.ndarray
    channels: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = _frozen(self.times)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("Trajectory times must be a non-empty 1-D array")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("Trajectory times must be strictly increasing")
        channels = {}
        for name, samples in self.channels.items():
            arr = _frozen(samples)
            if arr.shape != times.shape:
                raise ValueError(f"Channel '{name}' has {arr.shape} samples, expected {times.shape}")
            if not np.all(np.isfinite(arr)):
                bad = int(np.argmax(~np.isfinite(arr)))
                raise Divergence(f"Channel '{name}' is non-finite at t={times[bad]:.6g}")
            channels[str(name)] = arr
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def names(self):
        return list(self.channels)

    def __len__(self):
        return self.times.size

    def __contains__(self, name):
        return name in self.channels

    def channel(self, name):
        try:
            return self.channels[name]
        except KeyError:
            raise UnknownChannel(f"Trajectory has no channel '{name}'") from None

    def with_channels(self, mapping, meta=None):
        """Return a new trajectory with channels added or replaced."""
        channels = dict(self.channels)
        channels.update(mapping)
        merged_meta = dict(self.meta)
        if meta:
            merged_meta.update(meta)
        return Trajectory(self.times, channels, merged_meta)

    def select(self, names):
        """Return a new trajectory holding only the named channels, in that order."""
        return Trajectory(self.times, {name: self.channel(name) for name in names}, self.meta)

    def window(self, t_start, t_end):
        mask = (self.times >= t_start - 1e-12) & (self.times <= t_end + 1e-12)
        if np.count_nonzero(mask) < 2:
            raise TooFewSamples(f"Window [{t_start}, {t_end}] holds fewer than 2 samples")
        return Trajectory(self.times[mask], {k: v[mask] for k, v in self.channels.items()}, self.meta)

    def value_at(self, name, t):
        """Linear interpolation of a channel at time t."""
        return float(np.interp(t, self.times, self.channel(name)))

    def to_csv_text(self):
        columns = [self.times] + [self.channels[name] for name in self.channels]
        buffer = io.StringIO()
        np.savetxt(
            buffer,
            np.column_stack(columns),
            fmt=CSV_FLOAT_FORMAT,
            delimiter=",",
            header=",".join(["t"] + self.names),
            comments="",
        )
        return buffer.getvalue()

    def to_csv(self, path):
        atomic_write_text(path, self.to_csv_text())
        logger.debug(f"Trajectory with {len(self)} samples written to {path}")

    @classmethod
    def from_csv(cls, path, meta=None):
        with open(path, "r") as f:
            header = f.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: first CSV column must be 't'")
        channels = {name: data[:, i + 1] for i, name in enumerate(header[1:])}
        return cls(data[:, 0], channels, meta or {})


def _squared_sum(traj, channel):
    names = [channel] if isinstance(channel, str) else list(channel)
    total = np.zeros_like(traj.times)
    for name in names:
        total = total + np.square(traj.channel(name))
    return total


def truncated_l2(traj, channel, t_start=0.0):
    """Squared truncated L2 norm of one channel (or the Euclidean norm of several).

    Computes the integral of f(t)^2 from t_start to the end of the trajectory
    with composite Simpson quadrature on the recorded grid. A t_start that
    falls between samples gets an interpolated node.

    Args:
        traj (Trajectory): Recorded run.
        channel (str | list[str]): Channel name, or names whose squares are summed.
        t_start (float): Lower integration limit in seconds.

    Returns:
        float: The non-negative integral.
    """
    times = traj.times
    names = [channel] if isinstance(channel, str) else list(channel)
    for name in names:
        traj.channel(name)
    tol = 1e-9 * max(1.0, abs(times[-1]))
    if t_start < times[0] - tol or t_start > times[-1] + tol:
        raise PreconditionViolated(f"t_start={t_start} outside [{times[0]}, {times[-1]}]")
    if t_start >= times[-1] - tol:
        return 0.0

    start = int(np.searchsorted(times, t_start - tol))
    if abs(times[start] - t_start) <= tol:
        nodes = times[start:]
        values = _squared_sum(traj, names)[start:]
    else:
        head = sum(np.interp(t_start, times, traj.channel(name)) ** 2 for name in names)
        nodes = np.concatenate(([t_start], times[start:]))
        values = np.concatenate(([head], _squared_sum(traj, names)[start:]))
    if nodes.size < 2:
        return 0.0
    return max(0.0, float(simpson(values, x=nodes)))


def trapezoid_increments(traj, channel):
    """Per-interval trapezoid integrals of the squared channel(s)."""
    values = _squared_sum(traj, channel)
    return 0.5 * (values[1:] + values[:-1]) * np.diff(traj.times)


def numeric_derivative(traj, channel):
    """Forward difference quotient of a channel, last value repeated.

    Returns:
        np.ndarray: Same length as the trajectory.
    """
    values = traj.channel(channel)
    if values.size < 2:
        raise TooFewSamples(f"Channel '{channel}' needs at least 2 samples for a derivative")
    slopes = np.diff(values) / np.diff(traj.times)
    return np.append(slopes, slopes[-1])


def quadrature_tail(traj, channel, t_start):
    """Increment of an integrated (quadrature-state) channel from t_start to the end."""
    values = traj.channel(channel)
    return max(0.0, float(values[-1] - np.interp(t_start, traj.times, values)))
