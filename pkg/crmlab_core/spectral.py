"""Fourier coefficients, truncated reconstruction and the derivative-energy identity.

For a tau-periodic signal f with coefficients F(n), the integral of f'(t)^2
over one period equals sum_n |F(n)|^2 (2 pi n)^2 / tau. The functions here
evaluate both sides from samples so the identity can be checked on test
signals and used as a lens on post-transient windows of adaptive runs.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import PeriodicityWarning, TooFewSamples, Undersampled

logger = logging.getLogger(__name__)

PERIODICITY_TOL = 1e-6


def _sample_times(samples, tau, times):
    if times is None:
        return np.linspace(0.0, tau, samples.size)
    times = np.asarray(times, dtype=float)
    if times.shape != samples.shape:
        raise ValueError("times and samples must have the same shape")
    return times - times[0]


def _check_sampling(samples, N):
    if N < 0:
        raise ValueError(f"N must be >= 0, got {N}")
    needed = 4 * N + 4
    if samples.size < needed:
        raise Undersampled(f"{samples.size} samples per period, need at least {needed} for N={N}")


def harmonic_indices(N):
    return np.arange(-N, N + 1)


def fourier_coefficients(samples, tau, N, times=None):
    """F(n) = (1/tau) * integral of f(t) exp(-i 2 pi n t / tau) over one period, |n| <= N.

    Args:
        samples: Uniform samples over one period, both endpoints included.
        tau (float): Period in seconds.
        N (int): Highest harmonic.
        times: Optional sample times; shifted so the window starts at 0.

    Returns:
        np.ndarray: Complex coefficients ordered n = -N..N.

    Raises:
        Undersampled: Fewer than 4N+4 samples.
    """
    f = np.asarray(samples, dtype=float)
    _check_sampling(f, N)
    t = _sample_times(f, tau, times)
    n = harmonic_indices(N)
    kernel = np.exp(-2j * np.pi * np.outer(n, t) / tau)
    return trapezoid(kernel * f, t, axis=1) / tau


def reconstruct(coefficients, tau, t):
    N = (len(coefficients) - 1) // 2
    n = harmonic_indices(N)
    t = np.asarray(t, dtype=float)
    return np.real(np.exp(2j * np.pi * np.outer(t, n) / tau) @ coefficients)


def truncation_error(samples, tau, N, times=None):
    """Sup over the window of |f - sum_{|n|<=N} F(n) exp(i omega(n) t)|."""
    f = np.asarray(samples, dtype=float)
    coefficients = fourier_coefficients(f, tau, N, times)
    t = _sample_times(f, tau, times)
    return float(np.max(np.abs(f - reconstruct(coefficients, tau, t))))


@dataclass(frozen=True)
class SpectralReport:
    tau: float
    harmonics: np.ndarray
    coefficients: np.ndarray
    harmonic_energies: np.ndarray
    identity_lhs: float
    identity_rhs: float
    relative_gap: float
    periodic: bool = True

    @property
    def omega(self):
        return 2.0 * np.pi * self.harmonics / self.tau

    def to_dict(self):
        return {
            "tau": float(self.tau),
            "N": int(self.harmonics[-1]),
            "identity_lhs": float(self.identity_lhs),
            "identity_rhs": float(self.identity_rhs),
            "relative_gap": float(self.relative_gap),
            "periodic": bool(self.periodic),
            "coefficients": [
                {"n": int(n), "re": float(c.real), "im": float(c.imag)}
                for n, c in zip(self.harmonics, self.coefficients)
            ],
        }


def parseval_identity(samples, tau, N, times=None):
    """Evaluate both sides of the derivative-energy identity.

    The left side differentiates the samples (second-order differences) and
    integrates the square with the trapezoid rule; the right side sums the
    harmonic energies |F(n)|^2 (2 pi n)^2 / tau. A window whose end value
    differs from its start by more than 1e-6 of the signal range emits a
    PeriodicityWarning.
    """
    f = np.asarray(samples, dtype=float)
    _check_sampling(f, N)
    t = _sample_times(f, tau, times)

    spread = float(np.ptp(f))
    periodic = abs(f[-1] - f[0]) <= PERIODICITY_TOL * max(spread, np.finfo(float).tiny)
    if not periodic:
        warnings.warn(
            f"Window endpoints differ by {abs(f[-1] - f[0]):.3g} (range {spread:.3g}); "
            "the periodic identity is only approximate",
            PeriodicityWarning,
            stacklevel=2,
        )

    coefficients = fourier_coefficients(f, tau, N, t)
    n = harmonic_indices(N)
    energies = np.abs(coefficients) ** 2 * (2.0 * np.pi * n) ** 2 / tau
    lhs = float(trapezoid(np.gradient(f, t, edge_order=2) ** 2, t))
    rhs = float(np.sum(energies))
    scale = max(abs(lhs), abs(rhs))
    gap = abs(lhs - rhs) / scale if scale > 0 else 0.0
    return SpectralReport(tau, n, coefficients, energies, lhs, rhs, gap, periodic)


def amplitude_spectrum(report):
    """Rows (frequency in Hz, one-sided amplitude 2|F(n)|) for n >= 1."""
    positive = report.harmonics > 0
    freqs = report.harmonics[positive] / report.tau
    amps = 2.0 * np.abs(report.coefficients[positive])
    return np.column_stack([freqs, amps])


def detrend_window(traj, channel, t_start, t_end):
    """Samples of a channel on [t_start, t_end] minus the line through the window endpoints.

    Returns:
        tuple: (times, detrended samples)
    """
    window = traj.window(t_start, t_end)
    t = window.times
    f = window.channel(channel)
    if t.size < 2:
        raise TooFewSamples(f"Window [{t_start}, {t_end}] holds fewer than 2 samples")
    line = f[0] + (f[-1] - f[0]) * (t - t[0]) / (t[-1] - t[0])
    return t, f - line


def max_harmonics(sample_count, cap=256):
    """Largest N allowed by the 4N+4 sampling rule, capped."""
    return max(0, min(cap, (sample_count - 4) // 4))


def dominant_harmonic(samples, tau, times=None, cap=256):
    """(frequency in Hz, amplitude) of the strongest non-zero harmonic."""
    f = np.asarray(samples, dtype=float)
    N = max_harmonics(f.size, cap)
    if N < 1:
        return 0.0, 0.0
    coefficients = fourier_coefficients(f, tau, N, times)
    positive = coefficients[N + 1:]
    index = int(np.argmax(np.abs(positive)))
    return (index + 1) / tau, 2.0 * float(np.abs(positive[index]))
