"""Transient bounds of the scalar CRM/ORM system as executable certificates.

Every certificate compares a value measured on a recorded trajectory with an
analytical bound. ``exact`` certificates follow from the Lyapunov analysis and
must pass; ``approximate`` ones rely on a modelling simplification; ``trend``
records are measurements whose bounds involve constants that are only known
to exist.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateFit, MissingChannel, MissingTruth, PreconditionViolated, UnknownChannel
from .spectral import dominant_harmonic
from .trajectory import numeric_derivative, quadrature_tail, truncated_l2

logger = logging.getLogger(__name__)

KINDS = ("exact", "approximate", "trend")


@dataclass(frozen=True)
class CertificateTolerance:
    """relative * |bound| + absolute, plus a quadrature allowance for integral bounds."""

    relative: float = 1e-6
    absolute: float = 1e-9
    quadrature: float = 1e-3

    @classmethod
    def from_config(cls, section, record_dt):
        section = section or {}
        return cls(
            float(section.get("rel_tol", 1e-6)),
            float(section.get("abs_tol", 1e-9)),
            float(section.get("quadrature_factor", 10.0)) * record_dt ** 2,
        )

    def allowance(self, bound, integral=False):
        extra = self.quadrature if integral else 0.0
        return self.relative * abs(bound) + self.absolute + extra


@dataclass(frozen=True)
class BoundCertificate:
    name: str
    measured: float
    bound: float
    margin: float
    passed: bool
    kind: str = "exact"
    detail: str = ""

    @property
    def enforced(self):
        return self.kind == "exact"

    def to_dict(self):
        return {
            "name": self.name,
            "measured": float(self.measured),
            "bound": float(self.bound),
            "margin": float(self.margin),
            "pass": bool(self.passed),
            "kind": self.kind,
            "detail": self.detail,
        }


def make_certificate(name, measured, bound, tol, integral=False, kind="exact", detail=""):
    measured, bound = float(measured), float(bound)
    passed = measured <= bound + tol.allowance(bound, integral)
    return BoundCertificate(name, measured, bound, bound - measured, passed, kind, detail)


def envelope_certificate(name, times, values, envelope, tol, kind="exact", detail=""):
    """Pointwise check values(t) <= envelope(t) at every sample; reports the tightest sample."""
    values = np.asarray(values, dtype=float)
    envelope = np.asarray(envelope, dtype=float)
    slack = envelope + tol.relative * np.abs(envelope) + tol.absolute - values
    worst = int(np.argmin(slack))
    note = f"tightest at t={times[worst]:.6g}"
    detail = f"{detail}; {note}" if detail else note
    return BoundCertificate(
        name, float(values[worst]), float(envelope[worst]), float(envelope[worst] - values[worst]),
        bool(slack[worst] >= 0.0), kind, detail,
    )


def trend_record(name, measured, detail=""):
    return BoundCertificate(name, float(measured), math.nan, math.nan, True, "trend", detail)


def all_enforced_pass(certificates):
    return all(c.passed for c in certificates if c.enforced)


def certificate_report(scenario_name, certificates, fits=None, metrics=None):
    """JSON-ready structure {scenario, passed, certificates, fits, metrics}."""
    return {
        "scenario": scenario_name,
        "passed": all_enforced_pass(certificates),
        "certificates": [c.to_dict() for c in certificates],
        "fits": fits or {},
        "metrics": metrics or {},
    }


def _require_channels(traj, names):
    for name in names:
        if name not in traj:
            raise MissingChannel(f"Trajectory lacks channel '{name}'")


def _scalar_loop(scenario):
    loop = getattr(scenario, "loop", None)
    if loop is None or getattr(loop, "gains", None) is None:
        raise MissingTruth("Certificate needs a scenario with known plant parameters")
    return loop


SCALAR_CHANNELS = ("x_p", "x_m", "x_m_o", "e", "theta", "k", "V", "int_e2", "int_theta_dot2", "int_k_dot2")


@dataclass(frozen=True)
class TransientConstants:
    """Constants of the peaking and tail bounds for one scalar scenario."""

    b1: float
    b2: float
    b3: float
    b4: float
    b5: float
    t1: float
    ell_star: float
    delta: float
    epsilon: float
    theta_max: float
    c1: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        data = {k: float(getattr(self, k)) for k in
                ("b1", "b2", "b3", "b4", "b5", "t1", "ell_star", "delta", "epsilon", "theta_max")}
        if self.c1 is not None and len(self.c1):
            data["c1_at_t1"] = float(self.c1[0])
            data["c1_at_end"] = float(self.c1[-1])
        return data


def ell_satisfies_threshold(ell, a_m, t1):
    """exp(-|a_m + ell| t1) <= |a_m + ell|^(-1/2)."""
    x = abs(a_m + ell)
    return x > 0 and -x * t1 + 0.5 * math.log(x) <= 1e-12


def ell_star(a_m, t1):
    """Threshold gain: every ell <= ell_star satisfies ``ell_satisfies_threshold``.

    With x = |a_m + ell|, the condition is h(x) = -x t1 + ln(x)/2 <= 0. h
    peaks at x = 1/(2 t1); beyond the peak it decreases, so the threshold is
    the root of h to the right of the peak (if the peak is positive).
    """
    if t1 <= 0:
        raise PreconditionViolated(f"t1 must be positive, got {t1}")

    def h(x):
        return -x * t1 + 0.5 * math.log(x)

    peak = 1.0 / (2.0 * t1)
    if h(peak) <= 0:
        x_star = 0.0
    else:
        upper = 2.0 * peak
        while h(upper) > 0:
            upper *= 2.0
        x_star = brentq(h, peak, upper, xtol=1e-14, rtol=1e-14)
    return min(0.0, -(x_star - abs(a_m)))


def select_t1(loop, delta=1.1, epsilon=0.1, horizon=math.inf):
    """Largest t such that the short-horizon growth factors stay below delta and epsilon.

    Uses b = a_m + |k_p| Theta_max and c = |k_m| + |k_p| Theta_max:
    exp(b t) <= delta and c (exp(b t) - 1) / b <= epsilon.
    """
    if delta <= 1 or epsilon <= 0:
        raise PreconditionViolated(f"need delta > 1 and epsilon > 0, got {delta}, {epsilon}")
    theta_max = loop.theta_max()
    kp = abs(loop.plant.k_p)
    b = loop.ref.a_m + kp * theta_max
    c = abs(loop.ref.k_m) + kp * theta_max
    t_delta = math.log(delta) / b if b > 0 else math.inf
    if c == 0:
        t_eps = math.inf
    elif b == 0:
        t_eps = epsilon / c
    else:
        arg = 1.0 + epsilon * b / c
        t_eps = math.log(arg) / b if arg > 0 else math.inf
    return min(t_delta, t_eps, horizon)


def transient_constants(traj, scenario, t1=None):
    loop = _scalar_loop(scenario)
    settings = getattr(scenario, "certificate_settings", {}) or {}
    delta = float(settings.get("delta", 1.1))
    epsilon = float(settings.get("epsilon", 0.1))
    if t1 is None:
        t1 = float(settings.get("tail_start", 0.5))
    a_m = loop.ref.a_m
    kp = abs(loop.plant.k_p)
    e0 = loop.x_p0 - loop.x_m0
    theta_err0 = float(np.linalg.norm(np.asarray(loop.adapt.theta0) - loop.gains.vector))
    theta_max = loop.theta_max()
    root = math.sqrt(abs(a_m))

    b1 = math.sqrt(e0 ** 2 / (2 * abs(a_m)))
    b2 = math.sqrt(kp * theta_err0 ** 2 / (2 * abs(a_m)))
    b3 = b2 + float(np.max(np.abs(traj.channel("x_m_o"))))
    b4 = abs(e0) / (2 * root)
    b5 = math.sqrt(kp) * theta_max / (2 * root)

    mask = traj.times >= t1 - 1e-12
    x_mo_t1 = abs(traj.value_at("x_m_o", t1))
    r_sup = loop.r.sup_norm
    decay = np.exp(a_m * (traj.times[mask] - t1))
    c1 = (x_mo_t1 * decay + abs(loop.ref.k_m) * r_sup / abs(a_m) * (1 - decay)) ** 2
    return TransientConstants(b1, b2, b3, b4, b5, t1, ell_star(a_m, t1), delta, epsilon, theta_max, c1)


def certify_scalar_run(traj, scenario):
    """Whole-horizon certificates of a scalar CRM/ORM run.

    e-L2, e-Linf, sup |dx_m|, its peaking form, k'-L2, theta'-L2, the
    Gronwall envelopes of V(t) and e(t)^2, the Lyapunov decrease, the
    short-horizon state bounds and, with ell = 0, the adaptation-speed
    trade-off bound.

    Raises:
        MissingChannel: A required channel is absent.
        MissingTruth: The scenario has no true plant parameters.
    """
    loop = _scalar_loop(scenario)
    _require_channels(traj, SCALAR_CHANNELS)
    tol = scenario.tolerance
    plant, ref, adapt = loop.plant, loop.ref, loop.adapt
    kp = abs(plant.k_p)
    gamma = adapt.gamma
    a = abs(ref.error_pole)
    ell = abs(ref.ell)
    t = traj.times
    e = traj.channel("e")
    e0 = float(e[0])
    v = traj.channel("V")
    v0 = float(v[0])
    r_sup = loop.r.sup_norm
    x_mo_sup = float(np.max(np.abs(traj.channel("x_m_o"))))
    theta_max = loop.theta_max()
    certs = []

    e_l2 = float(traj.channel("int_e2")[-1])
    certs.append(make_certificate("e_l2", e_l2, v0 / a, tol, integral=True, detail="int e^2 <= V(0)/|a_m+ell|"))
    certs.append(make_certificate("e_linf", float(np.max(e ** 2)), 2 * v0, tol, detail="max e^2 <= 2V(0)"))

    delta_x_m = np.abs(traj.channel("x_m") - traj.channel("x_m_o"))
    dxm_bound = ell * math.sqrt(1 / (2 * abs(ref.a_m))) * math.sqrt(v0 / a)
    certs.append(make_certificate("delta_x_m_sup", float(np.max(delta_x_m)), dxm_bound, tol,
                                  detail="|ell| sqrt(1/|2a_m|) sqrt(V(0)/|a_m+ell|)"))
    constants = transient_constants(traj, scenario)
    peaking_bound = constants.b1 * math.sqrt(ell) + constants.b2 * math.sqrt(ell / gamma)
    certs.append(make_certificate("delta_x_m_peaking", float(np.max(delta_x_m)), peaking_bound, tol,
                                  detail="b1 |ell|^(1/2) + b2 (|ell|/gamma)^(1/2)"))

    k_dot_l2 = float(traj.channel("int_k_dot2")[-1])
    certs.append(make_certificate("k_dot_l2", k_dot_l2, 2 * gamma ** 2 * r_sup ** 2 * v0 / a, tol, integral=True,
                                  detail="2 gamma^2 ||r||^2 V(0)/|a_m+ell|"))
    theta_dot_bound = (4 * gamma ** 2 * v0 * x_mo_sup ** 2 / a + 4 * gamma ** 2 * v0 ** 2 / a
                       + 2 * gamma ** 2 * ell ** 2 * v0 ** 2 / (abs(ref.a_m) * a ** 2))
    certs.append(make_certificate("theta_dot_l2", float(traj.channel("int_theta_dot2")[-1]), theta_dot_bound,
                                  tol, integral=True))

    decay = np.exp(-2 * a * t)
    offset = kp * theta_max ** 2 / (2 * gamma)
    certs.append(envelope_certificate("v_envelope", t, v, v0 * decay + offset * (1 - decay), tol,
                                      detail="V(0) e^(-2|a|t) + |k_p| Theta^2/(2 gamma)"))
    certs.append(envelope_certificate("e_envelope", t, e ** 2, 2 * v0 * decay + 2 * offset * (1 - decay), tol,
                                      detail="e^2 <= 2 V envelope"))

    increments = np.diff(v)
    worst = int(np.argmax(increments)) if increments.size else 0
    certs.append(make_certificate("v_monotone", float(increments[worst]) if increments.size else 0.0, 1e-8, tol,
                                  detail=f"max V(t_k+1) - V(t_k) at t={t[worst]:.6g}"))

    if ref.is_open_loop:
        tradeoff = e0 ** 2 + kp / gamma * float(np.sum((np.asarray(adapt.theta0) - loop.gains.vector) ** 2))
        certs.append(make_certificate("e_linf_tradeoff", float(np.max(e ** 2)), tradeoff, tol,
                                      detail="max e^2 <= e(0)^2 + |k_p|/gamma ||theta_err(0)||^2"))

    certs.extend(certify_short_horizon(traj, scenario))
    return certs


def certify_short_horizon(traj, scenario):
    """State bounds on [0, t1] with t1 from ``select_t1``."""
    loop = _scalar_loop(scenario)
    settings = getattr(scenario, "certificate_settings", {}) or {}
    delta = float(settings.get("delta", 1.1))
    epsilon = float(settings.get("epsilon", 0.1))
    tol = scenario.tolerance
    t1 = select_t1(loop, delta, epsilon, traj.times[-1])
    mask = traj.times <= t1 + 1e-12
    x_p0 = abs(loop.x_p0)
    r_sup = loop.r.sup_norm
    v0 = float(traj.channel("V")[0])
    base = delta * x_p0 + epsilon * r_sup
    note = f"t1={t1:.6g}"
    times = traj.times[mask]
    x_p = np.abs(traj.channel("x_p")[mask])
    x_m = np.abs(traj.channel("x_m")[mask])
    return [
        envelope_certificate("x_p_short_horizon", times, x_p, np.full_like(x_p, base), tol, detail=note),
        envelope_certificate("x_m_short_horizon", times, x_m, np.full_like(x_m, base + math.sqrt(2 * v0)), tol,
                             detail=note),
        envelope_certificate("x_m_sq_short_horizon", times, x_m ** 2, np.full_like(x_m, 2 * base ** 2 + 4 * v0),
                             tol, detail=note),
    ]


def truncated_certificates(traj, scenario, t1):
    """Tail bounds on [t1, T] for gamma = |ell| with projection.

    The infinite tail integral is replaced by the run horizon plus the
    remainder estimate |e(T)|^2 / (2|a_m + ell|).

    Raises:
        PreconditionViolated: No projection, gamma != |ell|, gamma < 1 or ell > ell*.
    """
    loop = _scalar_loop(scenario)
    _require_channels(traj, SCALAR_CHANNELS)
    plant, ref, adapt = loop.plant, loop.ref, loop.adapt
    gamma, ell = adapt.gamma, ref.ell
    if adapt.projection is None:
        raise PreconditionViolated("tail bounds need a projection set")
    if abs(gamma - abs(ell)) > 1e-12 * max(1.0, gamma):
        raise PreconditionViolated(f"tail bounds need gamma = |ell|, got gamma={gamma}, ell={ell}")
    if gamma < 1:
        raise PreconditionViolated(f"tail bounds need gamma >= 1, got {gamma}")
    threshold = ell_star(ref.a_m, t1)
    if ell > threshold:
        raise PreconditionViolated(f"ell={ell} exceeds ell*={threshold:.6g} for t1={t1}")

    tol = scenario.tolerance
    kp = abs(plant.k_p)
    a = abs(ref.error_pole)
    theta_max = adapt.projection.theta_max
    e = traj.channel("e")
    e0 = float(e[0])
    r_sup = loop.r.sup_norm
    remainder = float(e[-1]) ** 2 / (2 * a)
    certs = []

    e_tail = quadrature_tail(traj, "int_e2", t1) + remainder
    e_bound = (abs(e0) / (math.sqrt(2) * a) + math.sqrt(kp / (2 * gamma * a)) * theta_max) ** 2
    certs.append(make_certificate("e_tail_l2", e_tail, e_bound, tol, integral=True,
                                  detail=f"t1={t1}, remainder={remainder:.3g}"))
    k_tail = quadrature_tail(traj, "int_k_dot2", t1)
    certs.append(make_certificate("k_dot_tail_l2", k_tail, (e0 ** 2 + kp * theta_max ** 2) * r_sup ** 2, tol,
                                  integral=True, detail="(e(0)^2 + |k_p| Theta^2) ||r||^2"))
    certs.append(trend_record("theta_dot_tail_l2", quadrature_tail(traj, "int_theta_dot2", t1),
                              detail="non-increasing in gamma = |ell|"))

    constants = transient_constants(traj, scenario, t1)
    v0 = float(traj.channel("V")[0])
    dxm_bound = abs(ell) * math.sqrt(1 / (2 * abs(ref.a_m))) * math.sqrt(v0 / a)
    mask = traj.times >= t1 - 1e-12
    x_m_sq = traj.channel("x_m")[mask] ** 2
    certs.append(envelope_certificate("x_m_tail", traj.times[mask], x_m_sq, 2 * constants.c1 + 2 * dxm_bound ** 2,
                                      tol, detail="x_m^2 <= 2 c1(t) + 2 sup|dx_m|^2"))

    # dx_m(t) minus the decayed value at t1 is the convolution of -ell e over [t1, t]
    delta_x_m = traj.channel("x_m")[mask] - traj.channel("x_m_o")[mask]
    carried = (traj.value_at("x_m", t1) - traj.value_at("x_m_o", t1)) * np.exp(ref.a_m * (traj.times[mask] - t1))
    certs.append(make_certificate("delta_x_m_tail", float(np.max(np.abs(delta_x_m - carried))),
                                  constants.b4 + constants.b5 * math.sqrt(abs(ell) / gamma), tol,
                                  detail="b4 + b5 (|ell|/gamma)^(1/2)"))
    return certs


@dataclass(frozen=True)
class PeakingFit:
    ell_values: tuple
    peaks: tuple
    exponent: float
    intercept: float

    def to_dict(self):
        return {
            "ell_values": [float(v) for v in self.ell_values],
            "peaks": [float(v) for v in self.peaks],
            "exponent": float(self.exponent),
            "intercept": float(self.intercept),
        }


def peaking_exponent(ell_values, peaks):
    """Least-squares slope of log(peak) against log|ell|.

    Raises:
        DegenerateFit: Fewer than 3 points, non-positive peaks or no spread in |ell|.
    """
    ell = np.abs(np.asarray(ell_values, dtype=float))
    peaks = np.asarray(peaks, dtype=float)
    if ell.size < 3 or ell.size != peaks.size:
        raise DegenerateFit(f"need at least 3 (ell, peak) pairs, got {ell.size}")
    if np.any(ell <= 0) or np.any(peaks <= 0):
        raise DegenerateFit("|ell| values and peaks must be positive")
    log_ell = np.log(ell)
    if np.ptp(log_ell) == 0:
        raise DegenerateFit("|ell| values have zero variance")
    if np.ptp(np.log10(ell)) < 2:
        logger.warning(f"Peaking fit spans only {np.ptp(np.log10(ell)):.2f} decades of |ell|")
    slope, intercept = np.polyfit(log_ell, np.log(peaks), 1)
    return PeakingFit(tuple(ell_values), tuple(peaks.tolist()), float(slope), float(intercept))


@dataclass(frozen=True)
class OscillationMetrics:
    derivative_crossings: int
    l2_of_derivative: float
    peak_frequency: float
    peak_amplitude: float

    def to_dict(self):
        return {
            "derivative_crossings": int(self.derivative_crossings),
            "l2_of_derivative": float(self.l2_of_derivative),
            "spectral_peak": {"frequency": float(self.peak_frequency), "amplitude": float(self.peak_amplitude)},
        }


def count_sign_changes(values, band):
    """Sign changes of a sequence, ignoring excursions inside [-band, band]."""
    count = 0
    state = 0
    for v in values:
        if v > band:
            sign = 1
        elif v < -band:
            sign = -1
        else:
            continue
        if state and sign != state:
            count += 1
        state = sign
    return count


def oscillation_metrics(traj, channel, t_start=0.0):
    """Derivative zero crossings, derivative energy and dominant harmonic of a channel.

    Raises:
        MissingChannel: The channel is absent.
    """
    try:
        traj.channel(channel)
    except UnknownChannel:
        raise MissingChannel(f"Trajectory lacks channel '{channel}'") from None
    view = traj.window(t_start, traj.times[-1]) if t_start > traj.times[0] else traj
    derivative = numeric_derivative(view, channel)
    band = 1e-6 * float(np.ptp(derivative))
    crossings = count_sign_changes(derivative, band)
    energy = truncated_l2(view.with_channels({"_derivative": derivative}), "_derivative", view.times[0])
    tau = float(view.times[-1] - view.times[0])
    freq, amp = dominant_harmonic(view.channel(channel), tau, view.times)
    return OscillationMetrics(crossings, energy, freq, amp)
