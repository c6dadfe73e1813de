"""Turns a loaded configuration into a runnable, certifiable scenario.

Validation happens here, before any integration: every rejected value is
reported as ``ConfigError`` with the offending ``section.key``.
"""

import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import backstepping, bounds, cmrac_co, mimo_crm, robot
from .bounds import CertificateTolerance
from .errors import ConfigError, PeriodicityWarning, PreconditionViolated, TooFewSamples, Undersampled
from .integrator import IntegratorConfig
from .projection import ProjectionSet
from .reference_signals import BroadcastReference, ReferenceSignal
from .scalar_crm import AdaptationConfig, ReferenceModel, ScalarPlant, crm_loop
from .spectral import detrend_window, max_harmonics, parseval_identity

logger = logging.getLogger(__name__)

FAMILIES = ("orm-scalar", "crm-scalar", "mimo", "cmrac", "cmrac-co", "backstepping", "robot")


def _section(config, name):
    value = config.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: must be a mapping, got {type(value).__name__}")
    return value


def _number(section, prefix, key, default=None):
    value = section.get(key, default)
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{prefix}.{key}: must be a number, got {value!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{prefix}.{key}: must be finite, got {value}")
    return value


def _array(section, prefix, key, default=None):
    value = section.get(key, default)
    if value is None:
        return None
    try:
        array = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{prefix}.{key}: must be numeric, got {value!r}") from None
    if not np.all(np.isfinite(array)):
        raise ConfigError(f"{prefix}.{key}: must be finite")
    return array


def threshold_time(rate):
    """Smallest t with exp(-rate t) <= rate^(-1/2); zero when rate <= 1."""
    rate = abs(rate)
    if rate <= 1.0:
        return 0.0
    return math.log(rate) / (2.0 * rate)


@dataclass
class Scenario:
    """One configured run: the loop, its integrator and its certificate settings."""

    name: str
    family: str
    seed: int
    integrator: IntegratorConfig
    loop: object
    tolerance: CertificateTolerance
    certificate_settings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict, repr=False)

    @property
    def tail_start(self):
        return float(self.certificate_settings.get("tail_start", 0.5))

    def simulate(self):
        return self.loop.simulate(self.integrator, meta={"scenario": self.name, "seed": self.seed})

    def certify(self, traj):
        """Certificates, fits and metrics of one trajectory.

        Returns:
            tuple: (list of BoundCertificate, dict of fits, dict of metrics)
        """
        handler = {
            "orm-scalar": self._certify_scalar,
            "crm-scalar": self._certify_scalar,
            "mimo": self._certify_mimo,
            "cmrac": self._certify_cmrac,
            "cmrac-co": self._certify_cmrac,
            "backstepping": self._certify_backstepping,
            "robot": self._certify_robot,
        }[self.family]
        return handler(traj)

    def _skip(self, what, err):
        logger.info(f"Skipping {what} for scenario {self.name}: {err}")

    def _certify_scalar(self, traj):
        loop = self.loop
        certs = bounds.certify_scalar_run(traj, self)
        metrics = {}
        adapt, ref = loop.adapt, loop.ref
        if adapt.projection is not None and abs(adapt.gamma - abs(ref.ell)) <= 1e-12 * max(1.0, adapt.gamma):
            t1 = max(self.tail_start, threshold_time(ref.error_pole))
            try:
                certs.extend(bounds.truncated_certificates(traj, self, t1))
                metrics["t1"] = t1
            except PreconditionViolated as e:
                self._skip("tail certificates", e)
        delta_x_m = np.abs(traj.channel("delta_x_m"))
        metrics["peak_delta_x_m"] = float(np.max(delta_x_m))
        metrics["final_error"] = float(abs(traj.channel("e")[-1]))
        metrics["theta_dot_l2"] = float(traj.channel("int_theta_dot2")[-1])
        metrics["theta_dot_tail_l2"] = float(traj.channel("int_theta_dot2")[-1]
                                             - traj.value_at("int_theta_dot2", self.tail_start))
        metrics["oscillation"] = bounds.oscillation_metrics(traj, "theta").to_dict()
        spectral = self._spectral_report(traj)
        if spectral is not None:
            metrics["spectral"] = spectral
        return certs, {}, metrics

    def _spectral_report(self, traj):
        section = _section(self.config, "spectral")
        if not section.get("enabled", True):
            return None
        channel = str(section.get("channel", "theta"))
        t_start, t_end = (float(v) for v in section.get("window", (10.0, 15.0)))
        t_end = min(t_end, float(traj.times[-1]))
        if t_end <= t_start:
            self._skip("spectral report", f"window [{t_start}, {t_end}] is empty")
            return None
        try:
            times, samples = detrend_window(traj, channel, t_start, t_end)
            N = max_harmonics(samples.size, int(section.get("max_harmonics", 256)))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", PeriodicityWarning)
                report = parseval_identity(samples, float(times[-1] - times[0]), N, times)
        except (TooFewSamples, Undersampled) as e:
            self._skip("spectral report", e)
            return None
        data = report.to_dict()
        data.update({"channel": channel, "window": [t_start, t_end]})
        return data

    def _certify_mimo(self, traj):
        loop = self.loop
        gains, ref = loop.gains, loop.ref
        certs = None
        if gains.theta_projection is not None and gains.k_projection is not None:
            t2 = max(self.tail_start, threshold_time(ref.g))
            try:
                certs = mimo_crm.certify_mimo_run(traj, self, t2)
            except PreconditionViolated as e:
                self._skip("MIMO tail certificates", e)
        if certs is None:
            certs = mimo_crm.certify_mimo_basic(traj, self)
        errors = np.column_stack([traj.channel(name) for name in loop.error_names])
        metrics = {
            "final_error_norm": float(np.linalg.norm(errors[-1])),
            "theta_dot_tail_l2": float(traj.channel("int_Theta_dot2")[-1]
                                       - traj.value_at("int_Theta_dot2", self.tail_start)),
            "peak_delta_x_m": float(np.max(np.linalg.norm(
                np.column_stack([traj.channel(f"x_m_{i + 1}") - traj.channel(f"x_m_o_{i + 1}")
                                 for i in range(loop.plant.n)]), axis=1))),
        }
        return certs, {}, metrics

    def _certify_cmrac(self, traj):
        cfg = self.loop.cfg
        metrics = {"variant": cfg.variant, "region_metrics": cmrac_co.variant_metrics(traj, cfg).to_dict()}
        final = {name: float(abs(traj.channel(name)[-1])) for name in ("e_m", "e_o", "eps_theta")}
        metrics["final_errors"] = final
        if cfg.variant == "CMRAC_CO":
            t3 = max(self.tail_start, threshold_time(cfg.g_n))
            certs = cmrac_co.certify_cmracco_run(traj, self, t3)
            metrics.update({"g_theta": cfg.g_theta, "g_n": cfg.g_n, "coupling_ratio": cmrac_co.coupling_ratio(cfg)})
        else:
            certs = cmrac_co.certify_containment(traj, self)
        if _section(self.config, "cmrac").get("compare", False):
            metrics["comparison"] = self._compare_variants(traj)
        return certs, {}, metrics

    def _compare_variants(self, traj):
        cfg = self.loop.cfg
        other_cfg = dataclasses.replace(cfg, variant="CMRAC" if cfg.variant == "CMRAC_CO" else "CMRAC_CO")
        other = cmrac_co.cmracco_loop(other_cfg).simulate(
            self.integrator, meta={"scenario": f"{self.name}:{other_cfg.variant}", "seed": self.seed})
        if cfg.variant == "CMRAC_CO":
            comparison = cmrac_co.compare_variants(traj, cfg, other, other_cfg)
        else:
            comparison = cmrac_co.compare_variants(other, other_cfg, traj, cfg)
        return comparison.to_dict()

    def _certify_backstepping(self, traj):
        certs = backstepping.certify_backstepping_run(traj, self)
        n = self.loop.system.n
        z_final = [float(traj.channel(f"z_{i + 1}")[-1]) for i in range(n)]
        return certs, {}, {"final_z_norm": float(np.linalg.norm(z_final))}

    def _certify_robot(self, traj):
        certs = robot.certify_robot_run(traj, self)
        q_tilde = [float(traj.channel(f"q_tilde_{i + 1}")[-1]) for i in range(2)]
        return certs, {}, {"final_tracking_error": float(np.linalg.norm(q_tilde))}


def _scalar_loop(config, family, integrator):
    plant_cfg = _section(config, "plant")
    ref_cfg = _section(config, "reference")
    adapt_cfg = _section(config, "adaptation")
    plant = ScalarPlant(_number(plant_cfg, "plant", "a_p"), _number(plant_cfg, "plant", "k_p"))
    ell = _number(ref_cfg, "reference", "ell", 0.0)
    if family == "orm-scalar" and ell != 0:
        raise ConfigError(f"reference.ell: must be 0 for the orm-scalar family, got {ell}")
    ref = ReferenceModel(_number(ref_cfg, "reference", "a_m"), _number(ref_cfg, "reference", "k_m"), ell)
    gamma = _number(adapt_cfg, "adaptation", "gamma")
    theta0 = _array(adapt_cfg, "adaptation", "theta0", (0.0, 0.0))
    adapt = AdaptationConfig(gamma, tuple(np.ravel(theta0)), ProjectionSet.from_config(_section(config, "projection")))
    integrator.check_step_rule(gamma, ell)
    r = ReferenceSignal.from_config(_section(config, "input"))
    return crm_loop(plant, ref, adapt, r, x_p0=_number(plant_cfg, "plant", "x0", 1.0),
                    x_m0=_number(ref_cfg, "reference", "x0", 0.0))


def _mimo_loop(config, integrator):
    section = _section(config, "mimo")
    plant = mimo_crm.MimoPlant(_array(section, "mimo", "A"), _array(section, "mimo", "B"),
                               _array(section, "mimo", "Lambda"), _number(section, "mimo", "lambda_bar"))
    ref = mimo_crm.MimoReference(_array(section, "mimo", "A_m"), _number(section, "mimo", "g"))
    if ref.n != plant.n:
        raise ConfigError(f"mimo.A_m: expected {plant.n} states, got {ref.n}")
    Theta_star, K_star = mimo_crm.mimo_matched_gains(plant, ref.A_m)
    smoothing = _number(section, "mimo", "smoothing", 0.1)
    psets = []
    for key in ("theta_radius", "k_radius"):
        radius = section.get(key)
        psets.append(None if radius is None else ProjectionSet(_number(section, "mimo", key), smoothing))
    gamma = _number(section, "mimo", "gamma")
    gains = mimo_crm.MimoGains(Theta_star, K_star, gamma, psets[0], psets[1])
    integrator.check_step_rule(gamma, ref.g)
    r = BroadcastReference(ReferenceSignal.from_config(_section(config, "input")), plant.m)
    return mimo_crm.mimo_crm_loop(
        plant, ref, gains, r,
        x_p0=_array(section, "mimo", "x_p0"),
        x_m0=_array(section, "mimo", "x_m0"),
        Theta0=_array(section, "mimo", "Theta0"),
        K0=_array(section, "mimo", "K0"),
        L=_array(section, "mimo", "L"),
        Gamma=_array(section, "mimo", "Gamma"),
    )


def _cmrac_config(config, family, seed, integrator):
    plant_cfg = _section(config, "plant")
    ref_cfg = _section(config, "reference")
    section = _section(config, "cmrac")
    proj_cfg = _section(config, "projection")
    noise = cmrac_co.NoiseModel.from_config(_section(config, "noise"), seed=seed)
    x_o0 = section.get("x_o0")
    gamma = _number(_section(config, "adaptation"), "adaptation", "gamma")
    ell = _number(ref_cfg, "reference", "ell", 0.0)
    if ell > 0:
        raise ConfigError(f"reference.ell: must be <= 0, got {ell}")
    integrator.check_step_rule(gamma, ell)
    return cmrac_co.CmracConfig(
        a_p=_number(plant_cfg, "plant", "a_p"),
        k_p=_number(plant_cfg, "plant", "k_p"),
        a_m=_number(ref_cfg, "reference", "a_m"),
        k_m=_number(ref_cfg, "reference", "k_m"),
        ell=ell,
        gamma=gamma,
        eta=_number(section, "cmrac", "eta", 1.0),
        projection=ProjectionSet(_number(proj_cfg, "projection", "theta_bound", 5.0),
                                 _number(proj_cfg, "projection", "smoothing", 0.1)),
        variant="CMRAC_CO" if family == "cmrac-co" else "CMRAC",
        region_switch=_number(section, "cmrac", "region_switch", 4.0),
        horizon=integrator.horizon,
        filter_time_constant=_number(section, "cmrac", "filter_time_constant", 0.5),
        step_amplitude=_number(section, "cmrac", "step_amplitude", 1.0),
        x_a0=_number(section, "cmrac", "x_a0", 1.0),
        x_o0=None if x_o0 is None else _number(section, "cmrac", "x_o0"),
        x_m0=_number(section, "cmrac", "x_m0", 0.0),
        theta0=_number(section, "cmrac", "theta0", 0.0),
        theta_hat0=_number(section, "cmrac", "theta_hat0", 0.0),
        noise=noise,
        use_truth=bool(section.get("use_truth", True)),
    )


def _backstepping_loop(config):
    section = _section(config, "backstepping")
    phi_cfg = section.get("phi")
    if not isinstance(phi_cfg, (list, tuple)) or not phi_cfg:
        raise ConfigError("backstepping.phi: must be a non-empty list with one regressor per state")
    n = len(phi_cfg)
    phi = tuple(tuple(backstepping.Polynomial.from_config(component, n) for component in row) for row in phi_cfg)
    system = backstepping.StrictFeedbackSystem(
        phi, backstepping.Polynomial.from_config(section.get("beta", 1.0), n),
        _array(section, "backstepping", "theta_star"),
    )
    design = backstepping.BacksteppingDesign(tuple(np.ravel(_array(section, "backstepping", "c"))),
                                             _array(section, "backstepping", "Gamma"))
    y_r = ReferenceSignal.from_config(_section(config, "input"))
    if not y_r.smooth:
        raise ConfigError(f"input.kind: backstepping needs a smooth reference, got '{y_r.kind}' "
                          f"with onset {y_r.onset}")
    return backstepping.backstepping_loop(system, design, y_r, _array(section, "backstepping", "x0"),
                                          _array(section, "backstepping", "theta0"))


def _robot_loop(config):
    section = _section(config, "robot")
    model = robot.RobotModel(*(_number(section, "robot", key) for key in ("m1", "m2", "l1", "l2")),
                             g0=_number(section, "robot", "g0", robot.GRAVITY))
    controller = robot.RobotController(_number(section, "robot", "lambda", 5.0),
                                       _array(section, "robot", "k_d"), _array(section, "robot", "Gamma"))
    return robot.robot_loop(model, controller, q0=_array(section, "robot", "q0", (0.3, 0.7)),
                            qd0=_array(section, "robot", "qd0", (0.0, 0.0)),
                            a_hat0=_array(section, "robot", "a_hat0"))


def build_scenario(config):
    """Validates a configuration and assembles its scenario.

    Args:
        config (dict): Output of ``load_config`` (defaults merged).

    Returns:
        Scenario: Ready to simulate and certify.

    Raises:
        ConfigError: A field is missing, malformed or violates a family precondition.
        UnstableGain: CMRAC-CO with g_theta >= 0.
        NoMatch: MIMO plant and reference model admit no matching gains.
        AssumptionViolated: MIMO L or Gamma given in a non-structured form.
        UnsupportedOrder: Backstepping order outside 1..3.
    """
    scenario_cfg = _section(config, "scenario")
    family = str(scenario_cfg.get("family", "crm-scalar"))
    if family not in FAMILIES:
        raise ConfigError(f"scenario.family: must be one of {', '.join(FAMILIES)}, got '{family}'")
    name = str(scenario_cfg.get("name") or family)
    seed = scenario_cfg.get("seed", 42)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"scenario.seed: must be an integer, got {seed!r}") from None
    integrator = IntegratorConfig.from_config(_section(config, "integrator"))
    cert_cfg = _section(config, "certificates")

    if family in ("orm-scalar", "crm-scalar"):
        loop = _scalar_loop(config, family, integrator)
    elif family == "mimo":
        loop = _mimo_loop(config, integrator)
    elif family in ("cmrac", "cmrac-co"):
        loop = cmrac_co.cmracco_loop(_cmrac_config(config, family, seed, integrator))
    elif family == "backstepping":
        loop = _backstepping_loop(config)
    else:
        loop = _robot_loop(config)

    settings = {
        "delta": _number(cert_cfg, "certificates", "delta", 1.1),
        "epsilon": _number(cert_cfg, "certificates", "epsilon", 0.1),
        "tail_start": _number(cert_cfg, "certificates", "tail_start", 0.5),
    }
    if not 0 <= settings["tail_start"] < integrator.horizon:
        raise ConfigError(f"certificates.tail_start: must lie in [0, {integrator.horizon}), "
                          f"got {settings['tail_start']}")
    scenario = Scenario(name, family, seed, integrator, loop,
                        CertificateTolerance.from_config(cert_cfg, integrator.record_dt), settings, config)
    logger.info(f"Built scenario '{name}' (family={family}, method={integrator.method}, "
                f"horizon={integrator.horizon}, seed={seed})")
    return scenario
