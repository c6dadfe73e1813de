import math
import warnings
from types import SimpleNamespace

import numpy as np
import pytest

from crmlab_core import bounds
from crmlab_core.bounds import (
    CertificateTolerance,
    all_enforced_pass,
    certificate_report,
    count_sign_changes,
    ell_satisfies_threshold,
    ell_star,
    envelope_certificate,
    make_certificate,
    oscillation_metrics,
    peaking_exponent,
    select_t1,
    trend_record,
)
from crmlab_core.config_loader import default_config, merge_config
from crmlab_core.errors import DegenerateFit, MissingChannel, MissingTruth, PeriodicityWarning, PreconditionViolated
from crmlab_core.scenario import build_scenario
from crmlab_core.spectral import detrend_window, max_harmonics, parseval_identity
from crmlab_core.trajectory import Trajectory, quadrature_tail

TOL = CertificateTolerance(1e-6, 1e-9, 1e-3)


def _scenario(overrides=None):
    return build_scenario(merge_config(default_config(), overrides or {}))


class TestCertificates:
    def test_allowance(self):
        assert TOL.allowance(2.0) == pytest.approx(2e-6 + 1e-9)
        assert TOL.allowance(2.0, integral=True) == pytest.approx(2e-6 + 1e-9 + 1e-3)

    def test_quadrature_allowance_scales_with_record_spacing(self):
        tol = CertificateTolerance.from_config({"quadrature_factor": 10.0}, record_dt=0.01)
        assert tol.quadrature == pytest.approx(1e-3)

    def test_pass_and_fail(self):
        assert make_certificate("a", 1.0, 1.0, TOL).passed
        failed = make_certificate("b", 1.1, 1.0, TOL)
        assert not failed.passed
        assert failed.margin == pytest.approx(-0.1)

    def test_envelope_reports_tightest_sample(self):
        t = np.array([0.0, 1.0, 2.0])
        cert = envelope_certificate("env", t, [0.5, 0.9, 0.1], [1.0, 1.0, 1.0], TOL)
        assert cert.passed
        assert cert.measured == 0.9
        assert "t=1" in cert.detail

    def test_trend_records_are_not_enforced(self):
        certs = [make_certificate("a", 0.0, 1.0, TOL), trend_record("t", 42.0)]
        assert all_enforced_pass(certs)
        assert not certs[1].enforced

    def test_report_structure(self):
        report = certificate_report("run", [make_certificate("a", 2.0, 1.0, TOL)], {"f": 1}, {"m": 2})
        assert report["scenario"] == "run"
        assert report["passed"] is False
        assert report["certificates"][0]["pass"] is False
        assert report["certificates"][0]["kind"] == "exact"
        assert report["fits"] == {"f": 1}


class TestThresholds:
    def test_ell_star_for_short_window(self):
        threshold = ell_star(-1.0, 0.1)
        assert threshold == pytest.approx(-11.71, abs=0.05)
        for ell in (threshold, threshold - 1.0, -100.0, -1000.0):
            assert ell_satisfies_threshold(ell, -1.0, 0.1)
        assert not ell_satisfies_threshold(threshold + 0.5, -1.0, 0.1)

    def test_ell_star_is_zero_when_every_gain_qualifies(self):
        assert ell_star(-1.0, 0.5) == 0.0

    def test_ell_star_needs_positive_window(self):
        with pytest.raises(PreconditionViolated):
            ell_star(-1.0, 0.0)

    def test_select_t1_respects_growth_limits(self):
        scenario = _scenario()
        loop = scenario.loop
        t1 = select_t1(loop, delta=1.1, epsilon=0.1)
        theta_max = loop.theta_max()
        b = loop.ref.a_m + abs(loop.plant.k_p) * theta_max
        c = abs(loop.ref.k_m) + abs(loop.plant.k_p) * theta_max
        assert 0 < t1 < math.inf
        assert math.exp(b * t1) <= 1.1 * (1 + 1e-12)
        assert c * (math.exp(b * t1) - 1) / b <= 0.1 * (1 + 1e-12)

    def test_select_t1_capped_by_horizon(self):
        assert select_t1(_scenario().loop, horizon=1e-6) == 1e-6


class TestPeakingExponent:
    def test_square_root_growth(self):
        ells = [-10.0, -100.0, -1000.0]
        fit = peaking_exponent(ells, [3.0 * math.sqrt(abs(v)) for v in ells])
        assert fit.exponent == pytest.approx(0.5, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
        assert fit.to_dict()["ell_values"] == ells

    def test_two_points_are_degenerate(self):
        with pytest.raises(DegenerateFit):
            peaking_exponent([-10.0, -100.0], [1.0, 2.0])

    def test_non_positive_peak(self):
        with pytest.raises(DegenerateFit):
            peaking_exponent([-10.0, -100.0, -1000.0], [1.0, 0.0, 2.0])

    def test_no_spread(self):
        with pytest.raises(DegenerateFit):
            peaking_exponent([-10.0, -10.0, 10.0], [1.0, 2.0, 3.0])


class TestOscillation:
    def test_sign_changes_ignore_band(self):
        assert count_sign_changes([1.0, -1.0, 1.0, 0.0, -1.0], 0.0) == 3
        assert count_sign_changes([1.0, -0.01, 1.0], 0.1) == 0

    def test_five_hertz_sine(self):
        t = np.linspace(0.0, 2.0, 2001)
        traj = Trajectory(t, {"theta": np.sin(2 * math.pi * 5 * t)})
        metrics = oscillation_metrics(traj, "theta")
        assert 19 <= metrics.derivative_crossings <= 20
        assert metrics.peak_frequency == pytest.approx(5.0)
        assert metrics.peak_amplitude == pytest.approx(1.0, abs=1e-6)
        # integral of (10 pi cos(10 pi t))^2 over 2 s
        assert metrics.l2_of_derivative == pytest.approx(100 * math.pi ** 2, rel=1e-3)

    def test_constant_channel(self):
        traj = Trajectory(np.linspace(0.0, 1.0, 101), {"theta": np.full(101, 2.0)})
        metrics = oscillation_metrics(traj, "theta")
        assert metrics.derivative_crossings == 0
        assert metrics.l2_of_derivative == 0.0

    def test_missing_channel(self):
        traj = Trajectory([0.0, 1.0], {"x": [0.0, 1.0]})
        with pytest.raises(MissingChannel):
            oscillation_metrics(traj, "theta")


class TestScalarCertificates:
    def test_needs_true_parameters(self):
        traj = Trajectory([0.0, 1.0], {"e": [1.0, 0.0]})
        with pytest.raises(MissingTruth):
            bounds.certify_scalar_run(traj, SimpleNamespace(loop=None))

    def test_needs_channels(self):
        scenario = _scenario()
        traj = Trajectory([0.0, 1.0], {"e": [1.0, 0.0]})
        with pytest.raises(MissingChannel):
            bounds.certify_scalar_run(traj, scenario)

    def test_tail_bounds_need_projection(self):
        scenario = _scenario({"integrator": {"horizon": 1.0}})
        traj = scenario.simulate()
        with pytest.raises(PreconditionViolated, match="projection"):
            bounds.truncated_certificates(traj, scenario, 0.5)

    def test_tail_bounds_need_matched_gamma(self):
        scenario = _scenario({"integrator": {"horizon": 1.0}, "projection": {"enabled": True},
                              "adaptation": {"gamma": 10.0}})
        traj = scenario.simulate()
        with pytest.raises(PreconditionViolated, match="gamma"):
            bounds.truncated_certificates(traj, scenario, 0.5)

    def test_tail_bounds_with_projection(self):
        scenario = _scenario({"projection": {"enabled": True}})
        traj = scenario.simulate()
        certs, _, metrics = scenario.certify(traj)
        names = {c.name for c in certs}
        assert {"e_tail_l2", "k_dot_tail_l2", "theta_dot_tail_l2", "x_m_tail", "delta_x_m_tail"} <= names
        assert metrics["t1"] == 0.5
        assert [c.name for c in certs if c.enforced and not c.passed] == []
        assert np.max(np.abs(traj.channel("theta"))) <= 5.0 + 1e-6


@pytest.mark.slow
@pytest.mark.parametrize("gamma", [1.0, 10.0, 100.0])
@pytest.mark.parametrize("ell", [0.0, -10.0, -100.0])
def test_certificates_over_gain_grid(gamma, ell):
    family = "orm-scalar" if ell == 0 else "crm-scalar"
    scenario = _scenario({"scenario": {"family": family}, "reference": {"ell": ell},
                          "adaptation": {"gamma": gamma}})
    certs, _, _ = scenario.certify(scenario.simulate())
    assert [c.name for c in certs if c.enforced and not c.passed] == []
    if ell == 0:
        assert "e_linf_tradeoff" in {c.name for c in certs}


@pytest.mark.slow
def test_open_loop_parameter_window_energy_identity(figure_config):
    scenario = build_scenario(figure_config("fig3"))
    traj = scenario.simulate()
    times, samples = detrend_window(traj, "theta", 10.0, 15.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PeriodicityWarning)
        report = parseval_identity(samples, times[-1] - times[0], max_harmonics(samples.size), times)
    assert report.relative_gap < 0.05


@pytest.mark.slow
def test_closed_loop_model_damps_parameter_oscillation(figure_config):
    crossings = {}
    for name in ("fig3", "fig5"):
        traj = build_scenario(figure_config(name)).simulate()
        crossings[name] = oscillation_metrics(traj, "theta").derivative_crossings
    assert crossings["fig3"] > crossings["fig5"]


@pytest.mark.slow
def test_matched_gain_tail_parameter_energy_decreases_with_ell():
    tails = []
    for ell in (-1.0, -10.0, -100.0, -1000.0):
        scenario = _scenario({"reference": {"ell": ell}, "adaptation": {"gamma": abs(ell)},
                              "spectral": {"enabled": False}})
        traj = scenario.simulate()
        tails.append(quadrature_tail(traj, "int_theta_dot2", scenario.tail_start))
    assert all(later <= earlier * (1 + 1e-9) for earlier, later in zip(tails, tails[1:])), tails
