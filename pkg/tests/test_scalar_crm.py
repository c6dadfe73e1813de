import numpy as np
import pytest

from crmlab_core.bounds import all_enforced_pass
from crmlab_core.config_loader import default_config, merge_config
from crmlab_core.errors import ConfigError, ZeroInputGain
from crmlab_core.projection import ProjectionSet
from crmlab_core.reference_signals import ReferenceSignal
from crmlab_core.scalar_crm import (
    AdaptationConfig,
    ReferenceModel,
    ScalarPlant,
    crm_loop,
    lyapunov_v,
    matched_gains,
)
from crmlab_core.scenario import build_scenario

# a_p = 1, k_p = 2, a_m = -1, k_m = 1, x_p(0) = 1, x_m(0) = 0, theta(0) = k(0) = 0
PLANT = ScalarPlant(1.0, 2.0)
STEP = ReferenceSignal()


@pytest.fixture(scope="module")
def crm_run():
    """gamma = 100, ell = -100 over 15 s."""
    scenario = build_scenario(default_config())
    return scenario, scenario.simulate()


class TestMatchedGains:
    def test_default_plant(self):
        gains = matched_gains(PLANT, ReferenceModel(-1.0, 1.0, -100.0))
        assert gains.theta_star == pytest.approx(-1.0)
        assert gains.k_star == pytest.approx(0.5)

    def test_unit_input_gain(self):
        assert matched_gains(ScalarPlant(1.0, 1.0), ReferenceModel(-1.0, 1.0)).theta_star == pytest.approx(-2.0)

    def test_zero_input_gain(self):
        with pytest.raises(ZeroInputGain):
            ScalarPlant(1.0, 0.0)


class TestValidation:
    def test_positive_ell_rejected(self):
        with pytest.raises(ConfigError, match="reference.ell"):
            ReferenceModel(-1.0, 1.0, 5.0)

    def test_unstable_reference_rejected(self):
        with pytest.raises(ConfigError, match="reference.a_m"):
            ReferenceModel(0.5, 1.0)

    def test_gamma_must_be_positive(self):
        with pytest.raises(ConfigError, match="adaptation.gamma"):
            AdaptationConfig(0.0)

    def test_initial_gains_inside_projection(self):
        with pytest.raises(ConfigError, match="adaptation.theta0"):
            AdaptationConfig(10.0, (6.0, 0.0), ProjectionSet(5.0))


def test_ell_zero_is_the_open_loop_family():
    loop = crm_loop(PLANT, ReferenceModel(-1.0, 1.0, 0.0), AdaptationConfig(100.0), STEP)
    assert loop.family == "orm-scalar"
    assert crm_loop(PLANT, ReferenceModel(-1.0, 1.0, -10.0), AdaptationConfig(100.0), STEP).family == "crm-scalar"


def test_initial_lyapunov_value():
    loop = crm_loop(PLANT, ReferenceModel(-1.0, 1.0, -100.0), AdaptationConfig(100.0), STEP)
    # 1/2 + (2 / 200) * (1 + 1/4)
    assert loop.initial_v() == pytest.approx(0.5125)
    values = lyapunov_v([1.0, 0.0], [[0.0, 0.0], [-1.0, 0.5]], PLANT, loop.adapt, loop.gains)
    np.testing.assert_allclose(values, [0.5125, 0.0], atol=1e-15)


def test_rhs_at_start():
    loop = crm_loop(PLANT, ReferenceModel(-1.0, 1.0, -100.0), AdaptationConfig(100.0), STEP)
    dx = loop.rhs(0.0, loop.initial_state())
    # x_p' = a_p x_p, x_m' = k_m r + 100 e, theta' = -gamma e x_p, k' = -gamma e r
    np.testing.assert_allclose(dx[:5], [1.0, 101.0, 1.0, -100.0, -100.0])
    assert dx[5] == pytest.approx(1.0)


class TestClosedLoopRun:
    def test_channels(self, crm_run):
        _, traj = crm_run
        for name in ("x_p", "x_m", "x_m_o", "e", "theta", "k", "u", "V", "delta_x_m", "int_e2"):
            assert name in traj
        assert traj.names[:8] == ["x_p", "x_m", "x_m_o", "e", "theta", "k", "u", "V"]

    def test_tracking_error_settles(self, crm_run):
        _, traj = crm_run
        assert abs(traj.channel("e")[-1]) < 1e-2

    def test_lyapunov_function_decreases(self, crm_run):
        _, traj = crm_run
        v = traj.channel("V")
        assert v[0] == pytest.approx(0.5125)
        assert np.all(np.diff(v) <= 1e-8)

    def test_error_energy_bound(self, crm_run):
        _, traj = crm_run
        assert traj.channel("int_e2")[-1] <= 0.5125 / 101 * (1 + 1e-6)

    def test_all_certificates_pass(self, crm_run):
        scenario, traj = crm_run
        certs, _, metrics = scenario.certify(traj)
        failed = [c.name for c in certs if c.enforced and not c.passed]
        assert failed == []
        assert all_enforced_pass(certs)
        assert metrics["final_error"] < 1e-2
        assert metrics["peak_delta_x_m"] > 0


def test_gamma_100_ell_10_error_bound():
    scenario = build_scenario(merge_config(default_config(), {"reference": {"ell": -10.0}}))
    traj = scenario.simulate()
    bound = 0.5125 / 11
    assert bound == pytest.approx(4.659e-2, abs=1e-5)
    assert traj.channel("int_e2")[-1] <= bound * (1 + 1e-6)
