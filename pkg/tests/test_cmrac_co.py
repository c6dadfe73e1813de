import dataclasses

import numpy as np
import pytest

from crmlab_core.bounds import all_enforced_pass
from crmlab_core.cmrac_co import (
    CmracConfig,
    NoiseModel,
    cmracco_loop,
    compare_variants,
    coupling_ratio,
    noise_signal,
)
from crmlab_core.config_loader import merge_config
from crmlab_core.errors import ConfigError, MismatchedScenarios, PreconditionViolated, UnstableGain
from crmlab_core.integrator import IntegratorConfig
from crmlab_core.projection import ProjectionSet
from crmlab_core.scenario import build_scenario

# a_p = 1, k_p = 1, a_m = -1, k_m = 1, ell = -10, gamma = 100, eta = 1
DEFAULT = CmracConfig()


class TestGains:
    def test_default_coupling_gain(self):
        assert DEFAULT.theta_star == pytest.approx(-2.0)
        assert DEFAULT.g_theta == pytest.approx(-9.0)
        assert DEFAULT.g_n == pytest.approx(-7.0)

    def test_coupling_ratio_tends_to_one(self):
        assert coupling_ratio(DEFAULT) == pytest.approx(100 / 81)
        assert coupling_ratio(dataclasses.replace(DEFAULT, ell=-100.0)) == pytest.approx(10000 / 9801)
        assert coupling_ratio(dataclasses.replace(DEFAULT, ell=-1e4)) == pytest.approx(1.0, abs=1e-3)

    def test_unstable_gain(self):
        with pytest.raises(UnstableGain):
            CmracConfig(ell=0.0)

    def test_classical_variant_has_no_gain_condition(self):
        assert CmracConfig(ell=0.0, variant="CMRAC").g_theta > 0

    def test_truth_free_surrogate(self):
        assert CmracConfig(use_truth=False).g_theta == pytest.approx(-6.0)

    def test_projection_must_cover_true_parameter(self):
        with pytest.raises(ConfigError, match="theta_bound"):
            CmracConfig(projection=ProjectionSet(1.5))

    def test_unknown_variant(self):
        with pytest.raises(ConfigError, match="cmrac.variant"):
            CmracConfig(variant="MRAC")


class TestNoise:
    def test_samples_are_clamped_and_mostly_on_the_rails(self):
        samples = NoiseModel(seed=7).samples(20000)
        assert np.max(np.abs(samples)) <= 0.1
        # P(|N(0, 1)| > 0.1) = 0.9203
        assert np.mean(np.abs(samples) == 0.1) == pytest.approx(0.92, abs=0.01)

    def test_sequence_is_deterministic_and_prefix_stable(self):
        model = NoiseModel(seed=3)
        np.testing.assert_array_equal(model.samples(10), NoiseModel(seed=3).samples(5000)[:10])
        assert model.sample(9) == model.samples(10)[9]

    def test_seeds_differ(self):
        assert not np.array_equal(NoiseModel(seed=1).samples(100), NoiseModel(seed=2).samples(100))

    def test_zero_order_hold(self):
        model = NoiseModel(seed=5, rate=100.0)
        assert noise_signal(model, 0.0) == noise_signal(model, 0.0099)
        assert noise_signal(model, 0.01) == model.sample(1)

    def test_disabled_noise_is_zero(self):
        assert noise_signal(NoiseModel(enabled=False), 1.234) == 0.0

    def test_seed_falls_back_to_scenario_seed(self):
        assert NoiseModel.from_config({"seed": None}, seed=11).seed == 11
        assert NoiseModel.from_config({"seed": 4}, seed=11).seed == 4

    def test_invalid_rate(self):
        with pytest.raises(ConfigError, match="noise.rate"):
            NoiseModel(rate=0.0)


class TestLoop:
    def test_variants_track_different_models(self):
        co = cmracco_loop(DEFAULT)
        classical = cmracco_loop(dataclasses.replace(DEFAULT, variant="CMRAC"))
        assert co.family == "cmrac-co" and co.model_channel == "x_m"
        assert classical.family == "cmrac" and classical.model_channel == "x_m_o"

    def test_observer_starts_on_the_plant(self):
        loop = cmracco_loop(DEFAULT)
        state = loop.initial_state()
        assert state[2] == state[0] == 1.0
        # V(0) = (e_m^2 + e_o^2 + (theta*^2 + theta*^2) / gamma) / 2
        assert loop.initial_v() == pytest.approx(0.5 * (1.0 + 0.0 + 8.0 / 100.0))

    def test_reference_schedule(self):
        r = cmracco_loop(DEFAULT).r
        assert r(3.99) == 0.0
        assert r(4.0) == 0.0
        assert r(4.5) == pytest.approx(1 - np.exp(-1.0))


@pytest.fixture(scope="module")
def noiseless_run():
    cfg = dataclasses.replace(DEFAULT, horizon=15.0)
    loop = cmracco_loop(cfg)
    traj = loop.simulate(IntegratorConfig(horizon=15.0))
    return loop, traj


class TestNoiselessRun:
    def test_channels(self, noiseless_run):
        _, traj = noiseless_run
        assert traj.names[:6] == ["x_a", "x_p_measured", "x_m", "x_o", "e_m", "e_o"]
        np.testing.assert_array_equal(traj.channel("n"), 0.0)

    def test_lyapunov_function_decreases(self, noiseless_run):
        _, traj = noiseless_run
        assert np.all(np.diff(traj.channel("V")) <= 1e-8)

    def test_certificates(self, make_config):
        scenario = build_scenario(make_config({
            "scenario": {"family": "cmrac-co"},
            "plant": {"a_p": 1.0, "k_p": 1.0},
            "reference": {"a_m": -1.0, "k_m": 1.0, "ell": -10.0},
            "adaptation": {"gamma": 100.0},
            "spectral": {"enabled": False},
        }))
        certs, _, metrics = scenario.certify(scenario.simulate())
        names = {c.name for c in certs}
        assert {"v_rate", "v_envelope", "e_m_tail_l2", "e_o_tail_l2", "eps_theta_tail_l2"} <= names
        assert [c.name for c in certs if c.enforced and not c.passed] == []
        assert metrics["g_theta"] == pytest.approx(-9.0)
        assert metrics["coupling_ratio"] == pytest.approx(100 / 81)

    def test_classical_run_has_no_observer_certificates(self, make_config):
        from crmlab_core.cmrac_co import certify_cmracco_run

        scenario = build_scenario(make_config({
            "scenario": {"family": "cmrac"},
            "plant": {"k_p": 1.0},
            "reference": {"ell": -10.0},
            "integrator": {"horizon": 5.0},
        }))
        traj = scenario.simulate()
        with pytest.raises(PreconditionViolated):
            certify_cmracco_run(traj, scenario, 0.5)
        certs, _, metrics = scenario.certify(traj)
        assert [c.name for c in certs] == ["theta_containment", "theta_hat_containment"]
        assert all_enforced_pass(certs)
        assert metrics["variant"] == "CMRAC"


def test_compare_rejects_mismatched_runs(noiseless_run):
    loop, traj = noiseless_run
    other = dataclasses.replace(loop.cfg, variant="CMRAC", ell=-20.0)
    with pytest.raises(MismatchedScenarios):
        compare_variants(traj, loop.cfg, traj, other)
    with pytest.raises(MismatchedScenarios):
        compare_variants(traj, loop.cfg, traj, loop.cfg)


@pytest.mark.slow
def test_observer_feedback_smooths_the_control_rate(figure_config):
    wins = 0
    for seed in range(1, 6):
        config = figure_config("fig7", {"scenario": {"seed": seed}})
        scenario = build_scenario(config)
        certs, _, metrics = scenario.certify(scenario.simulate())
        assert all_enforced_pass(certs)
        comparison = metrics["comparison"]
        assert comparison["CMRAC_CO"]["region2_max_du_dt"] >= 0
        wins += comparison["verdict"] == "CMRAC_CO"
    assert wins >= 4


def test_noise_seed_reaches_the_loop(figure_config):
    config = figure_config("fig8", {"scenario": {"seed": 9}, "integrator": {"horizon": 0.5}})
    scenario = build_scenario(merge_config(config, {"noise": {"seed": None}}))
    assert scenario.loop.noise.seed == 9
    traj = scenario.simulate()
    assert np.max(np.abs(traj.channel("n"))) <= 0.1
    assert np.any(traj.channel("n") != 0.0)
