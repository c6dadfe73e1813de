import math

import numpy as np
import pytest

from crmlab_core.errors import ConfigError, Divergence, IntegrationError
from crmlab_core.integrator import IntegratorConfig, integrate


def _decay(t, x):
    return -x


def _blow_up(t, x):
    return x * x


def test_rk45_exponential_decay():
    cfg = IntegratorConfig(method="rk45", horizon=1.0, record_dt=0.01, rel_tol=1e-10, abs_tol=1e-12)
    traj = integrate(_decay, [1.0], cfg, names=["x"])
    assert traj.times[-1] == pytest.approx(1.0, abs=1e-15)
    assert traj.channel("x")[-1] == pytest.approx(math.exp(-1.0), abs=1e-8)


def test_rk4_exponential_decay():
    cfg = IntegratorConfig(method="rk4", horizon=1.0, record_dt=0.01, dt=1e-3)
    traj = integrate(_decay, [1.0], cfg, names=["x"])
    np.testing.assert_allclose(traj.channel("x"), np.exp(-traj.times), atol=1e-10)


@pytest.mark.parametrize("cfg", [
    IntegratorConfig(method="rk45", horizon=2 * math.pi, record_dt=0.01, rel_tol=1e-10, abs_tol=1e-12),
    IntegratorConfig(method="rk4", horizon=2 * math.pi, record_dt=0.01, dt=1e-3),
], ids=["rk45", "rk4"])
def test_harmonic_oscillator_closes_its_orbit(cfg):
    traj = integrate(lambda t, x: np.array([x[1], -x[0]]), [1.0, 0.0], cfg, names=["x", "y"])
    x, y = traj.channel("x"), traj.channel("y")
    assert traj.times[-1] == pytest.approx(2 * math.pi, abs=1e-12)
    assert x[-1] == pytest.approx(1.0, abs=1e-6)
    assert y[-1] == pytest.approx(0.0, abs=1e-6)
    assert np.max(np.abs(x * x + y * y - 1.0)) < 1e-7


def test_rk4_reruns_are_bit_identical():
    cfg = IntegratorConfig(method="rk4", horizon=2.0, record_dt=0.01, dt=1e-3)
    first = integrate(lambda t, x: np.array([x[1], -x[0] + math.sin(t)]), [1.0, 0.0], cfg)
    second = integrate(lambda t, x: np.array([x[1], -x[0] + math.sin(t)]), [1.0, 0.0], cfg)
    assert first.names == ["x1", "x2"]
    for name in first.names:
        assert np.array_equal(first.channel(name), second.channel(name))


def test_record_grid_ends_on_horizon():
    cfg = IntegratorConfig(horizon=1.0, record_dt=0.3)
    grid = cfg.record_grid()
    assert grid[0] == 0.0
    assert grid[-1] == 1.0
    assert np.all(np.diff(grid) <= 0.3)
    assert grid.size == 5


def test_rk4_blow_up_raises_divergence():
    cfg = IntegratorConfig(method="rk4", horizon=2.0, record_dt=0.01, dt=1e-3)
    with pytest.raises(Divergence):
        integrate(_blow_up, [1.0], cfg)


def test_rk45_blow_up_raises_integration_error():
    cfg = IntegratorConfig(method="rk45", horizon=2.0)
    with pytest.raises(IntegrationError):
        integrate(_blow_up, [1.0], cfg)


def test_non_finite_initial_state():
    with pytest.raises(Divergence):
        integrate(_decay, [math.nan], IntegratorConfig())


def test_channel_names_must_match_state():
    with pytest.raises(ValueError):
        integrate(_decay, [1.0, 2.0], IntegratorConfig(horizon=0.1), names=["x"])


def test_trajectory_meta_records_integrator():
    cfg = IntegratorConfig(horizon=0.1)
    traj = integrate(_decay, [1.0], cfg, meta={"scenario": "decay"})
    assert traj.meta["scenario"] == "decay"
    assert traj.meta["integrator"]["method"] == "rk45"


class TestConfigValidation:
    def test_unknown_method(self):
        with pytest.raises(ConfigError, match="integrator.method"):
            IntegratorConfig(method="euler")

    def test_non_positive_horizon(self):
        with pytest.raises(ConfigError, match="integrator.horizon"):
            IntegratorConfig(horizon=0.0)

    def test_rk4_record_spacing_below_step(self):
        with pytest.raises(ConfigError, match="integrator.record_dt"):
            IntegratorConfig(method="rk4", dt=0.01, record_dt=0.001)

    def test_from_config_normalizes_method(self):
        cfg = IntegratorConfig.from_config({"method": "RK4", "horizon": "3", "dt": None})
        assert cfg.method == "rk4"
        assert cfg.horizon == 3.0
        assert cfg.dt == 1e-3


class TestStepRule:
    def test_fast_error_mode_rejected(self):
        cfg = IntegratorConfig(method="rk4", dt=1e-3)
        with pytest.raises(ConfigError, match="integrator.dt"):
            cfg.check_step_rule(gamma=100.0, ell=-1000.0)

    def test_limit_is_inclusive(self):
        IntegratorConfig(method="rk4", dt=1e-3).check_step_rule(gamma=100.0, ell=-100.0)

    def test_rk45_is_exempt(self):
        IntegratorConfig(method="rk45", dt=1.0, dt_max=1.0).check_step_rule(gamma=1e6, ell=-1e6)
