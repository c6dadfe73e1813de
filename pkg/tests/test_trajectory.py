import math

import numpy as np
import pytest

from crmlab_core.errors import Divergence, PreconditionViolated, TooFewSamples, UnknownChannel
from crmlab_core.trajectory import (
    Trajectory,
    numeric_derivative,
    quadrature_tail,
    trapezoid_increments,
    truncated_l2,
)


def _ramp(count=101):
    t = np.linspace(0.0, 1.0, count)
    return Trajectory(t, {"x": t, "y": 2.0 * t})


class TestConstruction:
    def test_times_must_increase(self):
        with pytest.raises(ValueError):
            Trajectory([0.0, 0.2, 0.1], {"x": [0.0, 1.0, 2.0]})

    def test_channel_shape_must_match(self):
        with pytest.raises(ValueError):
            Trajectory([0.0, 1.0], {"x": [0.0, 1.0, 2.0]})

    def test_non_finite_samples_diverge(self):
        with pytest.raises(Divergence, match="t=0.5"):
            Trajectory([0.0, 0.5, 1.0], {"x": [0.0, math.inf, 1.0]})

    def test_samples_are_read_only(self):
        traj = _ramp()
        with pytest.raises(ValueError):
            traj.channel("x")[0] = 5.0

    def test_unknown_channel(self):
        traj = _ramp()
        with pytest.raises(UnknownChannel):
            traj.channel("z")
        with pytest.raises(KeyError):
            traj.channel("z")


def test_with_channels_leaves_original_untouched():
    traj = _ramp()
    extended = traj.with_channels({"z": np.ones(len(traj))}, meta={"tag": 1})
    assert "z" in extended and "z" not in traj
    assert extended.meta["tag"] == 1
    assert "tag" not in traj.meta


def test_select_orders_channels():
    assert _ramp().select(["y", "x"]).names == ["y", "x"]


def test_window_needs_two_samples():
    traj = _ramp(11)
    assert len(traj.window(0.2, 0.4)) == 3
    with pytest.raises(TooFewSamples):
        traj.window(0.21, 0.29)


def test_csv_round_trip_is_exact(tmp_path):
    t = np.linspace(0.0, 1.0, 7)
    traj = Trajectory(t, {"x": np.sin(t) / 3.0, "e": np.exp(-t) * 1e-13})
    path = tmp_path / "trajectory.csv"
    traj.to_csv(str(path))
    assert path.read_text().splitlines()[0] == "t,x,e"
    loaded = Trajectory.from_csv(str(path))
    assert loaded.names == ["x", "e"]
    assert np.array_equal(loaded.times, traj.times)
    for name in traj.names:
        assert np.array_equal(loaded.channel(name), traj.channel(name))


class TestTruncatedL2:
    def test_sine_over_half_period(self):
        t = np.linspace(0.0, math.pi, 1001)
        traj = Trajectory(t, {"s": np.sin(t)})
        assert truncated_l2(traj, "s") == pytest.approx(math.pi / 2, abs=1e-9)

    def test_start_between_samples(self):
        traj = _ramp()
        start = 0.1234
        assert truncated_l2(traj, "x", start) == pytest.approx((1 - start ** 3) / 3, rel=1e-9)

    def test_several_channels_sum(self):
        traj = _ramp()
        assert truncated_l2(traj, ["x", "y"]) == pytest.approx(5.0 / 3.0, rel=1e-9)

    def test_start_at_end_is_zero(self):
        assert truncated_l2(_ramp(), "x", 1.0) == 0.0

    def test_start_outside_range(self):
        with pytest.raises(PreconditionViolated):
            truncated_l2(_ramp(), "x", 1.5)


def test_trapezoid_increments_sum_to_integral():
    traj = _ramp(1001)
    assert np.sum(trapezoid_increments(traj, "x")) == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_numeric_derivative_of_ramp():
    slopes = numeric_derivative(_ramp(), "y")
    assert slopes.shape == (101,)
    np.testing.assert_allclose(slopes, 2.0)


def test_quadrature_tail_interpolates_start():
    traj = _ramp()
    assert quadrature_tail(traj, "x", 0.25) == pytest.approx(0.75)
