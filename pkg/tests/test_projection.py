import math

import numpy as np
import pytest

from crmlab_core.errors import ConfigError, OutsideSet
from crmlab_core.projection import ProjectionSet, project

BALL = ProjectionSet(5.0, 0.1)


def test_invalid_sets():
    with pytest.raises(ConfigError, match="theta_bound"):
        ProjectionSet(0.0)
    with pytest.raises(ConfigError, match="smoothing"):
        ProjectionSet(5.0, 1.0)


def test_from_config_disabled_returns_none():
    assert ProjectionSet.from_config({"enabled": False}) is None
    assert ProjectionSet.from_config({"enabled": True, "theta_bound": 2}) == ProjectionSet(2.0, 0.1)


def test_boundary_function_levels():
    inner = math.sqrt(25.0 * 0.9)
    assert BALL.boundary_function([inner, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert BALL.boundary_function([5.0, 0.0]) == pytest.approx(1.0)


def test_inside_inner_ball_is_unchanged():
    update = np.array([3.0, -1.0])
    np.testing.assert_array_equal(project(update, [1.0, 1.0], BALL), update)


def test_outward_component_removed_on_boundary():
    np.testing.assert_allclose(project([1.0, 1.0], [5.0, 0.0], BALL), [0.0, 1.0], atol=1e-15)


def test_inward_update_is_unchanged():
    np.testing.assert_array_equal(project([-1.0, 2.0], [5.0, 0.0], BALL), [-1.0, 2.0])


def test_boundary_layer_scales_radial_component():
    radius = math.sqrt(25.0 * 0.95)
    np.testing.assert_allclose(project([2.0, 0.0], [radius, 0.0], BALL), [1.0, 0.0], atol=1e-12)


def test_matrix_parameters_use_frobenius_norm():
    theta = np.array([[3.0, 0.0], [4.0, 0.0]])
    projected = project(np.ones((2, 2)), theta, BALL)
    assert projected.shape == (2, 2)
    assert np.sum(projected * theta) == pytest.approx(0.0, abs=1e-12)


def test_outside_set():
    with pytest.raises(OutsideSet):
        project([1.0, 0.0], [6.0, 0.0], BALL)
    # non-strict callers get the full removal
    np.testing.assert_allclose(project([1.0, 0.0], [6.0, 0.0], BALL, strict=False), [0.0, 0.0], atol=1e-15)


def test_no_set_passes_through():
    np.testing.assert_array_equal(project([1.0, 2.0], [100.0, 0.0], None), [1.0, 2.0])
