import os

import pytest
import yaml

from crmlab_core.config_loader import default_config, load_config, merge_config

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIGURES = os.path.join(ROOT, "figures")


def figure_path(name):
    return os.path.join(FIGURES, f"{name}.yaml")


@pytest.fixture
def output_dirs(tmp_path):
    out = tmp_path / "out"
    return {"output": str(out), "logs": str(out / "logs"), "failed_subdir": "failed"}


@pytest.fixture
def make_config(output_dirs):
    """Defaults with output under tmp_path, plus the given overrides."""

    def factory(overrides=None):
        config = merge_config(default_config(), {"directories": output_dirs})
        return merge_config(config, overrides or {})

    return factory


@pytest.fixture
def write_config(tmp_path, output_dirs):
    """Writes a YAML scenario file (output under tmp_path) and returns its path."""

    def factory(overrides, name="scenario.yaml"):
        data = merge_config({"directories": output_dirs}, overrides)
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data))
        return str(path)

    return factory


@pytest.fixture
def figure_config(output_dirs):
    """A preset from figures/ with output under tmp_path."""

    def factory(name, overrides=None):
        config = merge_config(load_config(figure_path(name)), {"directories": output_dirs})
        return merge_config(config, overrides or {})

    return factory


@pytest.fixture(scope="session")
def preset():
    """Loads a preset from figures/ as is, for tests that only simulate."""
    return lambda name: load_config(figure_path(name))
