import os

import matplotlib
import numpy as np

from crmlab_core.file_system_manager import FileSystemManager
from crmlab_core.plotting import apply_style, panel_channels, render_panel, write_run_panels, write_sweep_panel
from crmlab_core.trajectory import Trajectory


def _scalar_traj():
    t = np.linspace(0.0, 1.0, 51)
    return Trajectory(t, {"x_p": np.exp(-t), "x_m": 1.0 - np.exp(-t), "e": 2.0 * np.exp(-t) - 1.0,
                          "theta_1": np.sin(t), "theta_2": np.cos(t)})


def test_panel_channels_match_indexed_names():
    assert panel_channels(_scalar_traj(), ("theta",)) == ["theta_1", "theta_2"]
    assert panel_channels(_scalar_traj(), ("x_m_o",)) == []


def test_rendering_is_deterministic():
    traj = _scalar_traj()
    first = render_panel(traj, ["x_p", "x_m"], "states")
    assert first == render_panel(traj, ["x_p", "x_m"], "states")
    assert "<dc:date>" not in first


def test_apply_style_sets_salt(monkeypatch):
    monkeypatch.setitem(matplotlib.rcParams, "svg.hashsalt", "before")
    apply_style({"hashsalt": "after"})
    assert matplotlib.rcParams["svg.hashsalt"] == "after"
    assert matplotlib.rcParams["svg.fonttype"] == "path"


class TestGlobalStyleUntouched:
    def test_run_panels(self, make_config, monkeypatch):
        monkeypatch.setitem(matplotlib.rcParams, "svg.hashsalt", "outer")
        fsm = FileSystemManager(make_config())
        run_dir = fsm.prepare_run_directory("panels")
        written = write_run_panels(fsm, "panels", "crm-scalar", _scalar_traj(), {"hashsalt": "inner"})
        assert set(written) == {"states.svg", "error.svg", "parameters.svg"}
        assert all(os.path.isfile(os.path.join(run_dir, name)) for name in written)
        assert matplotlib.rcParams["svg.hashsalt"] == "outer"

    def test_sweep_panel(self, make_config, monkeypatch):
        monkeypatch.setitem(matplotlib.rcParams, "svg.hashsalt", "outer")
        fsm = FileSystemManager(make_config())
        fsm.prepare_run_directory("sweep")
        points = [{"value": -10.0, "peak_delta_x_m": 0.1}, {"value": -100.0, "peak_delta_x_m": 0.3},
                  {"value": -1000.0, "status": "failed"}]
        assert write_sweep_panel(fsm, "sweep", "ell", points, {"hashsalt": "inner"}) == "peaking.svg"
        assert matplotlib.rcParams["svg.hashsalt"] == "outer"


def test_disabled_plotting_writes_nothing(make_config):
    fsm = FileSystemManager(make_config())
    run_dir = fsm.prepare_run_directory("off")
    assert write_run_panels(fsm, "off", "crm-scalar", _scalar_traj(), {"enabled": False}) == []
    assert os.listdir(run_dir) == []
