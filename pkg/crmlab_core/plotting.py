"""Time-series SVG panels for one run.

Each family has a fixed list of panels; a panel collects the channels whose
name equals one of its prefixes or continues it with ``_<index>``.
"""

import io
import logging
import re

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402

logger = logging.getLogger(__name__)

PANELS = {
    "orm-scalar": (
        ("states", "plant and reference model", ("x_p", "x_m", "x_m_o")),
        ("error", "tracking error e", ("e",)),
        ("parameters", "adaptive parameters", ("theta", "k")),
        ("control", "control input u", ("u",)),
        ("lyapunov", "Lyapunov function V", ("V",)),
    ),
    "mimo": (
        ("states", "plant and reference model", ("x_p", "x_m")),
        ("error", "tracking error e", ("e",)),
        ("parameters", "adaptive gains", ("Theta", "K")),
        ("lyapunov", "Lyapunov function V", ("V",)),
    ),
    "cmrac-co": (
        ("states", "plant, model and observer", ("x_a", "x_m", "x_m_o", "x_o")),
        ("errors", "model, observer and parameter errors", ("e_m", "e_o", "eps_theta")),
        ("parameters", "direct and indirect estimates", ("theta", "theta_hat")),
        ("control", "control input u", ("u",)),
        ("control_rate", "control rate du/dt", ("du_dt",)),
        ("lyapunov", "Lyapunov function V", ("V",)),
    ),
    "backstepping": (
        ("states", "plant state", ("x",)),
        ("errors", "error coordinates z", ("z",)),
        ("parameters", "parameter estimates", ("theta_hat",)),
        ("control", "control input u", ("u",)),
        ("lyapunov", "Lyapunov function V", ("V",)),
    ),
    "robot": (
        ("joints", "joint angles", ("q",)),
        ("tracking", "tracking error", ("q_tilde",)),
        ("composite", "composite variable s", ("s",)),
        ("parameters", "parameter estimates", ("a_hat",)),
        ("torque", "joint torques", ("tau",)),
        ("lyapunov", "Lyapunov function V", ("V",)),
    ),
}
PANELS["crm-scalar"] = PANELS["orm-scalar"]
PANELS["cmrac"] = PANELS["cmrac-co"]


def _matches(name, prefix):
    return name == prefix or re.fullmatch(re.escape(prefix) + r"(_\d+)+", name) is not None


def panel_channels(traj, prefixes):
    return [name for name in traj.names if any(_matches(name, p) for p in prefixes)]


def apply_style(plot_config):
    """Fixed SVG hash salt and no embedded date, so identical runs give identical files.

    Writes the global rcParams, so it runs once per invocation on the main
    thread; the render functions never call it.
    """
    matplotlib.rcParams["svg.hashsalt"] = str(plot_config.get("hashsalt", "crmlab"))
    matplotlib.rcParams["svg.fonttype"] = "path"


apply_style({})


def _svg_text(fig):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def render_panel(traj, channels, title):
    """SVG text of one line plot."""
    # Figure rather than pyplot: sweep points render from worker threads
    fig = Figure(figsize=(8, 4))
    ax = fig.subplots()
    for name in channels:
        ax.plot(traj.times, traj.channel(name), label=name, linewidth=1.2)
    ax.set_title(title)
    ax.set_xlabel("t")
    ax.grid(True, alpha=0.3)
    if len(channels) > 1:
        ax.legend(loc="best", fontsize=8)
    return _svg_text(fig)


def write_run_panels(fsm, run_name, family, traj, plot_config=None):
    """Writes one SVG per panel into the run directory and returns the file names."""
    plot_config = plot_config or {}
    if not plot_config.get("enabled", True):
        return []
    written = []
    for key, title, prefixes in PANELS.get(family, ()):
        channels = panel_channels(traj, prefixes)
        if not channels:
            logger.debug(f"Panel '{key}' has no channels in run {run_name}; skipped")
            continue
        filename = f"{key}.svg"
        fsm.write_text(run_name, filename, render_panel(traj, channels, f"{run_name}: {title}"))
        written.append(filename)
    logger.info(f"Wrote {len(written)} SVG panels for run {run_name}")
    return written


def write_sweep_panel(fsm, sweep_name, axis, points, plot_config=None):
    """Peak |delta x_m| against the swept value on log-log axes."""
    plot_config = plot_config or {}
    rows = [(abs(p["value"]), p["peak_delta_x_m"]) for p in points
            if p.get("peak_delta_x_m") and p["value"]]
    if not plot_config.get("enabled", True) or len(rows) < 2:
        return None
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    xs, ys = zip(*sorted(rows))
    ax.loglog(xs, ys, "o-")
    ax.set_xlabel(f"|{axis}|")
    ax.set_ylabel("sup |delta x_m|")
    ax.set_title(f"{sweep_name}: peaking")
    ax.grid(True, which="both", alpha=0.3)
    fsm.write_text(sweep_name, "peaking.svg", _svg_text(fig))
    return "peaking.svg"
