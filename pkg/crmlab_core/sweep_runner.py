"""Parameter sweeps: one independent run per value, executed in a thread pool."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed

from tqdm import tqdm

from .bounds import peaking_exponent
from .config_loader import merge_config
from .errors import ConfigError, CrmlabError, DegenerateFit
from .logging_setup import TRANSACTION_LOGGER_NAME
from .plotting import write_sweep_panel
from .report_generator import dumps_report
from .scenario import build_scenario

logger = logging.getLogger(__name__)
transaction_logger = logging.getLogger(TRANSACTION_LOGGER_NAME)

MANIFEST_FILE = "manifest.json"

# axis -> family -> (section, key) of the swept value
AXES = {
    "ell": {
        "crm-scalar": ("reference", "ell"),
        "cmrac": ("reference", "ell"),
        "cmrac-co": ("reference", "ell"),
    },
    "gamma": {
        "orm-scalar": ("adaptation", "gamma"),
        "crm-scalar": ("adaptation", "gamma"),
        "cmrac": ("adaptation", "gamma"),
        "cmrac-co": ("adaptation", "gamma"),
        "mimo": ("mimo", "gamma"),
    },
    "g": {
        "mimo": ("mimo", "g"),
    },
}

# where the coupled gamma = |value| goes
COUPLED_GAMMA = {
    "crm-scalar": ("adaptation", "gamma"),
    "cmrac": ("adaptation", "gamma"),
    "cmrac-co": ("adaptation", "gamma"),
    "mimo": ("mimo", "gamma"),
}


def parse_values(text):
    """Comma-separated floats, e.g. ``-10,-100,-1000``."""
    values = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        try:
            values.append(float(item))
        except ValueError:
            raise ConfigError(f"sweep.values: '{item}' is not a number") from None
    if not values:
        raise ConfigError("sweep.values: at least one value is required")
    return values


def point_overrides(family, axis, value, couple_gamma=False):
    """Configuration overrides that place one sweep value.

    Raises:
        ConfigError: The axis does not apply to the family, or coupling is
            requested for an axis other than ell or g.
    """
    targets = AXES.get(axis)
    if targets is None:
        raise ConfigError(f"sweep.axis: must be one of {', '.join(AXES)}, got '{axis}'")
    if family not in targets:
        raise ConfigError(f"sweep.axis: '{axis}' does not apply to family '{family}'")
    section, key = targets[family]
    overrides = {section: {key: value}}
    if couple_gamma:
        if axis not in ("ell", "g"):
            raise ConfigError(f"sweep.couple_gamma: only applies to the ell and g axes, got '{axis}'")
        gamma_section, gamma_key = COUPLED_GAMMA[family]
        overrides.setdefault(gamma_section, {})[gamma_key] = abs(value)
    return overrides


def _point_name(axis, value):
    return f"{axis}_{value:g}"


class SweepRunner:
    """Runs a base configuration over the values of one axis."""

    def __init__(self, config, file_system_manager, experiment_runner, threads=1):
        self.config = config
        self.fsm = file_system_manager
        self.runner = experiment_runner
        self.threads = max(1, int(threads))

    def _run_point(self, base_config, sweep_name, axis, value, couple_gamma):
        family = base_config["scenario"]["family"]
        point = {"value": value, "run": _point_name(axis, value)}
        run_name = f"{sweep_name}/{point['run']}"
        try:
            config = merge_config(base_config, point_overrides(family, axis, value, couple_gamma))
            config["scenario"]["name"] = point["run"]
            result = self.runner.run(build_scenario(config), run_name)
        except CrmlabError as e:
            point.update({"status": "failed", "passed": False, "error": f"{type(e).__name__}: {e}"})
            return point
        except Exception as e:
            logger.error(f"Unexpected error in sweep point {run_name}: {e}", exc_info=True)
            point.update({"status": "failed", "passed": False, "error": f"{type(e).__name__}: {e}"})
            return point
        point["status"] = result.status
        point["passed"] = result.passed
        if result.error:
            point["error"] = result.error
            return point
        metrics = result.metrics
        for key in ("peak_delta_x_m", "theta_dot_tail_l2", "final_error", "final_error_norm"):
            if key in metrics:
                point[key] = metrics[key]
        point["certificates"] = {c.name: c.passed for c in result.certificates if c.enforced}
        point["failed_certificates"] = result.failed_certificates
        return point

    def run(self, base_config, axis, values, couple_gamma=False):
        """Runs every point and writes ``manifest.json``.

        Per-point failures are recorded in the manifest and do not stop the
        sweep. With ``axis == 'ell'`` and at least three usable points the
        manifest carries the peaking-exponent fit.

        Returns:
            dict: The manifest.
        """
        family = base_config.get("scenario", {}).get("family", "crm-scalar")
        point_overrides(family, axis, values[0], couple_gamma)  # validates axis and coupling up front
        sweep_name = f"{base_config['scenario'].get('name') or family}_sweep_{axis}"
        self.fsm.prepare_run_directory(sweep_name)
        start = time.time()
        transaction_logger.info(f"SWEEP_START Sweep: {sweep_name}, Axis: {axis}, Values: {values}, "
                                f"CoupleGamma: {couple_gamma}, Threads: {self.threads}")

        points = [None] * len(values)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = {
                pool.submit(self._run_point, base_config, sweep_name, axis, value, couple_gamma): i
                for i, value in enumerate(values)
            }
            with tqdm(total=len(futures), desc=sweep_name, unit="run") as progress:
                for future in as_completed(futures):
                    i = futures[future]
                    points[i] = future.result()
                    if points[i]["status"] == "failed":
                        transaction_logger.warning(f"SWEEP_POINT_FAILED Sweep: {sweep_name}, "
                                                   f"Point: {points[i]['run']}, Error: {points[i].get('error')}")
                    progress.update(1)

        manifest = {
            "sweep": sweep_name,
            "family": family,
            "axis": axis,
            "values": list(values),
            "couple_gamma": bool(couple_gamma),
            "passed": all(p["passed"] for p in points),
            "points": points,
            "fit": self._peaking_fit(axis, points),
        }
        self.fsm.write_text(sweep_name, MANIFEST_FILE, dumps_report(manifest))
        write_sweep_panel(self.fsm, sweep_name, axis, points, self.config.get("plotting", {}))
        failed = sum(1 for p in points if p["status"] == "failed")
        transaction_logger.info(f"SWEEP_DONE Sweep: {sweep_name}, Points: {len(points)}, Failed: {failed}, "
                                f"Duration: {time.time() - start:.2f}s")
        return manifest

    def _peaking_fit(self, axis, points):
        if axis != "ell":
            return None
        usable = [(p["value"], p["peak_delta_x_m"]) for p in points
                  if "peak_delta_x_m" in p and p["value"] != 0 and math.isfinite(p["peak_delta_x_m"])]
        if len(usable) < 3:
            logger.info(f"No peaking fit: {len(usable)} usable point(s), need 3")
            return None
        try:
            fit = peaking_exponent([v for v, _ in usable], [peak for _, peak in usable])
        except DegenerateFit as e:
            logger.warning(f"Peaking fit failed: {e}")
            return None
        logger.info(f"Peaking exponent {fit.exponent:.4f} over {len(usable)} points")
        return fit.to_dict()
