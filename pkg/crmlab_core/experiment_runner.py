import logging
import time
from dataclasses import dataclass, field

from .bounds import all_enforced_pass, certificate_report
from .errors import CrmlabError
from .logging_setup import TRANSACTION_LOGGER_NAME
from .plotting import apply_style, write_run_panels
from .report_generator import ReportGenerator, dumps_report
from .scenario import build_scenario

logger = logging.getLogger(__name__)
transaction_logger = logging.getLogger(TRANSACTION_LOGGER_NAME)

TRAJECTORY_FILE = "trajectory.csv"
CERTIFICATES_FILE = "certificates.json"
REPORT_FILE = "report.txt"


@dataclass
class RunResult:
    name: str
    family: str
    status: str
    run_path: str = None
    certificates: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    error: str = None
    trajectory: object = field(default=None, repr=False)

    @property
    def passed(self):
        return self.status == "passed"

    @property
    def failed_certificates(self):
        return [c.name for c in self.certificates if c.enforced and not c.passed]


class ExperimentRunner:
    """Runs one scenario end to end: integrate, certify, write artifacts."""

    def __init__(self, config, file_system_manager):
        self.config = config
        self.fsm = file_system_manager
        apply_style(config.get("plotting", {}))

    def run_config(self, config, run_name=None):
        """Build and run a scenario from a configuration.

        Validation errors propagate before any directory is created.
        """
        return self.run(build_scenario(config), run_name)

    def run(self, scenario, run_name=None):
        """Runs a built scenario and writes its artifacts.

        Args:
            scenario (Scenario): Output of ``build_scenario``.
            run_name (str): Directory under the output root; defaults to the scenario name.

        Returns:
            RunResult: status is ``passed``, ``certificate_failed`` or ``failed``.
        """
        run_name = run_name or scenario.name
        run_path = self.fsm.prepare_run_directory(run_name)
        report = ReportGenerator(self.fsm, run_name, scenario.family)
        start = time.time()
        transaction_logger.info(f"RUN_START Scenario: {run_name}, Family: {scenario.family}, Path: {run_path}")
        logger.info(f"Starting run: {run_name}")
        report.add_line(f"Integrator: {scenario.integrator.as_dict()}")
        report.add_line(f"Seed: {scenario.seed}")

        try:
            traj = scenario.simulate()
            report.add_line(f"Integration complete: {len(traj)} samples to t={traj.times[-1]:.6g}")
            self.fsm.write_text(run_name, TRAJECTORY_FILE, traj.to_csv_text())

            certs, fits, metrics = scenario.certify(traj)
            payload = certificate_report(run_name, certs, fits, metrics)
            payload["family"] = scenario.family
            payload["seed"] = scenario.seed
            payload["integrator"] = scenario.integrator.as_dict()
            self.fsm.write_text(run_name, CERTIFICATES_FILE, dumps_report(payload))

            panels = write_run_panels(self.fsm, run_name, scenario.family, traj, self.config.get("plotting", {}))
            report.add_line(f"SVG panels: {', '.join(panels) if panels else 'none'}")
            report.add_certificates(certs)
            report.add_mapping("Fits", fits)
            report.add_mapping("Metrics", {k: v for k, v in metrics.items() if k != "spectral"})

            passed = all_enforced_pass(certs)
            result = RunResult(run_name, scenario.family, "passed" if passed else "certificate_failed", run_path,
                               certs, fits, metrics, trajectory=traj)
            elapsed = time.time() - start
            if passed:
                report.add_line(f"Run passed in {elapsed:.2f} s.")
                transaction_logger.info(f"RUN_SUCCESS Scenario: {run_name}, Certificates: {len(certs)}, "
                                        f"Duration: {elapsed:.2f}s")
            else:
                report.add_line(f"Certificates failed: {', '.join(result.failed_certificates)}")
                transaction_logger.warning(f"CERTIFICATE_FAILED Scenario: {run_name}, "
                                           f"Failed: {', '.join(result.failed_certificates)}")
                logger.warning(f"Run {run_name}: {len(result.failed_certificates)} certificate(s) failed")
            report.write_report(REPORT_FILE)
            return result

        except CrmlabError as e:
            logger.error(f"Run {run_name} failed: {type(e).__name__}: {e}")
            return self._fail(run_name, scenario, report, e)
        except Exception as e:
            logger.error(f"Unexpected error in run {run_name}: {e}", exc_info=True)
            return self._fail(run_name, scenario, report, e)

    def _fail(self, run_name, scenario, report, exc):
        report.add_error(exc)
        try:
            report.write_report(REPORT_FILE)
        except OSError as e:
            logger.error(f"Could not write report for run {run_name}: {e}")
        transaction_logger.error(f"RUN_FAILED Scenario: {run_name}, Error: {type(exc).__name__}: {exc}")
        failed_path = self.fsm.quarantine_run(run_name, reason=f"{type(exc).__name__}: {exc}")
        return RunResult(run_name, scenario.family, "failed", failed_path, error=f"{type(exc).__name__}: {exc}")
