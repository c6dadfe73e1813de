import datetime
import json
import math
import re
import traceback

import numpy as np

_FLOAT_SENTINEL = "@@float:"
_FLOAT_PATTERN = re.compile(r'"' + _FLOAT_SENTINEL + r'([^"]*)"')


def _encode_floats(value):
    if isinstance(value, dict):
        return {str(k): _encode_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode_floats(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_encode_floats(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return _FLOAT_SENTINEL + f"{value:.17g}"
    return value


def dumps_report(payload):
    """JSON text with every float written to 17 significant digits.

    Non-finite floats become ``null``. Keys keep insertion order so identical
    payloads give identical bytes.
    """
    text = json.dumps(_encode_floats(payload), indent=2)
    return _FLOAT_PATTERN.sub(lambda m: m.group(1), text) + "\n"


class ReportGenerator:
    """Builds the human-readable report of one run."""

    def __init__(self, file_system_manager, run_name, family):
        self.fsm = file_system_manager
        self.run_name = run_name
        self.family = family
        self.report_content = []
        self._initialize_report()

    def _initialize_report(self):
        self.add_line("Simulation Report")
        self.add_line("=" * 20)
        self.add_line(f"Scenario: {self.run_name}")
        self.add_line(f"Family: {self.family}")
        self.add_line(f"Report Generated: {datetime.datetime.now()}")
        self.add_line("-" * 20)

    def add_line(self, line):
        self.report_content.append(line)

    def add_certificates(self, certificates):
        """One line per certificate; trend records show only the measurement."""
        self.add_line(f"Certificates ({len(certificates)}):")
        for cert in certificates:
            if cert.kind == "trend":
                self.add_line(f"  [TREND] {cert.name}: measured={cert.measured:.6g}")
                continue
            status = "PASS" if cert.passed else "FAIL"
            line = f"  [{status}] {cert.name} ({cert.kind}): measured={cert.measured:.6g} bound={cert.bound:.6g}"
            if cert.detail:
                line += f"  {cert.detail}"
            self.add_line(line)

    def add_mapping(self, title, mapping):
        if not mapping:
            return
        self.add_line(f"{title}:")
        for key, value in mapping.items():
            self.add_line(f"  {key}: {value}")

    def add_error(self, exception):
        """Adds an error and the current stack trace to the report."""
        self.add_line("\nERROR")
        self.add_line("=" * 20)
        self.add_line(str(exception))
        self.add_line("-" * 20)
        self.add_line("Stack Trace:")
        self.add_line(traceback.format_exc())

    def text(self):
        return "\n".join(self.report_content) + "\n"

    def write_report(self, filename="report.txt"):
        """Writes the report atomically into the run directory and returns its path."""
        return self.fsm.write_text(self.run_name, filename, self.text())
