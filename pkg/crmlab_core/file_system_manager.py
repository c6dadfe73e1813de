import os
import shutil
import logging
import tempfile
import threading
import time

logger = logging.getLogger(__name__)


def atomic_write_text(path, text):
    """Write text to path through a temporary file and an atomic rename.

    Args:
        path (str): Destination file.
        text (str): Full file content.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    temp_fd, temp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(temp_fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(temp_path, path)
    except Exception:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise


class FileSystemManager:
    """Manages the output directory tree of runs and sweeps.

    Every run gets its own directory ``<output>/<scenario name>/``. Runs that
    fail are moved to the ``failed`` subdirectory instead of being deleted, so
    partial artifacts stay available for inspection.

    Attributes:
        config: Application configuration dictionary
        output_dir: Base directory where all run directories are created
        failed_dir: Directory for runs that raised or diverged
        logs_dir: Directory for log files
    """

    def __init__(self, config):
        """Initialize the FileSystemManager.

        Args:
            config (dict): Application configuration containing directory paths.
        """
        self.config = config
        directories = config.get("directories", {})
        self.output_dir = os.path.expanduser(directories.get("output", "./crmlab_output"))
        self.failed_subdir = directories.get("failed_subdir", "failed")
        self.failed_dir = os.path.join(self.output_dir, self.failed_subdir)
        self.logs_dir = os.path.expanduser(directories.get("logs", "./crmlab_output/logs"))
        self._lock = threading.Lock()

        os.makedirs(self.output_dir, exist_ok=True)
        logger.debug(f"FileSystemManager initialized. Output: {self.output_dir}, Failed: {self.failed_dir}")

    def get_run_path(self, run_name):
        return os.path.join(self.output_dir, run_name)

    def prepare_run_directory(self, run_name):
        """Create an empty directory for a run, clearing stale artifacts of a previous run."""
        run_path = self.get_run_path(run_name)
        with self._lock:
            if os.path.isdir(run_path):
                shutil.rmtree(run_path)
            os.makedirs(run_path, exist_ok=True)
        return run_path

    def write_text(self, run_name, filename, text):
        path = os.path.join(self.get_run_path(run_name), filename)
        atomic_write_text(path, text)
        logger.debug(f"Wrote {path}")
        return path

    def quarantine_run(self, run_name, reason="Unknown error"):
        """Move a run directory to the failed area.

        Args:
            run_name: Name of the run directory under the output directory
            reason: Short explanation recorded in the log
        """
        run_path = self.get_run_path(run_name)
        if not os.path.exists(run_path):
            logger.warning(f"Attempted to quarantine non-existent run path: {run_path}")
            return None

        failed_path = os.path.join(self.failed_dir, run_name)
        os.makedirs(os.path.dirname(failed_path), exist_ok=True)
        with self._lock:
            if os.path.exists(failed_path):
                logger.warning(f"Failed path {failed_path} already exists. Appending timestamp.")
                failed_path = f"{failed_path}_{int(time.time())}"
            try:
                shutil.move(run_path, failed_path)
                logger.warning(f"Moved run {run_name} to {failed_path}. Reason: {reason}")
            except Exception as e:
                logger.error(f"Failed to move run {run_name} to quarantine: {e}", exc_info=True)
                return None
        return failed_path
