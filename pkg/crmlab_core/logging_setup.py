import logging
import os
import sys

# Run and sweep lifecycle events go to their own logger
TRANSACTION_LOGGER_NAME = "transaction"

_HANDLER_TAG = "_crmlab_handler"


def _tagged(handler):
    setattr(handler, _HANDLER_TAG, True)
    return handler


def _drop_tagged_handlers(log):
    for handler in list(log.handlers):
        if getattr(handler, _HANDLER_TAG, False):
            log.removeHandler(handler)
            handler.close()


def setup_logging(config, level_override=None):
    """Sets up console, application file and transaction file logging.

    Calling it again replaces the handlers installed by the previous call, so
    repeated in-process runs do not duplicate output.

    Args:
        config (dict): Loaded configuration; reads ``logging`` and ``directories.logs``.
        level_override (str): Level name from the command line, wins over ``logging.level``.
    """
    log_config = config.get("logging", {})
    log_level_str = (level_override or log_config.get("level", "INFO")).upper()
    log_format_str = log_config.get("format", "%(asctime)s [%(levelname)s] %(name)s: %(message)s")

    log_level = getattr(logging, log_level_str, logging.INFO)

    logs_dir = os.path.expanduser(config.get("directories", {}).get("logs", "./crmlab_output/logs"))
    app_log_path = os.path.join(logs_dir, log_config.get("application_log_file", "application.log"))
    trans_log_path = os.path.join(logs_dir, log_config.get("transaction_log_file", "transaction.log"))

    root_logger = logging.getLogger()
    transaction_logger = logging.getLogger(TRANSACTION_LOGGER_NAME)
    _drop_tagged_handlers(root_logger)
    _drop_tagged_handlers(transaction_logger)

    console_handler = _tagged(logging.StreamHandler(sys.stdout))
    console_handler.setFormatter(logging.Formatter(log_format_str))
    root_logger.addHandler(console_handler)
    root_logger.setLevel(log_level)

    try:
        os.makedirs(logs_dir, exist_ok=True)
    except OSError as e:
        # Console only
        logging.error(f"Could not create logs directory {logs_dir}: {e}. Falling back to console logging.")
        return

    try:
        app_file_handler = _tagged(logging.FileHandler(app_log_path))
        app_file_handler.setFormatter(logging.Formatter(log_format_str))
        app_file_handler.setLevel(log_level)
        root_logger.addHandler(app_file_handler)
        logging.info(f"Application logging configured. Level: {log_level_str}. File: {app_log_path}")
    except OSError as e:
        logging.error(f"Failed to configure application file logger at {app_log_path}: {e}", exc_info=True)

    try:
        transaction_logger.setLevel(log_level)
        transaction_logger.propagate = False

        trans_file_handler = _tagged(logging.FileHandler(trans_log_path))
        trans_log_format_str = log_config.get("transaction_log_format", "%(asctime)s TXN [%(levelname)s]: %(message)s")
        trans_file_handler.setFormatter(logging.Formatter(trans_log_format_str))
        trans_file_handler.setLevel(log_level)
        transaction_logger.addHandler(trans_file_handler)
        transaction_logger.info(f"Transaction logging configured. Level: {log_level_str}. File: {trans_log_path}")
    except OSError as e:
        logging.error(f"Failed to configure transaction file logger at {trans_log_path}: {e}", exc_info=True)
