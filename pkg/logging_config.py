import logging
import os
import json
import tempfile
from logging.handlers import RotatingFileHandler
from datetime import datetime

APP_NAME = 'MultiDag'


def _writable_log_dir(log_dir):
    """Return log_dir if we can write there, else a temp directory"""
    try:
        os.makedirs(log_dir, exist_ok=True)
        test_file = os.path.join(log_dir, '.write_test')
        with open(test_file, 'w') as f:
            f.write('test')
        os.remove(test_file)
        return log_dir
    except (PermissionError, OSError):
        fallback = os.path.join(tempfile.gettempdir(), 'multidag-logs')
        os.makedirs(fallback, exist_ok=True)
        return fallback


def setup_logging(app_name=APP_NAME, log_dir=None, level=logging.INFO, console=True):
    """
    Setup logging for a multidag run.

    Returns (logger, run_logger). Library modules log through children
    of ``app_name`` (``MultiDag.Solver`` etc.) and never add handlers.
    """
    if log_dir is None:
        log_dir = os.environ.get('LOG_DIR', 'logs')
    log_dir = _writable_log_dir(log_dir)

    logger = logging.getLogger(app_name)
    logger.setLevel(level)
    logger.handlers.clear()

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(module)s:%(lineno)d - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    # 1. Console
    if console:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(level)
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

    # 2. Everything, rotated by size
    all_logs_handler = RotatingFileHandler(
        filename=os.path.join(log_dir, 'multidag.log'),
        maxBytes=10*1024*1024,  # 10MB
        backupCount=10,
        encoding='utf-8'
    )
    all_logs_handler.setLevel(logging.DEBUG)
    all_logs_handler.setFormatter(formatter)
    logger.addHandler(all_logs_handler)

    # 3. Errors only
    error_handler = RotatingFileHandler(
        filename=os.path.join(log_dir, 'errors.log'),
        maxBytes=5*1024*1024,
        backupCount=5,
        encoding='utf-8'
    )
    error_handler.setLevel(logging.ERROR)
    error_handler.setFormatter(formatter)
    logger.addHandler(error_handler)

    # 4. Pipeline activity, one JSON payload per line
    run_handler = RotatingFileHandler(
        filename=os.path.join(log_dir, 'runs.log'),
        maxBytes=5*1024*1024,
        backupCount=30,
        encoding='utf-8'
    )
    run_handler.setLevel(logging.INFO)
    run_handler.setFormatter(logging.Formatter(
        '%(asctime)s - RUN - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    ))

    run_logger = logging.getLogger(f'{app_name}.Runs')
    run_logger.handlers.clear()
    run_logger.addHandler(run_handler)
    run_logger.setLevel(logging.INFO)
    run_logger.propagate = False

    logger.debug(f"Logging initialized in {log_dir}")
    return logger, run_logger


def get_logger(component):
    """Child logger for a library component, e.g. get_logger('Solver')"""
    return logging.getLogger(f'{APP_NAME}.{component}')


def log_run(run_logger, action, **details):
    """Log a pipeline event (score written, fit finished, sweep point...)"""
    log_data = {
        'action': action,
        'timestamp': datetime.now().isoformat(),
        **details
    }
    run_logger.info(f"{action}: {json.dumps(log_data, default=str)}")
