import logging
import os

import colorlog
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Runtime Configuration
RUNTIME_CONFIG = {
    'num_workers': int(os.getenv('SSLDETR_NUM_WORKERS', '0')),
    'log_level': os.getenv('SSLDETR_LOG_LEVEL', 'INFO').upper(),
    'device': os.getenv('SSLDETR_DEVICE', 'cpu'),
    'runs_dir': os.getenv('SSLDETR_RUNS_DIR', 'runs'),
}

LOG_FORMAT = "%(log_color)s%(asctime)s %(levelname)-8s%(reset)s %(name)s: %(message)s"


def setup_logging(level: str = None) -> None:
    """Attach a colored stream handler to the root logger"""
    level = (level or RUNTIME_CONFIG['log_level']).upper()
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(
        LOG_FORMAT,
        datefmt="%H:%M:%S",
        log_colors={
            'DEBUG': 'cyan',
            'INFO': 'green',
            'WARNING': 'yellow',
            'ERROR': 'red',
            'CRITICAL': 'red,bg_white',
        },
    ))
    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(level)


def progress_enabled() -> bool:
    """tqdm bars follow the log level: hidden when INFO is filtered out"""
    return logging.getLogger().getEffectiveLevel() <= logging.INFO
