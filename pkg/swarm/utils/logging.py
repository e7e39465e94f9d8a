import logging
import sys
from pathlib import Path
from logging.handlers import RotatingFileHandler
from typing import Union

COMPONENT_LOGGERS = (
    'SwarmLauncher',
    'CollaborativeSwarm',
    'SwarmCoordinator',
    'SwarmWorker',
    'SwarmHandlers',
    'SwarmExperiment',
    'SwarmVerify',
    'SwarmModels',
    'SwarmData',
)


def setup_logging(log_dir: Union[str, Path] = 'logs', level: Union[int, str] = logging.INFO) -> logging.Logger:
    """Configure console and rotating file logging for every swarm component"""
    logs_dir = Path(log_dir)
    logs_dir.mkdir(parents=True, exist_ok=True)

    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    log_format = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(log_format)
    console_handler.setLevel(level)

    file_handler = RotatingFileHandler(
        logs_dir / 'swarm.log',
        maxBytes=5000000,
        backupCount=5
    )
    file_handler.setFormatter(log_format)
    file_handler.setLevel(level)

    # Handlers live on the root logger only; component loggers propagate to it.
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, '_swarm_handler', False):
            root.removeHandler(handler)
            handler.close()
    for handler in (console_handler, file_handler):
        handler._swarm_handler = True
        root.addHandler(handler)
    root.setLevel(level)

    for name in COMPONENT_LOGGERS:
        logging.getLogger(name).setLevel(level)

    launcher_logger = logging.getLogger('SwarmLauncher')
    launcher_logger.debug(f"Logging setup complete (dir={logs_dir}, level={logging.getLevelName(level)})")
    return launcher_logger
