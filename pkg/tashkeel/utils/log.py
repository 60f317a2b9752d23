import logging
import os
from pathlib import Path
import sys


FORMATTER = logging.Formatter(
    "%(asctime)s [%(module)s] %(levelname)s: %(message)s"
)

LOG_FILE_NAME = "tashkeel.log"


def get_console_handler():
    # data goes to files, logs go to stderr
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(FORMATTER)
    return console_handler


def set_file_handler(logger, log_dir) -> logging.Logger:
    """
    Set the file handler to additionally write all logs to `tashkeel.log`
    in the specified (run) directory

    Parameters
    ----------
    logger : logging.Logger
        logging handler
    log_dir : str
        path to where to write log file to

    Returns
    -------
    logging.Logger
        the given logger with the file handler attached
    """
    log_file = os.path.abspath(os.path.join(log_dir, LOG_FILE_NAME))

    if any(
        isinstance(x, logging.FileHandler)
        and getattr(x, "baseFilename", None) == log_file
        for x in logger.handlers
    ):
        # file handler for this directory already set => use it
        logger.debug("Log file handler already set to %s", log_file)
        return logger

    check_write_permission_to_log_dir(log_dir)
    Path(log_dir).mkdir(parents=True, exist_ok=True)

    logger.info("Initialised log FileHandler, writing log to %s", log_file)

    file_handler = logging.FileHandler(log_file, encoding="utf-8")
    file_handler.setFormatter(FORMATTER)

    logger.addHandler(file_handler)

    return logger


def remove_file_handlers(logger) -> None:
    """
    Detach and close all file handlers on the logger, called once a run
    has finished writing to its run directory

    Parameters
    ----------
    logger : logging.Logger
        logging handler
    """
    for handler in [
        x for x in logger.handlers if isinstance(x, logging.FileHandler)
    ]:
        logger.removeHandler(handler)
        handler.close()


def check_write_permission_to_log_dir(log_dir) -> None:
    """
    Check that the given log dir, or highest parent dir that exists, is
    writable

    Parameters
    ----------
    log_dir : str
        path to log dir

    Raises
    ------
    PermissionError
        Raised if path supplied is not writable
    """
    while log_dir:
        if not os.path.exists(log_dir):
            log_dir = Path(log_dir).parent
            continue

        if not os.access(log_dir, os.W_OK):
            raise PermissionError(
                f"Path to provided log directory {log_dir} does not appear to"
                " have write permission for current user"
            )
        else:
            return


def get_logger(logger_name, log_level=logging.INFO) -> logging.Logger:
    """
    Initialise the logger

    Parameters
    ----------
    logger_name : str
        name of the logger to intialise
    log_level : int | str
        level of logging to set

    Returns
    -------
    logging.Logger
        handle to configured logger
    """
    if logging.getLogger(logger_name).handlers:
        # logger already exists => use it
        return logging.getLogger(logger_name)

    logger = logging.getLogger(logger_name)

    if log_level:
        logger.setLevel(log_level)

    logger.addHandler(get_console_handler())
    logger.propagate = False

    return logger
