import logging
import os
import sys


def setup_logger(name="AnisoSIO"):
    logger = logging.getLogger(name)
    logger.setLevel(os.getenv("ANISO_SIO_LOG_LEVEL", "INFO").upper())

    if not logger.handlers:
        # Console handler
        console_handler = logging.StreamHandler(sys.stdout)
        fmt = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
        console_handler.setFormatter(fmt)
        logger.addHandler(console_handler)

        # File handler keeps the trail of long verification runs; empty path disables it
        log_file = os.getenv("ANISO_SIO_LOG_FILE", "aniso_sio.log")
        if log_file:
            file_handler = logging.FileHandler(log_file, encoding="utf-8")
            file_handler.setFormatter(fmt)
            logger.addHandler(file_handler)

    return logger


logger = setup_logger()
