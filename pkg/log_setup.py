#!/usr/bin/env python3
"""
Logging helpers: library modules call get_logger(__name__), the CLI calls
setup_logging() once to attach a rich handler.
"""

import logging

from rich.console import Console
from rich.logging import RichHandler

ROOT_LOGGER = "epinet"


def get_logger(name: str) -> logging.Logger:
    """Logger nested under the epinet root so one handler covers every module"""
    if name == "__main__":
        name = "cli"
    return logging.getLogger(f"{ROOT_LOGGER}.{name}")


def setup_logging(verbose: bool = False, console: Console = None) -> logging.Logger:
    """Library loggers report warnings, the CLI logger info; --verbose opens everything to DEBUG"""
    root = logging.getLogger(ROOT_LOGGER)
    for handler in list(root.handlers):
        root.removeHandler(handler)

    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=verbose,
        rich_tracebacks=verbose,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)
    get_logger("cli").setLevel(logging.DEBUG if verbose else logging.INFO)
    return root
