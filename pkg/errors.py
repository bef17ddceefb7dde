#!/usr/bin/env python3
"""
Exception hierarchy for epinet.

Library modules raise these; only the CLI turns them into exit codes.
"""

from typing import Optional


class EpinetError(Exception):
    """Base class for every error raised by epinet"""

    exit_code = 1

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def with_stage(self, stage: str) -> "EpinetError":
        """Tag the error with the pipeline stage it surfaced in (first tag wins)"""
        if self.stage is None:
            self.stage = stage
        return self

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class ConfigError(EpinetError):
    """Invalid scenario configuration"""

    exit_code = 2


class DataError(ConfigError):
    """Malformed or inconsistent input tables"""


class SolverError(EpinetError):
    """A numerical routine failed"""

    exit_code = 3


class ConvergenceError(SolverError):
    """Iteration limit reached before the tolerance was met"""


class InstabilityError(SolverError):
    """Integrated state left the unit interval"""


class ConnectivityError(SolverError):
    """A matrix that must be irreducible is not"""


class InfeasibleError(SolverError):
    """Problem has no admissible solution under the given parameters"""


class DomainError(SolverError, ValueError):
    """Argument outside the domain of a cost or rate function"""
