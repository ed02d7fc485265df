"""
Error types for the multidag toolkit.

Every failure surfaced to the command line maps to one exit code:
input problems (2), capacity limits (3), numerical breakdowns (4) and
solver/encoder bugs (5). 0 and 1 are reserved for successful runs
(proven optimal / gap limited).
"""


class MultiDagError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 2


class InputError(MultiDagError):
    """Malformed input, dimension mismatch, bad configuration"""
    exit_code = 2


class CacheParseError(InputError):
    """Malformed score-cache file"""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


class CapacityError(MultiDagError):
    """Enumeration or brute-force budget exceeded"""
    exit_code = 3


class NumericalError(MultiDagError):
    """Degenerate predictive variance inside the Kalman recursion"""
    exit_code = 4

    def __init__(self, message, **context):
        self.context = context
        if context:
            details = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({details})"
        super().__init__(message)


class SolverError(MultiDagError):
    """Infeasible or inconsistent encoding; indicates an encoder bug"""
    exit_code = 5
