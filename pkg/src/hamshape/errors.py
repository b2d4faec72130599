"""Exception hierarchy and process exit codes."""


class HamshapeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(HamshapeError):
    """Invalid run configuration (bad paths, out-of-range values, bad schema)."""


class BasisError(ConfigError):
    """Basis function violates channel or mode constraints."""


class DataError(HamshapeError):
    """Dataset or EMG ingestion failure (missing columns, units, empty data)."""


class SolverError(HamshapeError):
    """Optimizer failed to converge or received an ill-posed problem."""


class IntegrationError(HamshapeError):
    """Simulation produced a non-finite state."""


class InternalConsistencyError(HamshapeError):
    """A structural invariant of the dynamics failed (implementation bug)."""


# CLI exit codes. 0 is success; anything unrecognized maps to 1.
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4
EXIT_INTEGRATION = 5


def exit_code_for(kind: str) -> int:
    return {
        "config": EXIT_CONFIG,
        "data": EXIT_DATA,
        "solver": EXIT_SOLVER,
        "integration": EXIT_INTEGRATION,
    }.get(kind, EXIT_FAILURE)


def error_kind(exc: BaseException) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, DataError):
        return "data"
    if isinstance(exc, SolverError):
        return "solver"
    if isinstance(exc, IntegrationError):
        return "integration"
    return "internal"
