"""Exception hierarchy. The CLI maps each class to an exit code."""


class EcpError(Exception):
    exit_code = 1


class ConfigError(EcpError, ValueError):
    """Invalid parameters or configuration."""

    exit_code = 2


class InputDataError(EcpError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class InvariantViolation(EcpError, RuntimeError):
    """An internal guarantee was broken; indicates a bug upstream."""

    exit_code = 4
