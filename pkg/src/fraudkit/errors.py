"""Exception hierarchy. The CLI maps each class to an exit code."""


class FraudkitError(Exception):
    exit_code = 2


class DataError(FraudkitError):
    """Bad input data: malformed rows, unknown ids, non-finite cells."""

    exit_code = 1


class ContractError(FraudkitError):
    """Violated precondition or schema mismatch between artifacts."""

    exit_code = 2


class ConfigError(ContractError):
    pass
