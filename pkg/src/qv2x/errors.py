"""Exception hierarchy shared across the toolkit."""


class QV2XError(Exception):
    """Base class for all toolkit errors."""


class CapacityError(QV2XError):
    """Requested register exceeds the dense-simulation qubit cap."""


class DomainError(QV2XError, ValueError):
    """Argument outside its documented numeric or structural domain."""


class IntegrityError(QV2XError):
    """Payload fails validation: unknown token, corrupted handle, bad checkpoint."""


class ProtocolError(QV2XError):
    """Multi-party bookkeeping violated: roster mismatch, missing pair seed."""


class ConfigError(QV2XError):
    """Scenario config is malformed or contains unknown keys."""


class DataError(QV2XError):
    """Dataset file is malformed or fails a dataset-level precondition."""


class CheckFailure(QV2XError):
    """A run-level acceptance property did not hold."""
