"""Exception hierarchy shared by every stage of the pipeline."""


class XlqaError(Exception):
    """Base class for all errors raised by this package."""


class InputError(XlqaError, ValueError):
    """Malformed or out-of-contract input (bad UTF-8, bad ids, bad arguments)."""


class FormatError(InputError):
    """A file does not follow its declared on-disk format."""


class ValidationError(InputError):
    """A record parsed fine but violates a domain invariant."""


class LengthError(InputError):
    """A sequence exceeds the configured maximum length."""


class ContractError(XlqaError, RuntimeError):
    """A caller broke an API precondition (shape mismatch, non-scalar root, ...)."""


class TrainingError(XlqaError, RuntimeError):
    """Training diverged; carries enough context to locate the failing step."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
