"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError and friends -> 2,
protocol/crypto failures -> 3, I/O problems -> 4.
"""


class FcdfError(Exception):
    """Base class for all package errors."""


class ValidationError(FcdfError):
    """Invalid user-supplied value (bad n, empty dataset, out-of-range config)."""


class ParameterError(ValidationError):
    """No ring parameters satisfy the requested constraints."""


class ContractError(FcdfError):
    """API contract violated: mismatched ring params, domain tags or policies."""


class EncodingError(FcdfError):
    """Plaintext value outside the declared bound of the fixed-point encoding."""


class NoiseBudgetError(FcdfError):
    """Refusing an operation whose result could decrypt incorrectly."""


class PolicyError(ValidationError):
    """Client domain summaries cannot be merged into one distribution policy."""


class PartitionError(ValidationError):
    """Partition constraints cannot be met (e.g. a starved class)."""


class FramingError(FcdfError):
    """Malformed wire frame. ``offset`` is the byte position of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ProtocolError(FcdfError):
    """Protocol-level failure: out-of-phase message, abort, or timeout."""
