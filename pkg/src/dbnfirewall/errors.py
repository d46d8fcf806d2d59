"""Exception hierarchy shared by every module."""


class FirewallError(Exception):
    """Base class for all package errors."""


class EmptyInputError(FirewallError):
    pass


class ShapeMismatchError(FirewallError):
    pass


class DimensionMismatchError(FirewallError):
    pass


class EmptyBatchError(FirewallError):
    pass


class TooLargeError(FirewallError):
    pass


class EmptyDataError(FirewallError):
    pass


class UnknownLabelError(FirewallError):
    pass


class IoFailureError(FirewallError):
    pass


class BadMagicError(FirewallError):
    pass


class ChecksumMismatchError(FirewallError):
    pass


class VersionUnsupportedError(FirewallError):
    pass


class BadLabelError(FirewallError):
    def __init__(self, line_no: int, label: str):
        super().__init__(f"line {line_no}: unknown label {label!r}")
        self.line_no = line_no
        self.label = label


class DuplicatePathError(FirewallError):
    pass


class NoPositivesError(FirewallError):
    """TPR is undefined when the evaluated set has no malicious samples."""


class AuthFailureError(FirewallError):
    pass


class DuplicateVerdictError(FirewallError):
    pass


class EmptyVerdictsError(FirewallError):
    pass


class UnknownNodeError(FirewallError):
    pass


class ChainFormatError(FirewallError):
    """Serialized chain could not be decoded; ``index`` is the block being read."""

    def __init__(self, index: int, msg: str):
        super().__init__(f"block {index}: {msg}")
        self.index = index
