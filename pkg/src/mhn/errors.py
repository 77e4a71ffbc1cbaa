"""Exception types shared across the package."""


class MHNError(Exception):
    """Base class for all package errors."""


class DimensionError(MHNError, ValueError):
    pass


class EmptySequenceError(DimensionError):
    pass


class ContractError(MHNError):
    """A caller broke an operation's precondition (non-scalar loss, missing grad, ...)."""


class ConfigError(MHNError, ValueError):
    pass


class FormatError(MHNError):
    """Malformed on-disk data. ``offset`` is the byte position where reading failed."""

    def __init__(self, message, offset=None, index=None):
        parts = [message]
        if index is not None:
            parts.append(f"record {index}")
        if offset is not None:
            parts.append(f"byte offset {offset}")
        super().__init__(", ".join(parts))
        self.offset = offset
        self.index = index
