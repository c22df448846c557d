"""Exception hierarchy shared across the package."""


class HsiError(Exception):
    """Base class for all package errors."""


class DimensionError(HsiError, ValueError):
    pass


class InvalidInputError(HsiError, ValueError):
    pass


class InvalidLabelError(HsiError, ValueError):
    pass


class ContractError(HsiError, ValueError):
    pass


class ParameterError(HsiError, ValueError):
    pass


class ConfigurationError(HsiError, ValueError):
    """Raised for invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class SpecError(HsiError, ValueError):
    pass


class FormatError(HsiError, ValueError):
    """Malformed binary file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IncompatibleCheckpointError(HsiError, ValueError):
    pass


class NonFiniteGradientError(HsiError, FloatingPointError):
    def __init__(self, name, message=None):
        super().__init__(message or f"non-finite gradient in parameter '{name}'")
        self.name = name
