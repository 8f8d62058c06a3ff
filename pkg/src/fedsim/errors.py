"""Exception types shared across the package."""


class FedSimError(Exception):
    """Base class for every error raised by fedsim."""


class InvalidArgument(FedSimError, ValueError):
    pass


class NumericFault(FedSimError, FloatingPointError):
    """A non-finite value reached an operation that requires finite input."""


class PartitionFailure(FedSimError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FormatError(FedSimError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(FedSimError, ValueError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path
