class EASTError(Exception):
    exit_code = 1


class ConfigError(EASTError, ValueError):
    exit_code = 3


class DatasetFormatError(EASTError, OSError):
    exit_code = 4

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ContractError(EASTError, ValueError):
    """A caller violated an operation's precondition."""


class LeakageError(EASTError, RuntimeError):
    """A frame at or past the observation boundary was read at inference time."""
    exit_code = 6


class NumericError(EASTError, FloatingPointError):
    exit_code = 7


class CheckpointError(EASTError):
    exit_code = 5
