"""Exception hierarchy shared by every edgeseg module.

Library code raises these; only :mod:`edgeseg.cli` turns them into a message on
stderr and a process exit status. Each class carries a short ``category`` name
(printed in front of the message) and the ``exit_status`` the CLI returns.
"""


class EdgesegError(Exception):
    """Base class for all edgeseg failures."""

    category = "error"
    exit_status = 1


class UsageError(EdgesegError):
    """Bad flags, bad or unknown config keys, mismatched case lists."""

    category = "usage"
    exit_status = 2


class ContractError(EdgesegError, ValueError):
    """A documented precondition was violated (shapes, binarity, bounds)."""

    category = "contract"
    exit_status = 3


class ShapeError(ContractError):
    """Input spatial shape is not legal for the network's strides."""

    category = "shape"


class MetaImageFormatError(EdgesegError):
    """A MetaImage header is missing a key or holds a value that cannot be decoded."""

    category = "format"
    exit_status = 4

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


class TruncatedDataError(MetaImageFormatError):
    """The raw payload does not hold DimSize scalars."""

    def __init__(self, expected: int, found: int) -> None:
        super().__init__("DimSize", f"header declares {expected} scalars, data file holds {found}")
        self.expected = expected
        self.found = found


class CheckpointError(EdgesegError):
    """Checkpoint file is unreadable, untagged, or does not match the model."""

    category = "checkpoint"
    exit_status = 4

    def __init__(self, message: str, names: list[str] | None = None) -> None:
        if names:
            message = f"{message}: {', '.join(names)}"
        super().__init__(message)
        self.names = list(names or [])


class DataError(EdgesegError):
    """The data root holds no usable cases."""

    category = "data"
    exit_status = 5


class NonFiniteLossError(EdgesegError):
    """A loss term became NaN or infinite during training."""

    category = "training"
    exit_status = 6

    def __init__(self, term: str, iteration: int, value: float) -> None:
        super().__init__(f"loss term '{term}' is {value} at iteration {iteration}")
        self.term = term
        self.iteration = iteration
        self.value = value
