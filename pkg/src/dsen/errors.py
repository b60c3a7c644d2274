"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class DataFormatError(IOError):
    """A serialized file is corrupt or not in the expected format."""


class VersionError(DataFormatError):
    """A serialized file carries an unsupported format version."""


class TrainingDivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")


class ProtocolError(ValueError):
    """Evaluation inputs violate the ranking protocol."""
