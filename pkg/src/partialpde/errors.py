"""Exception taxonomy shared across the package."""


class PartialPdeError(Exception):
    """Base class for all package errors."""


class ShapeError(PartialPdeError):
    """Array shapes are inconsistent with the operation's contract."""


class InvalidObservation(PartialPdeError):
    """Observation spec is malformed or out of bounds for the source grid."""


class FormatError(PartialPdeError):
    """On-disk tensor or manifest data is corrupt or not in the expected format."""


class IncompleteDataset(PartialPdeError):
    """A manifest references tensor files that are missing on disk."""


class BindingError(PartialPdeError):
    """A graph input was left unbound."""


class ContractError(PartialPdeError):
    """An API precondition was violated (e.g. backward from a non-scalar)."""


class NumericalError(PartialPdeError):
    """A NaN/Inf appeared where finite values are required."""


class GridTooSmall(PartialPdeError):
    """Grid extent is below the minimum required by a stencil."""


class ChannelError(PartialPdeError):
    """State channel count does not match the physical system."""


class WindowError(PartialPdeError):
    """Observation window length does not match the model configuration."""


class UnsupportedOperation(PartialPdeError):
    """Requested operation is not available for this configuration."""


class DegenerateLabel(PartialPdeError):
    """A relative error was requested against a zero-norm reference."""


class HorizonError(PartialPdeError):
    """Trajectory is too short for the requested rollout horizon."""


class MissingCheckpoint(PartialPdeError):
    """No checkpoint found at the given location."""


class UsageError(PartialPdeError):
    """Malformed command line or config file input."""


class GenerationError(PartialPdeError):
    """Data generation failed (e.g. repeated blow-ups while sampling ICs)."""
