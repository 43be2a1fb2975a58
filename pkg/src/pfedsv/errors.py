"""Exception types shared across the simulator."""


class SimulatorError(Exception):
    """Base class for all pfedsv errors."""


class PlayerLimitExceeded(SimulatorError):
    """Exact Shapley enumeration requested for more players than the method allows."""


class NonFiniteLoss(SimulatorError):
    """Training loss became NaN or Inf, typically a too-high learning rate."""


class DimensionMismatch(SimulatorError):
    """Array shapes or record counts disagree."""


class EmptyCoalition(SimulatorError):
    """An aggregation was requested over zero members."""


class ArchMismatch(SimulatorError):
    """Parameter vectors built for different architectures were combined."""


class WeightsNotNormalized(SimulatorError):
    """Aggregation weights are negative or do not sum to one."""


class BadMagic(SimulatorError):
    """IDX file does not start with the expected magic number."""


class TruncatedFile(SimulatorError):
    """IDX file ends before the payload its header promises."""


class InfeasiblePartition(SimulatorError):
    """Requested shard layout cannot be built from the dataset."""


class SliceTooSmall(SimulatorError):
    """Client data slice too small to carve train/validation/test splits."""


class ParseError(SimulatorError):
    """Config file is syntactically invalid or contains unknown keys."""


class ValidationError(SimulatorError):
    """Config value is outside its documented range."""
