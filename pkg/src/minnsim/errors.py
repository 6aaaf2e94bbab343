"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Input lies outside the mathematical domain of the operation."""


class ContractError(ValueError):
    """A documented call precondition was violated."""


class GraphError(RuntimeError):
    """Misuse of the computation graph (non-scalar loss, stale gradients, ...)."""


class GradCheckError(RuntimeError):
    """Gradient checking could not be completed (non-finite values etc.)."""


class ConfigError(ValueError):
    """Bad experiment configuration (unknown key, unparsable or invalid value)."""


class IdxFormatError(ValueError):
    """Malformed IDX container (wrong magic, truncated payload)."""


class DataError(ValueError):
    """Well-formed file with out-of-contract content (e.g. label > 9)."""


class CheckpointError(ValueError):
    """Checkpoint file is incompatible or damaged."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered during training."""
