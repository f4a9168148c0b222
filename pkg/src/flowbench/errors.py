"""Exception types shared across the workbench."""

from __future__ import annotations


class FlowbenchError(Exception):
    """Base class for all workbench errors."""


class DegenerateShape(FlowbenchError):
    """A shape produced no usable solid region."""


class UnstableConfig(FlowbenchError):
    """Solver configuration outside the stable relaxation range."""


class PlacementError(FlowbenchError):
    """Obstacle does not fit inside the flow domain."""


class DivergedSimulation(FlowbenchError):
    """Lattice state became non-physical (non-finite or supersonic)."""

    def __init__(self, reason: str, time_step: int):
        super().__init__(f"diverged at step {time_step}: {reason}")
        self.reason = reason
        self.time_step = time_step


class SingularKernel(FlowbenchError):
    """Kernel matrix not positive definite even at the jitter floor."""


class DimensionMismatch(FlowbenchError):
    """Input dimensionality does not match the model."""


class UnsupportedDimension(FlowbenchError):
    """Requested Sobol dimension outside the supported range."""


class EmptyArchive(FlowbenchError):
    """Operation requires at least one elite in the archive."""


class InsufficientElites(FlowbenchError):
    """Fewer occupied niches than requested selections."""


class BudgetExhausted(FlowbenchError):
    """Run aborted early; carries whatever results were produced."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class DivergedTraining(FlowbenchError):
    """Model training produced a non-finite loss even after restarts."""


class ValidationError(FlowbenchError):
    """Configuration or request violates one or more invariants."""

    def __init__(self, fields: dict[str, str]):
        self.fields = dict(fields)
        details = "; ".join(f"{k}: {v}" for k, v in sorted(self.fields.items()))
        super().__init__(f"invalid configuration: {details}")


class NotFound(FlowbenchError):
    """Requested run or artifact does not exist."""


class ConflictingRunId(FlowbenchError):
    """A run with this id already exists."""


class CorruptArtifact(FlowbenchError):
    """Stored artifact failed its checksum or schema check."""


class StorageFull(FlowbenchError):
    """Backing storage refused the write."""


class EmptyRegion(FlowbenchError):
    """Zoom region contains no parent elites and filling is disabled."""
