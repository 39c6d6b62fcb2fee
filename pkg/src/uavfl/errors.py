"""Exception classes shared across the simulator."""


class UavflError(Exception):
    """Base class for all simulator errors."""


class FleetError(UavflError):
    """Invalid fleet construction (too few drones, bad area, ...)."""


class ConfigError(UavflError):
    """Configuration file failed validation; message carries the key path."""


class PlanError(UavflError):
    """Training plan violates a method precondition."""


class AggregationError(UavflError):
    """Parameter sets with mismatched layouts cannot be averaged."""


class MixingMatrixError(UavflError):
    """Mixing matrix is not stochastic or disagrees with the neighbor graph."""


class LinkInfeasibleError(UavflError):
    """Shannon rate for a link fell below the usable floor (< 1 bit/s)."""


class PartialLogError(UavflError):
    """The metrics sink failed mid-run; the log on disk is incomplete."""


class TrainingDivergedError(UavflError):
    """Local training produced a non-finite loss or parameter value."""

    def __init__(self, message: str, *, drone_id: int | None = None,
                 epoch: int | None = None, global_epoch: int | None = None):
        super().__init__(message)
        self.drone_id = drone_id
        self.epoch = epoch
        self.global_epoch = global_epoch
