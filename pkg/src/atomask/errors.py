"""Exception hierarchy shared by all modules."""


class AtomaskError(Exception):
    """Base class for package errors."""


class ConfigError(AtomaskError, ValueError):
    """Invalid or inconsistent configuration."""


class ComputeError(AtomaskError, RuntimeError):
    """A numerical computation could not be completed."""


class SingularEnergy(ComputeError):
    """Kinetic energy E - U reached zero along a trajectory."""


class StepLimitExceeded(ComputeError):
    """The integrator hit max_steps before reaching the end point."""


class NoFocus(ComputeError):
    """A paraxial ray never crossed the axis before the search limit."""


class RayError(ComputeError):
    """A failure inside a batch, tagged with the offending ray index."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"ray {index}: {type(cause).__name__}: {cause}")


class IoError(AtomaskError, OSError):
    """Reading or writing an artifact failed."""
