"""Exception types shared across the package."""


class SlateOpeError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidSlateError(SlateOpeError, ValueError):
    """A slate does not fit its spec (wrong length or action out of range)."""


class AbsoluteContinuityError(SlateOpeError, ValueError):
    """The target policy puts mass where the logging policy has none."""


class DegenerateSlotError(SlateOpeError, ValueError):
    """A slot divergence is zero, so the control-variate weights are singular."""


class CapacityError(SlateOpeError, RuntimeError):
    """An enumeration was requested over more slates than the configured cap."""


class ConfigError(SlateOpeError, ValueError):
    """Experiment configuration is missing, malformed, or out of range."""
