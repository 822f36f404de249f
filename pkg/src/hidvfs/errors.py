"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid configuration value or unknown identifier."""


class SchedulingError(Exception):
    """A schedule decision cannot be executed (e.g. empty core set)."""


class TrainingError(Exception):
    """Training produced a non-finite loss or otherwise cannot continue."""
