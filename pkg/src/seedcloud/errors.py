"""Exception types shared across the toolkit."""


class SeedCloudError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SeedCloudError):
    """Operand rank or dimension mismatch."""


class ConfigError(SeedCloudError):
    """Invalid configuration value or unknown config key."""


class UsageError(SeedCloudError):
    """API misuse: empty inputs, out-of-range requests, non-scalar backward."""


class DataError(SeedCloudError):
    """File parsing or dataset construction failure (carries line numbers where known)."""


class DegenerateInputError(SeedCloudError):
    """Geometrically or statistically degenerate input (zero-radius cloud, batch too small)."""


class NumericsError(SeedCloudError):
    """Non-finite value surfaced by an operation."""


class TrainingDiverged(SeedCloudError):
    """Training loss became non-finite; message carries the offending batch."""
