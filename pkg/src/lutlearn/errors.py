class ConfigError(ValueError):
    """Invalid shapes, infeasible (K, P) choices, bad tiling, bad config values."""


class FormatError(ValueError):
    """Malformed input files (IDX magic mismatch, archive version mismatch)."""


class InternalError(RuntimeError):
    """An internal consistency check failed."""
