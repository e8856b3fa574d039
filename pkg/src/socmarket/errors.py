"""Exception and warning types shared across the package."""


class TopologyError(ValueError):
    """Invalid network size/parameter, or a weight scheme applied to an
    incompatible topology."""


class MarketDomainError(ValueError):
    """Quantity outside the market model's domain (nonpositive price,
    negative quantity)."""


class FitDomainError(ValueError):
    """A statistical fit was requested on data that cannot support it
    (sign changes, too few bins, degenerate range)."""


class ConsistencyError(RuntimeError):
    """Incremental engine state diverged from a full recomputation."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class StatisticsWarning(UserWarning):
    """Statistics computed from fewer samples than recommended."""
