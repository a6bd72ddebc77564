"""Online stochastic optimization with budget constraints under non-stationary arrivals."""

__version__ = "0.1.0"
