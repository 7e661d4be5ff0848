"""Monte Carlo design engine for two-arm Bayesian adaptive trials that borrow
from a historical study through a commensurate prior."""

__version__ = "0.1.0"
