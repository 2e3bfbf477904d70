"""Exception hierarchy for the sste package."""


class SSTEError(Exception):
    """Base exception for sste errors."""
    pass


class ShapeError(SSTEError, ValueError):
    """Tensor shape does not fit the requested N:M block layout or its partner tensor."""
    pass


class NonFiniteError(SSTEError, ValueError):
    """Input contains NaN (or Inf where finiteness is required)."""
    pass


class ConfigError(SSTEError, ValueError):
    """Invalid or unknown experiment configuration."""
    pass


class BackwardBeforeForwardError(SSTEError, RuntimeError):
    """A layer's backward pass was requested without a cached forward."""
    pass


class SparsityViolationError(SSTEError, AssertionError):
    """A sparse-mode forward used a weight that breaks the N:M pattern."""
    pass


class MatrixError(SSTEError, ValueError):
    """An ablation matrix is empty or mixes tasks/seeds."""
    pass


class EmptySampleError(SSTEError, ValueError):
    """A statistic was requested over an empty sample."""
    pass


class RunNotFoundError(SSTEError, FileNotFoundError):
    """A run or matrix directory is missing required files."""
    pass
