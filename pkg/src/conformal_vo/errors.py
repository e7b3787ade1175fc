"""Exception types shared across the pipeline."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class DegenerateViewError(RuntimeError):
    """Too few landmarks project into the image to render a usable frame."""


class DegenerateConfigurationError(RuntimeError):
    """Point correspondences are too degenerate for essential-matrix estimation."""


class AmbiguousDecompositionError(RuntimeError):
    """No essential-matrix decomposition candidate wins the cheirality test outright."""


class NoCandidateError(RuntimeError):
    """Mode selection was handed an empty candidate list."""


class GenerationError(RuntimeError):
    """Synthetic world generation produced an infeasible scene."""
