"""Exception types shared across the package.

Plain input validation (bad shapes, non-finite values, out-of-range
parameters) raises ValueError; these classes cover failures that carry
estimation-specific meaning.
"""


class RemleError(Exception):
    """Base class for package-specific failures."""


class NumericalError(RemleError):
    """A numerical routine (eigensolver, factorization, quadrature) failed
    or could not reach its accuracy target."""


class DegenerateDesignError(RemleError):
    """The design carries no signal direction (all-zero Gram spectrum or an
    all-zero group), so the likelihood equation is undefined."""


class NoRootError(RemleError):
    """No sign change of the SNR likelihood equation was found inside the
    maximal bracket. ``probes`` holds the (gamma, delta) pairs that were
    evaluated, so the caller can report a boundary estimate instead."""

    def __init__(self, message, probes):
        super().__init__(message)
        self.probes = list(probes)


class GenerationError(RemleError):
    """Synthetic data generation failed (e.g. a genotype column stayed
    constant after the bounded number of regeneration attempts)."""
