"""Exception hierarchy shared across the package."""


class KlseqError(Exception):
    """Base class for all package errors."""


class DomainError(KlseqError):
    """An observation is invalid for the model family (e.g. non-binary Bernoulli data)."""


class ProprietyError(KlseqError):
    """The hyperparameters do not define a proper (normalizable) density."""


class DegenerateMomentsError(KlseqError):
    """Moment matching is infeasible for the requested target moments."""


class NumericError(KlseqError):
    """A nonfinite intermediate value was produced."""


class ConfigError(KlseqError):
    """Invalid run configuration."""


class ParseError(KlseqError):
    """Input file could not be parsed."""
