"""Exception hierarchy shared across the package."""


class BflabError(Exception):
    """Base class for all errors raised by this package."""


class InputError(BflabError, ValueError):
    """An argument violates an operation's input contract (bad shape, bad
    label, zero direction, non-finite values)."""


class ConfigError(BflabError, ValueError):
    """A configuration is structurally valid but semantically unusable
    (degenerate dataset, invalid hyperparameter combination)."""


class ContractError(BflabError, RuntimeError):
    """A caller-side precondition was violated (e.g. asking for a boundary
    sample of a point that is not inside the stated source region)."""


class ModelFileError(BflabError, ValueError):
    """A model file could not be parsed or failed shape validation."""


class EmptyStudyError(BflabError, RuntimeError):
    """A study ended up with zero usable inputs after skipping/censoring."""
