"""Desk-scale laboratory for boundary-fitting transfer attacks.

Small fully-differentiable classifiers (trained from scratch), sign-gradient
attack baselines, decision-boundary probing, and the diagnostic studies that
compare gradient similarity, boundary distance, and robustness across
substitute/victim model pairs.
"""

__version__ = "0.1.0"

from bflab.errors import (
    BflabError,
    ConfigError,
    ContractError,
    EmptyStudyError,
    InputError,
    ModelFileError,
)

__all__ = [
    "__version__",
    "BflabError",
    "ConfigError",
    "ContractError",
    "EmptyStudyError",
    "InputError",
    "ModelFileError",
]
