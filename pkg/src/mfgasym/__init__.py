"""Self-similar asymptotics for one-dimensional first-order mean field games."""

from mfgasym.profiles import (
    DomainError,
    Params,
    SelfSimilarProfile,
    Variant,
    compute_R_a,
    eval_self_similar,
    eval_stationary_profile,
    make_profile,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "Params",
    "SelfSimilarProfile",
    "Variant",
    "compute_R_a",
    "eval_self_similar",
    "eval_stationary_profile",
    "make_profile",
    "__version__",
]
