"""Invariant densities, entrance boundaries, hitting times and Kemeny's
constant for one-dimensional diffusions on the real line.

A diffusion is specified by its coefficient functions a(x) > 0 and b(x),
given as expression strings.  The library computes the invariant probability
density, classifies +/-infinity as entrance boundaries, evaluates expected
hitting times and the mean time to reach a stationarily-distributed target
(Kemeny's constant) in closed form, and cross-validates everything with
Euler-Maruyama simulation.
"""

from ._backend import COMPILED, NAME as BACKEND
from .exprlang import (
    DomainError,
    Expr,
    ExprError,
    ParseError,
    breakpoints,
    differentiate,
    evaluate,
    parse,
    render,
)
from .quad import (
    FiniteIntegral,
    IntegralOutcome,
    QuadConfig,
    SubdivisionLimitError,
    Verdict,
    integrate_finite,
    integrate_improper,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "COMPILED",
    "DomainError",
    "Expr",
    "ExprError",
    "FiniteIntegral",
    "IntegralOutcome",
    "ParseError",
    "QuadConfig",
    "SubdivisionLimitError",
    "Verdict",
    "breakpoints",
    "differentiate",
    "evaluate",
    "integrate_finite",
    "integrate_improper",
    "parse",
    "render",
    "__version__",
]
