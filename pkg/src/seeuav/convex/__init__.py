"""Small smooth convex solver: atoms, programs and a log-barrier Newton method."""

from .atoms import (CubedNorm, Exp, Linear, LogSumExp, NegLog, QuadOverLin, Quadratic,
                    Reciprocal, SquaredNorm)
from .barrier import SolveReport, solve
from .check import gradient_check
from .expr import Affine
from .program import ConvexProgram

__all__ = [
    "Affine", "ConvexProgram", "CubedNorm", "Exp", "Linear", "LogSumExp", "NegLog",
    "QuadOverLin", "Quadratic", "Reciprocal", "SolveReport", "SquaredNorm",
    "gradient_check", "solve",
]
