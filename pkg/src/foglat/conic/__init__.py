"""Convex subproblem machinery: program types, cone barriers, solver."""

from .program import (Block, ConicProgram, ConicSolution, ProgramBuilder,
                      kkt_residual, normalize, program_to_json)
from .solver import solve

__all__ = ["Block", "ConicProgram", "ConicSolution", "ProgramBuilder",
           "kkt_residual", "normalize", "program_to_json", "solve"]
