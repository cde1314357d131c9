"""Sparse iterative linear solvers."""
from .gmres import LinearSolveReport, LinearSolverConfig, gmres_solve
from .precond import PreconditionerSpec, build_preconditioner

__all__ = ["LinearSolverConfig", "LinearSolveReport", "PreconditionerSpec",
           "build_preconditioner", "gmres_solve"]
