from .model import (BINARY, CONTINUOUS, EQ, GE, INF, LE, FrozenModel, MilpModel,
                    MilpSolution, ModelError, ModelStats, vname)
from .simplex import SimplexSolver, solve_lp
from .bnb import solve_milp
from .lpfile import SolutionFileError, export_lp_file, import_solution_file, sanitize, unsanitize

__all__ = [
    "BINARY", "CONTINUOUS", "EQ", "GE", "INF", "LE", "FrozenModel", "MilpModel",
    "MilpSolution", "ModelError", "ModelStats", "vname", "SimplexSolver", "solve_lp",
    "solve_milp", "SolutionFileError", "export_lp_file", "import_solution_file",
    "sanitize", "unsanitize",
]
