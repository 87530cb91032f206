"""Numerical laboratory for superfluid flow past an obstacle.

Subsonic potential flow, Gross-Pitaevskii boundary layers and vortex-free
states, planar traveling waves, and vortex nucleation diagnostics on
body-fitted exterior grids.
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401
from .numerics import (NewtonConfig, ContinuationConfig, BranchSample,
                       BranchEnd, solve_sparse_linear, newton_solve,
                       continuation_sweep)  # noqa: F401
