"""Exact and Monte Carlo tools for the bivariate renewal model of DNA denaturation."""
import os as _os

import numba as _numba

if "NUMBA_THREADING_LAYER" not in _os.environ:
    # prefer layers that ship with numba wheels over a possibly mismatched TBB
    _numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .errors import (  # noqa: E402
    EmptyKernelError, GPSError, InconsistencyError, InvalidSpecError, NonCramerSignal,
    OutOfDomainError, SpecInfeasibleError, StaleTiltError, UnreachableTargetError, WrongBranchError,
)
from .loop_law import (  # noqa: E402
    FreeEndWeights, KernelSpec, LoopLaw, TiltedLaw, build_free_end_weights, build_loop_law,
    build_tilted_law, delta_law, two_point_law,
)
from .free_energy import free_energy, gamma_c, solve_nh, tilted_law  # noqa: E402

__version__ = "0.1.0"
