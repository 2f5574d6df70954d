"""Blocked hyperbolic Householder updates of Cholesky factors and Riccati factorization updates.

The hot loops live in a compiled extension; a numpy implementation of the
same kernels is used when the extension is missing or when
``HYHUP_BACKEND=python`` is set (see :mod:`hyhup.backend`).
"""

from . import backend
from .errors import (
    DegeneratePivot,
    DimensionMismatch,
    GenerationFailed,
    HyhError,
    IndefiniteUpdate,
    NotPositiveDefinite,
    SingularTriangular,
)
from .kernels import (
    DEFAULT_BLOCK_SIZE,
    CompactWY,
    ReflectorScalars,
    hyh_apply_block,
    hyh_update,
    hyh_update_block,
    hyh_update_inplace,
    make_reflector,
    reconstruct_q,
)
from .matcore import reference_cholesky, residual_fro, solve_right_upper, sym_low_rank_form
from .counted import FlopCounter, hyh_update_counted
from .riccati import (
    NewtonStep,
    OcpData,
    OcpDims,
    PenaltySchedule,
    RiccatiFactors,
    dense_kkt_solve,
    kkt_residual,
    riccati_factor,
    riccati_solve,
    riccati_update,
)

__version__ = "0.1.0"
BACKEND = backend.NAME
