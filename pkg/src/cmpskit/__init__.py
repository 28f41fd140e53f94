"""cmpskit: continuous matrix product states for 1d bosonic quantum fields.

Variational ground states and quasiparticle dispersions (trivial and
topological sectors) of the Lieb-Liniger model and its U(1)-breaking pairing
extension, with an independent Bethe-ansatz reference solution.
"""

__version__ = "0.1.0"

from .linalg import (
    TransferBlock,
    Deflation,
    LinalgError,
    DegenerateTransferError,
    SolverConvergenceError,
    transfer_apply,
    transfer_matrix,
    leading_fixed_points,
    solve_shifted_transfer,
    lowest_eigenpairs,
)
from .state import (
    ModelParams,
    CmpsState,
    Observables,
    RankDeficientError,
    canonicalize,
    random_state,
    density,
    energy_density,
    order_parameter,
    correlation_length,
    rotate_phase,
    observables,
    save_state,
    load_state,
)

__all__ = [name for name in dir() if not name.startswith("_")]
