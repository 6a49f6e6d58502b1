"""Fault-tolerant tall-and-skinny QR factorization on a simulated runtime.

The package factors a tall matrix block-row-wise across P simulated
processes, combines the per-block triangular factors along a reduction
tree or butterfly exchange, injects fail-stop process failures at round
boundaries, and verifies both the numeric result and the survival
properties of four driver variants.
"""

from .densela import (
    Matrix,
    TriangularFactor,
    canonicalize_sign,
    dump_matrix_csv,
    gram,
    householder_qr_r,
    load_matrix_csv,
    mat_random,
    rel_residual,
    stack,
)
from .errors import (
    DefectError,
    FtTsqrError,
    InvalidScheduleError,
    PeerFailedError,
    ProtocolViolationError,
    UnsupportedTopologyError,
)
from .simnet import (
    ALIVE_STATUSES,
    PEER_FAILED,
    Delivered,
    FailureEvent,
    PeerFailed,
    Phase,
    ProcStatus,
    World,
)
from .tsqr import (
    AlgorithmKind,
    ProcState,
    RankOutcome,
    Role,
    RunConfig,
    RunReport,
    baseline_role,
    buddy,
    budget_check,
    data_available,
    find_replica,
    replica_group,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "Matrix",
    "TriangularFactor",
    "mat_random",
    "householder_qr_r",
    "stack",
    "gram",
    "rel_residual",
    "canonicalize_sign",
    "load_matrix_csv",
    "dump_matrix_csv",
    "FtTsqrError",
    "UnsupportedTopologyError",
    "InvalidScheduleError",
    "ProtocolViolationError",
    "PeerFailedError",
    "DefectError",
    "Phase",
    "ProcStatus",
    "ALIVE_STATUSES",
    "FailureEvent",
    "Delivered",
    "PeerFailed",
    "PEER_FAILED",
    "World",
    "AlgorithmKind",
    "Role",
    "ProcState",
    "RunConfig",
    "RankOutcome",
    "RunReport",
    "buddy",
    "baseline_role",
    "replica_group",
    "find_replica",
    "budget_check",
    "data_available",
    "run",
    "__version__",
]
