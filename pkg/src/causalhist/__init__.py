"""Finite-dimensional decoherent-histories engine.

Chain vectors, Born weights, decoherence functionals and branch
interference measures for small closed quantum systems.
"""

from causalhist.errors import (
    CausalHistError,
    NumericalCheckError,
    ResourceLimitError,
    ValidationError,
)
from causalhist.event_algebra import (
    CellPartition,
    CoarseningMap,
    SampleSpace,
    cell_projectors,
    coarsen,
    is_coarsening_of,
    pointer_projectors,
)
from causalhist.hilbert import apply, hermitian_check, inner, propagator
from causalhist.histories import (
    Enumeration,
    HistoryRecord,
    HistorySpace,
    additivity_check,
    born_weight,
    branching_structure_check,
    chain_vector,
    consistency_check,
    decoherence_matrix,
    enumerate_histories,
    weight_sum_identity,
)
from causalhist.interference import (
    classify_causal,
    inequality_audit,
    interference_measures,
    stepwise_causality,
)

__version__ = "0.1.0"

__all__ = [
    "CausalHistError",
    "CellPartition",
    "CoarseningMap",
    "Enumeration",
    "HistoryRecord",
    "HistorySpace",
    "NumericalCheckError",
    "ResourceLimitError",
    "SampleSpace",
    "ValidationError",
    "additivity_check",
    "apply",
    "born_weight",
    "branching_structure_check",
    "cell_projectors",
    "chain_vector",
    "classify_causal",
    "coarsen",
    "consistency_check",
    "decoherence_matrix",
    "enumerate_histories",
    "hermitian_check",
    "inequality_audit",
    "inner",
    "interference_measures",
    "is_coarsening_of",
    "pointer_projectors",
    "propagator",
    "stepwise_causality",
    "weight_sum_identity",
]
