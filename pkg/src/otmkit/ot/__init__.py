"""Discrete optimal transport: exact simplex, log-domain Sinkhorn, restricted supports."""

from .exact import exact_ot
from .restricted import solve_restricted
from .sinkhorn import BatchResult, batch_plans, center_duals, sinkhorn, sinkhorn_batch
from .types import DualPair, OtSolution, TransportPlan

__all__ = [
    "BatchResult",
    "DualPair",
    "OtSolution",
    "TransportPlan",
    "batch_plans",
    "center_duals",
    "exact_ot",
    "sinkhorn",
    "sinkhorn_batch",
    "solve_restricted",
]
