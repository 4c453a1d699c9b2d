"""Rate-induced tipping thresholds for parameter-shift oscillator systems.

Detects and continues the critical shift rates at which a slowly forced
oscillator stops tracking its moving attractor: trajectory classification
by ensemble shooting, Floquet analysis of the frozen periodic orbits, and
boundary-value continuation of the connecting orbits whose folds and
tangencies mark the tipping thresholds.
"""

from .classify import (
    PullbackFiberSet,
    ShootingConfig,
    TippingReport,
    classify_point,
    classify_region,
    ensemble_size_schedule,
    integration_time,
    pullback_fibers,
    stable_manifold_zplus,
    sweep,
)
from .lin import (
    LinSetup,
    LinSolution,
    continue_connection_in_r,
    continue_threshold,
    find_critical_rate,
    gap_ptoe,
    gap_ptop,
    ptop_connection,
    ptop_fold_connections,
    section_gap_profile,
    solve_codim1_ptop,
)
from .model import (
    ExtendedState,
    SystemParams,
    adjoint_field,
    bautin_field,
    extended_field,
    jacobian,
    parameter_shift,
    shift_travel_time,
)

__version__ = "0.1.0"

__all__ = [
    "SystemParams",
    "ExtendedState",
    "parameter_shift",
    "shift_travel_time",
    "bautin_field",
    "extended_field",
    "jacobian",
    "adjoint_field",
    "ShootingConfig",
    "TippingReport",
    "PullbackFiberSet",
    "integration_time",
    "ensemble_size_schedule",
    "classify_point",
    "classify_region",
    "stable_manifold_zplus",
    "sweep",
    "pullback_fibers",
    "LinSetup",
    "LinSolution",
    "gap_ptoe",
    "gap_ptop",
    "section_gap_profile",
    "ptop_connection",
    "ptop_fold_connections",
    "continue_connection_in_r",
    "solve_codim1_ptop",
    "find_critical_rate",
    "continue_threshold",
    "__version__",
]
