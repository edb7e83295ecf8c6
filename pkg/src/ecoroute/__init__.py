"""Multiclass static traffic assignment with time-, CO2- and fuel-minimizing vehicles."""

from .cost import (
    LinkCosts,
    SystemMetrics,
    bpr_time,
    class_cost,
    emissions,
    fuel,
    link_costs,
    speed,
    system_metrics,
)
from .equilibrium import (
    EquilibriumResult,
    GapRecord,
    SolverConfig,
    all_or_nothing,
    relative_gap,
    shortest_paths,
    solve,
    two_link_oracle,
)
from .network import (
    DemandTable,
    FlowState,
    Link,
    Network,
    VehicleClass,
    split_demand,
    validate_network,
)

__version__ = "0.1.0"

__all__ = [
    "DemandTable", "EquilibriumResult", "FlowState", "GapRecord", "Link", "LinkCosts",
    "Network", "SolverConfig", "SystemMetrics", "VehicleClass", "all_or_nothing", "bpr_time",
    "class_cost", "emissions", "fuel", "link_costs", "relative_gap", "shortest_paths", "solve",
    "speed", "split_demand", "system_metrics", "two_link_oracle", "validate_network",
]
