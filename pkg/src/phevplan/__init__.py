"""Drive-mode optimisation and path planning for plug-in hybrid vehicles."""

from .calibrate import ObdTrace, fit_efficiency, fit_fuel, load_trace
from .dmop import (
    Infeasible,
    ModeSchedule,
    SocGrid,
    TripInstance,
    brute_force_dmop,
    cs_benchmark,
    simulate_modes,
    solve_dmop_dp,
)
from .model import (
    FuelCurve,
    Mode,
    ModeSet,
    ProfileStep,
    SlotCoeffs,
    Transition,
    VehicleParams,
    VehicleState,
    drivetrain_power,
    fuel_of,
    per_unit_cost,
    step_mode,
)
from .online import OnlineController, compute_thresholds, instance_thresholds, run_online
from .pathplan import (
    Edge,
    RoadNetwork,
    Station,
    TripPlan,
    brute_force_ppdm,
    solve_cppdm,
    solve_ppdm_dp,
    solve_uppdm,
)
from .relax import solve_cdmop

__version__ = "0.1.0"
