"""Wind-farm wake steering: wake kernel, delay-aware MPC, DIRECT and SAC controllers."""
from .farm import FarmLayout, InflowState, TurbineSpec, YawState, turbine_power
from .wake import WakeParams, evaluate_farm
from .delay import YawHistory, compute_delay_matrix, horizon_power
from .direct import DirectConfig, maximize, minimize
from .mpc import BasisParams, FarmModel, MPCConfig, mpc_cost, solve_back_to_front
from .env import EnvConfig, WindFarmEnv

__version__ = "0.1.0"

__all__ = [
    "BasisParams", "DirectConfig", "EnvConfig", "FarmLayout", "FarmModel", "InflowState",
    "MPCConfig", "TurbineSpec", "WakeParams", "WindFarmEnv", "YawHistory", "YawState",
    "compute_delay_matrix", "evaluate_farm", "horizon_power", "maximize", "minimize", "mpc_cost",
    "solve_back_to_front", "turbine_power",
]
