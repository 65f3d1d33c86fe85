"""Parameter identification for the Landau-Lifshitz-Gilbert equation from coil voltages.

All-at-once and reduced Landweber(-Kaczmarz) iterations on a 1-D
space-time grid, with exact discrete adjoints.
"""

from .aao import Problem, StepPolicy, run_aao, run_llg_solver
from .grid import Grid
from .model import (AlphaPair, ModelCoefficients, ObservationSetup, VoltageSeries, eval_F0,
                    eval_observation, scale_physical)
from .reduced import (parameter_to_state, run_kaczmarz_data, run_kaczmarz_time,
                      run_reduced)
from .regularization import IterationLog, StoppingRule, noise_inject

__all__ = [
    "AlphaPair", "Grid", "IterationLog", "ModelCoefficients", "ObservationSetup", "Problem",
    "StepPolicy", "StoppingRule", "VoltageSeries", "eval_F0", "eval_observation",
    "noise_inject", "parameter_to_state", "run_aao", "run_kaczmarz_data",
    "run_kaczmarz_time", "run_llg_solver", "run_reduced", "scale_physical",
]
__version__ = "0.1.0"
