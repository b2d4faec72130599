"""hamshape: energy-shaping controller synthesis for a planar hip-exoskeleton
biped model — constrained port-Hamiltonian dynamics, basis-function
shaping fitted to normative gait torques, and closed-loop energy audits.
"""

__version__ = "0.1.0"

from .basis import BasisFunction, BasisSet, Channel, Mode, default_basis, regressor
from .dataio import GaitDataset, GaitTrial, TaskLabel
from .model import ModelParams, State
from .optim import FitProblem, FitResult, command_torque, sim_metric, vaf_metric
from .shaping import EnergyAudit, ShapingSpec, control_law

__all__ = [
    "__version__",
    "BasisFunction", "BasisSet", "Channel", "Mode", "default_basis", "regressor",
    "GaitDataset", "GaitTrial", "TaskLabel",
    "ModelParams", "State",
    "FitProblem", "FitResult", "command_torque", "sim_metric", "vaf_metric",
    "EnergyAudit", "ShapingSpec", "control_law",
]
