"""Data-enabled predictive control of a flexible spacecraft, with a finite-element plant and a Lyapunov boundary-control baseline."""

from .beam_fe import BeamModel, IntegratorConfig, PlantState, assemble, modal_frequencies
from .deepc import DeePC, DeePCConfig, run_closed_loop, stage_cost
from .lyapunov import LyapunovParams, check_constraints, construct_params, control_torque
from .trajectory import Trajectory, build_hankel, is_persistently_exciting, split_past_future, svd_reduce

__all__ = [
    "BeamModel", "IntegratorConfig", "PlantState", "assemble", "modal_frequencies",
    "DeePC", "DeePCConfig", "run_closed_loop", "stage_cost",
    "LyapunovParams", "check_constraints", "construct_params", "control_torque",
    "Trajectory", "build_hankel", "is_persistently_exciting", "split_past_future", "svd_reduce",
]
