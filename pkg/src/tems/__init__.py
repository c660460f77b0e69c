"""Tube-enhanced multi-stage MPC for uncertain linear systems.

Offline: polytopic contractive/invariant set synthesis, Farkas multiplier
matrices, constraint tightening, terminal-set certificates. Online: the
scenario-tree + tube LP in three tube variants, solved each step. Plus a
closed-loop simulation and benchmarking harness around a CSTR case study.
"""

from .controller import (ControllerSpec, OnlineSolution, TUBE_GENERAL,
                         TUBE_HOMOTHETIC, TUBE_LOW, TUBE_PURE, dual_mode_input,
                         prepare, solve_step)
from .geometry import (HPolytope, SetTolerance, VPolytope, contains_set,
                       lambda_contractive_set, max_rpi_set, minkowski_sum,
                       pontryagin_diff, support, to_hrep, to_vrep, volume)
from .offline_synth import (Gains, OfflineData, UncertainModel, farkas_matrix,
                            invariant_tube, synth_gain_lqr, synthesize,
                            terminal_feasibility_check, tighten_constraints)
from .scenario_tree import TreeTopology, WeightTable, build_tree, default_weights
from .simulator import (TrajectoryLog, UncertaintySampler, benchmark_timing,
                        estimate_feasible_volume, run_closed_loop)

__version__ = "0.1.0"
