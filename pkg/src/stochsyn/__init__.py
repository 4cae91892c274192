"""Correct-by-construction controller synthesis for stochastic systems.

Pipeline: translate a co-safe temporal-logic formula to a DFA, grid the
system into a finite stochastic abstraction (optionally after model-order
reduction or piecewise-affine approximation), certify an (epsilon, delta)
simulation relation between the two, run robust dynamic programming on the
implicit product with the DFA, and refine the resulting policy into a
controller with a guaranteed lower bound on the satisfaction probability.
"""

__version__ = "0.1.0"

from .abstraction import (AbstractionTensor, AbstractModel, Grid,
                          build_abstraction, grid_input_space, label_sets)
from .geometry import LabeledPartition, Polytope, pre_set
from .models import (LinearModel, NonlinearModel, PwaModel, make_nonlinear,
                     normalize_disturbance, steady_state_shift)
from .mor import (align_reduced_gains, compute_projection,
                  diagonalize_reduced_noise, lift_initial_state,
                  model_reduction, reduce_x, solve_dare)
from .pwa import bound_taylor_error, pwa_approximation
from .runtime import Controller, SimResult, refine_controller, simulate
from .similarity import (SimulationRelation, combine_relations,
                         compute_weighting, quantify_sim, quantify_sim_mor)
from .speclang import Dfa, Formula, parse_scltl, translate_spec, word_satisfies
from .synthesis import (Policy, ValueFunction, initial_state_values,
                        robust_bellman_step, value_at, value_iteration)
