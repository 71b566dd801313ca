"""Debiased estimators, dynamic propensity shaping and their analysis for MNAR feedback."""
from .analytics import (aggregate_objective, bias_variance_report, closed_form_bias, closed_form_variance,
                        generalization_bound, h_B, h_V, regularizer_analysis, tail_bound)
from .core import ErrorSpec, GeneralEstimatorForm, LabeledMatrix, ObservationMask
from .dynamic import JointObjective, alpha_opt_closed_form, alpha_opt_numerical, alpha_schedule, variance_cap
from .estimators import (EstimatorSpec, batch_evaluate, eval_dr, eval_dynamic, eval_eib, eval_general, eval_ips,
                         eval_naive, eval_real, eval_snips, evaluate)
from .metrics import auc, evaluate_predictions, gain, ndcg_at_k
from .propensity import fit_propensity, oracle_propensity
from .shaping import IDENTITY, LOG1P, SINE, TANH, ShapingFunction, get_shaping, validate_design_principles
from .simulation import SyntheticSpec, exhaustive_moments, generate_synthetic, monte_carlo
from .training import MFModel, TrainConfig, gradient_check, train, train_joint

__version__ = "0.1.0"
