"""Higher-order QMC training designs for deep networks on parametric problems."""
__version__ = "0.1.0"

from .lattice import (F2Poly, LatticeRule, InterlacedRule, ExtrapolatedRule, SpodWeights,
                      cbc_construct, make_criterion, plain_rule, ipl_rule, epl_rule,
                      gen_points, interlace, qmc_integrate, v_m)
from .nn import (Architecture, NetParams, TrainConfig, TrainingSet, HolomorphyBudget,
                 init_xavier, forward, gradient, train, check_holomorphy,
                 clamp_holomorphy, save_model, load_model)
from .targets import rational_g, make_target
from .harness import EnsembleSpec, StudyConfig, run_study, fit_rate, emit_report

__all__ = [
    "F2Poly", "LatticeRule", "InterlacedRule", "ExtrapolatedRule", "SpodWeights",
    "cbc_construct", "make_criterion", "plain_rule", "ipl_rule", "epl_rule", "gen_points",
    "interlace", "qmc_integrate", "v_m", "Architecture", "NetParams", "TrainConfig",
    "TrainingSet", "HolomorphyBudget", "init_xavier", "forward", "gradient", "train",
    "check_holomorphy", "clamp_holomorphy", "save_model", "load_model", "rational_g",
    "make_target", "EnsembleSpec", "StudyConfig", "run_study", "fit_rate", "emit_report",
]
