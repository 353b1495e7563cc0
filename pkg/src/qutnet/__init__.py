"""Feature selection for neural-network regression with an l1-penalized first
layer whose penalty is set by the quantile universal threshold."""

__version__ = "0.1.0"

from .network import (ActivationSpec, Architecture, Dataset, NetworkParams, ShapeError,
                      bias_bounds, forward, shifted_softplus, validate_params)
from .loss_grad import (ConstantResponse, DegenerateResidual, gradient, null_gradient_sup,
                        null_statistic, objective, sqrt_l2_loss)
from .qut import QutConfig, QutEstimate, empirical_quantile, quantile_universal_threshold
from .optimizer import (FitConfig, FitResult, NonFiniteObjective, OracleInit, RandomInit,
                        SupportMask, fit, multi_start_fit, null_params, project_biases,
                        soft_threshold)
from .simulation import (RecoveryGrid, TeacherSpec, exact_support_recovery, generalization_rmse,
                         generate_dataset, generate_teacher, recovery_experiment)
