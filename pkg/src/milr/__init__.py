"""Mutual-information-learned regression (MILR).

Gaussian density heads trained with a conditional + marginal
cross-entropy loss, plug-in entropy and mutual information estimators,
SGD with convergence and concentration diagnostics, and closed-form
information bounds for the correlated Gaussian data model.  See the
``milr`` command-line tool for the file-based workflow.
"""

from .core_math import (
    InvariantError,
    MilrError,
    RngState,
    ValidationError,
    derive_seed,
    gaussian_logpdf,
    gaussian_sample,
    logsumexp,
    rng_uniform,
)
from .data_model import (
    Dataset,
    JointGaussianSpec,
    ScalarRegressionSpec,
    bayes_predict,
    bayes_risk,
    population_risk_mc,
    sample_joint_gaussian,
    sample_scalar_regression,
)
from .density_models import (
    ConditionalGaussianHead,
    MarginalGaussian,
    cond_log_density,
    head_backward,
    head_forward,
    marginal_log_density_and_grad,
    mixture_marginal_log_density,
    predict,
)
from .mil_loss import (
    LossReport,
    MarginalModelChoice,
    conditional_ce,
    marginal_ce,
    mi_estimate,
    mil_grad_batch,
    mil_loss_batch,
    mixture_marginal,
    mse_loss_and_grad,
    nll_mse_offset,
    parametric_marginal,
)
from .sgd_trainer import (
    ConvergenceReport,
    DatasetSource,
    LinearGaussianProblem,
    LrSchedule,
    OnlineSource,
    SgdConfig,
    TrainTrace,
    alpha_constant,
    convergence_experiment,
    finite_difference_check,
    gradient_deviation_experiment,
    iteration_lower_bound,
    sgd_train,
    sgd_train_mse,
)
from .info_bounds import (
    THRESHOLD_RHO,
    ComplexityInputs,
    RegimeLabel,
    asymptotic_regime,
    fano_bound_paper,
    fano_bound_tight,
    mi_plugin_mc,
    mutual_information_exact,
    sample_complexity_lemma42,
    sample_complexity_thm43,
)

__version__ = "0.1.0"
