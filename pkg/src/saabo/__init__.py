"""Sample-average-approximation Bayesian optimization with RQMC sampling."""

from .acquisition import (
    AcquisitionContext,
    AcquisitionValue,
    analytic_ei,
    posterior_mean_and_simple_regret,
    q_expected_improvement,
    q_knowledge_gradient_one_shot,
    q_neg_integrated_posterior_variance,
    q_noisy_expected_improvement,
    q_upper_confidence_bound,
)
from .gp import (
    Dataset,
    FitConfig,
    GaussianPosterior,
    GPModel,
    KernelParams,
    ModelList,
    fit_mle,
    fit_model_list,
    kernel_eval,
    log_marginal_likelihood,
    root_decomposition,
)
from .objectives import ObjectiveSpec, draw_chebyshev_weights
from .optimize import (
    CandidateResult,
    OptimizeConfig,
    bounded_quasi_newton,
    gen_initial_conditions,
    optimize_acqf,
    optimize_one_shot_kg,
)
from .sampling import (
    BaseSampleSet,
    SampleSizeSchedule,
    draw_base_samples,
    inverse_normal_cdf,
    qmc_sample_sizes,
    reparameterize,
)
from .sobol import SobolEngine, sobol_draw

__version__ = "0.1.0"
