"""Model-averaged multiple imputation for item nonresponse under informative
sampling: survey-weighted GLM fitting, design-based sandwich variance,
approximate posterior model probabilities, data-augmentation imputation,
Rubin pooling, and a Monte Carlo simulation harness."""

__version__ = "0.1.0"

from .core_stats import (
    RngStream,
    cholesky,
    conditional_normal,
    log_sum_exp,
    mvn_logpdf,
    mvn_sample,
)
from .design_variance import DesignInfo, fit_with_variance, sandwich_variance
from .errors import (
    AllZeroMass,
    ChainStalled,
    DimensionTooLarge,
    EmptySample,
    InsufficientDraws,
    MibmaError,
    ModelSpaceTooLarge,
    NotPositiveDefinite,
    PreconditionViolated,
    SingularBread,
    SingularDesign,
    SingularDispersion,
)
from .glm_pseudo_mle import (
    BINOMIAL,
    GAUSSIAN,
    Dataset,
    FitResult,
    fit_pseudo_mle,
    score_hessian,
)
from .imputation_engine import (
    DAState,
    MIConfig,
    MIDraw,
    MIOutput,
    da_iterate,
    rubin_pool,
    run_mi_bma,
    run_mi_single_model,
)
from .model_posterior import (
    GridSpec,
    PosteriorModelDist,
    approx_log_marginal,
    equal_product_box_priors,
    exact_log_marginal_quadrature,
    identifiability_diagnostic,
    model_posterior,
)
from .model_space import (
    ModelId,
    ModelPrior,
    NormalPrior,
    UniformBoxPrior,
    enumerate_models,
    partition_indices,
    prior_logdensity,
)
from .sim_harness import (
    MI_BMA,
    MI_FULL,
    MI_TRUE,
    MetricsRow,
    Population,
    ScenarioConfig,
    draw_sample,
    generate_population,
    run_monte_carlo,
    write_metrics_csv,
)
