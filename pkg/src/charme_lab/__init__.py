"""Regime-switching AR-ARCH mixtures with neural-network experts.

Simulation, stationarity certificates, conditional least-squares training,
plug-in asymptotic covariances, and multivariate normality diagnostics,
plus a batch CLI (``charme-lab``) wiring them end to end.
"""

from .asymptotics import (
    AsymptoticsReport,
    BlockDiagMatrix,
    EtaSample,
    asymptotics_report,
    estimate_V,
    estimate_W,
    monte_carlo_eta,
    sandwich_covariance,
    theta_vector,
)
from .errors import (
    CharmeLabError,
    DomainError,
    IndexOutOfRange,
    ModelMismatch,
    MomentUndefined,
    NonFiniteLoss,
    SampleSizeOutOfRange,
    ShapeMismatch,
    SingularBlock,
    SingularCovariance,
)
from .estimate import (
    FitConfig,
    FitResult,
    InitSpec,
    fitted_and_residuals,
    qn_loss,
    sgd_fit,
)
from .model import (
    ACTIVATIONS,
    IDENTITY,
    RELU,
    SIGMOID,
    SOFTPLUS,
    TANH,
    Activation,
    CharmeModel,
    ExpertSpec,
    FeedforwardNet,
    InnovationSpec,
    LossSpec,
    Violation,
    VolatilitySpec,
    loss_value,
    model_from_json,
    model_to_json,
    normalized_pi,
    validate_model,
)
from .mvn import (
    NormalityReport,
    QQData,
    TestResult,
    henze_zirkler,
    mahalanobis_qq,
    mardia,
    normality_report,
    royston,
    select_subset,
    shapiro_wilk_w,
)
from .nets import (
    ParamGradient,
    first_layer_block_norms,
    flatten_params,
    forward,
    layer_product_lipschitz,
    param_count,
    param_gradient,
    param_gradient_batch,
    param_jacobian,
    project_layer_caps,
    replace_params,
    spectral_norm,
    spectral_norm_result,
)
from .simulate import Trajectory, coupled_simulate, default_burn_in, lagged_inputs, simulate
from .stability import (
    StabilityReport,
    approximation_bound,
    compute_Cm,
    expert_lipschitz,
    lag_coefficients,
    mu1,
    stability_report,
    tau_bound_finite,
    tau_bound_infinite,
    truncation_bound,
)

__version__ = "0.1.0"
