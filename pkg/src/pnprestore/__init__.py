"""Plug-and-play image restoration with linearized ADMM and fast DSG-NLM."""

from .image import (
    Box,
    NON_NEGATIVE,
    NonNegative,
    UNCONSTRAINED,
    UNIT_BOX,
    Unconstrained,
    box_sum,
    integral_image,
    pad_symmetric,
    project,
    psnr,
    read_image,
    validate_image,
    write_image,
)
from .denoise import (
    FrozenGuide,
    PatchParams,
    build_dense_weights,
    dsg_nlm_denoise,
    freeze_guide,
    hat_weight,
    nlm_denoise,
    nlm_kernel,
    patch_distance_map,
)
from .forward import (
    QIS_FLOOR,
    QisCounts,
    QisModel,
    SplitMix64,
    SuperResOp,
    gaussian_kernel,
    power_iteration_lipschitz,
    qis_data_term,
    qis_gradient,
    qis_initial_estimate,
    qis_simulate,
    sr_adjoint,
    sr_apply,
    sr_data_term,
    sr_gradient,
    sr_simulate,
)
from .solver import (
    CgResult,
    DivergenceError,
    IterationRecord,
    Problem,
    SolverConfig,
    cg_solve,
    default_qis_alpha,
    default_sr_alpha,
    linearized_pnp_admm,
    make_qis_problem,
    make_sr_problem,
    residuals,
    standard_pnp_admm_cg,
    write_log_csv,
)

__version__ = "0.1.0"
