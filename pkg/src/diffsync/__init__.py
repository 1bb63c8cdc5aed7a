"""Synchronised DDIM sampling over multiple views of a canonical space."""

from ._kernels import backend
from .denoiser import GaussianMixture, GMMPredictor, gmm_posterior_mean, gmm_predict_eps
from .errors import ConfigError, ContractError, CoverageError
from .metrics import (
    MetricReport,
    case_divergence,
    cross_view_consistency,
    divergence_matrix,
    prior_moment_check,
    variance_series,
)
from .noise import seeded_gaussian_noise
from .schedule import NoiseSchedule, ddim_step, forward_diffuse, make_schedule, tweedie
from .spaces import (
    CanonicalState,
    ProjectionOperator,
    aggregate,
    make_crop,
    make_crop_tiling,
    make_flip,
    make_identity,
    make_inner_rotation,
    make_multiplane,
    make_random_permutation,
    make_rot90,
    make_transpose,
    project,
    reprojection_error,
    unproject,
)
from .sync import (
    AppendixCReport,
    DenoisingPlan,
    SyncRunResult,
    case_plan,
    run_case,
    run_plan,
    trajectory1_plans,
    verify_appendix_c_conditions,
)

__version__ = "0.1.0"
