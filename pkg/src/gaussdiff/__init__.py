"""Analytical scores, closed-form Gaussian trajectories and hybrid samplers for diffusion models."""

from .dataset_stats import (
    DatasetError,
    GaussianMixture,
    GaussianModel,
    PointCloud,
    ThirdMoment,
    compute_moments,
    fit_gaussian,
    fit_gmm_by_label,
    load_point_cloud,
    save_point_cloud,
    third_central_moment,
)
from .gaussian_solution import (
    TrajectoryBasis,
    VPSchedule,
    psi,
    solve_denoiser,
    solve_state,
    vp_psi,
    vp_solve_denoiser,
    vp_solve_state,
    xi,
)
from .samplers import (
    NoiseSchedule,
    SampleRun,
    analytic_run,
    build_schedule,
    heun_sample,
    hybrid_sample,
    reference_integrate,
    rk4_integrate,
    vp_flow_rhs,
)
from .score_fields import (
    GaussianScore,
    GMMScore,
    IsotropicScore,
    PointCloudScore,
    ScoreField,
    as_field,
    gaussian_score,
    gmm_score,
    isotropic_score,
    point_cloud_endpoint,
    point_cloud_score,
    vp_scaled_score,
)

__version__ = "0.1.0"
