"""Bi-level guided diffusion sampling for linear inverse problems.

The samplers combine a score model (analytic Gaussian mixture or an external
denoiser) with measurement-consistency rules for masked-Fourier MRI,
parallel-beam CT and block-average super-resolution.
"""
from .errors import (BGDMError, CapabilityError, ConfigError, DivergenceError,
                     ExternalModelError, NumericalDegeneracyError, ParameterError,
                     ReportFormatError, ShapeError, SolverError, TensorFormatError)
from .evaluation import MetricRecord, phantom_gmm_prior, psnr, shepp_logan, ssim
from .guidance import (GuidanceConfig, acpm_step, likelihood_gradient, proximal_solve,
                       range_null_combine, refinement_step, scoremed_project)
from .linops import (CTOperator, MaskSpec, MRIOperator, SROperator, generate_mask, make_operator,
                     simulate_measurement)
from .prior import (GaussianMixturePrior, GMMScoreModel, ExternalScoreModel,
                    conditional_posterior_mean, predict_x0, tweedie_mean)
from .sampler import ddim_update, run_sampler
from .schedule import NoiseSchedule, diffuse_forward, make_linear_schedule, subsample_timesteps
from .tensor import load_tensor, save_tensor

__version__ = "0.1.0"
