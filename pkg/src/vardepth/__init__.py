"""Per-pixel Gaussian depth distributions fitted to synthetic image sequences.

Per-pixel Gaussian depth maps are lifted to 3D Gaussian point clouds, tied
across frames by a Mahalanobis-Wasserstein consistency loss (entropic
transport solved with Sinkhorn iterations), and optimized together with a
photometric reconstruction loss.  The learned standard deviations drive a
hypothesis-based depth refinement and the NLL / outlier-removal evaluation.

Submodules:

* :mod:`vardepth.geometry`     pinhole camera, rigid transforms, covariance lifting
* :mod:`vardepth.depthdist`    depth distributions, sampling, Gaussian clouds
* :mod:`vardepth.transport`    cost matrices, Sinkhorn, exact OT, grid sampling
* :mod:`vardepth.photometric`  warping, SSIM, photometric energy, regularizers
* :mod:`vardepth.objective`    total loss, gradients, two-stage optimizer
* :mod:`vardepth.elbo`         bound check on a tractable linear-Gaussian toy
* :mod:`vardepth.refine`       sigma-guided refinement and flip post-process
* :mod:`vardepth.evalkit`      depth metrics, NLL, outlier-removal curves
* :mod:`vardepth.synth`        synthetic scenes with exact ground truth
* :mod:`vardepth.io`           raster / image / config file formats
* :mod:`vardepth.experiment`   full pipeline runner
* :mod:`vardepth.cli`          command line entry point

All differentiable code runs on JAX in double precision; importing the
package enables ``jax_enable_x64``.
"""

import jax

jax.config.update("jax_enable_x64", True)

from .errors import ContractViolation, DomainError  # noqa: E402
from .geometry import (  # noqa: E402
    CameraIntrinsics,
    Gaussian3,
    RigidTransform,
    backproject,
    jacobian_gamma,
    propagate_covariance,
    se3_from_params,
    transform_gaussian,
)
from .depthdist import (  # noqa: E402
    DepthDistribution,
    GaussianCloud,
    NoiseField,
    entropy_term,
    lift_cloud,
    mahalanobis_sq,
    sample_depth,
)
from .transport import (  # noqa: E402
    GridSpec,
    TransportPlan,
    build_cost,
    exact_ot,
    grid_pixels,
    mw_loss,
    sinkhorn,
)

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "DomainError",
    "CameraIntrinsics",
    "Gaussian3",
    "RigidTransform",
    "backproject",
    "jacobian_gamma",
    "propagate_covariance",
    "se3_from_params",
    "transform_gaussian",
    "DepthDistribution",
    "GaussianCloud",
    "NoiseField",
    "entropy_term",
    "lift_cloud",
    "mahalanobis_sq",
    "sample_depth",
    "GridSpec",
    "TransportPlan",
    "build_cost",
    "exact_ot",
    "grid_pixels",
    "mw_loss",
    "sinkhorn",
]
