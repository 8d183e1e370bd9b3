"""Nonparametric regression on Brownian-path covariates via chaos expansions.

Subpackages:

* ``pathlab``    - path and diffusion simulation, coprocess reconstruction
* ``kernelkit``  - vanishing-moment kernels and boundary-corrected products
* ``chaoscalc``  - multiple Wiener integrals, oracles, and MC validators
* ``chaosreg``   - chaos-kernel surface estimates and the plugin regression
* ``glselect``   - data-driven bandwidth selection
* ``mappingzoo`` - ground-truth mappings, synthesis, class checks, bumps
* ``benchcli``   - config-driven benchmark command line
"""

__version__ = "0.1.0"

from .pathlab import (  # noqa: F401
    BrownianPath,
    DiffusionPath,
    GenericDiffusion,
    GeometricBM,
    OrnsteinUhlenbeck,
    TimeGrid,
    make_grid,
    reconstruct_coprocess,
    sample_brownian,
    simulate_diffusion,
)
from .kernelkit import (  # noqa: F401
    BandwidthedKernel,
    MomentKernel,
    boundary_sign,
    build_kernel,
    eval_multivariate,
    eval_univariate,
    kernel_slices,
)
from .chaoscalc import (  # noqa: F401
    GriddedFunction,
    brute_multiple_integral,
    chaos_constant,
    hermite_chaos,
    isometry_report,
    ito_integral_1,
    l2_inner,
    moment_bound_report,
    tensor_chaos,
)
from .chaosreg import (  # noqa: F401
    ChaosKernelEstimate,
    FittedModel,
    RiskReport,
    Sample,
    estimate_mean,
    fit_chaos_kernel,
    predict,
    risk_isometry,
    risk_monte_carlo,
    smoothed_truth,
)
from .glselect import (  # noqa: F401
    BandwidthGrid,
    MajorantParams,
    SelectionTrace,
    adaptive_fit,
    bandwidth_grid,
    bias_proxy,
    majorant,
    select_bandwidth,
)
from .mappingzoo import (  # noqa: F401
    GaussianNoise,
    MappingSpec,
    UniformNoise,
    bump_instance,
    bump_psi,
    class_check,
    evaluate_mapping,
    quadratic_terminal,
    spec_to_config_doc,
    synthesize,
)
