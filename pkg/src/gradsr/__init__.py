"""Gradient-guided multi-frame super-resolution."""

from .degrade import (
    BlurKernel,
    DegradationOperator,
    FrameMotion,
    apply,
    apply_adjoint,
    gaussian_kernel,
    simulate_stack,
)
from .fidelity import NoiseStats, NormSelection, estimate_noise, irn_weights, select_p
from .gradprior import (
    GgdParams,
    GptConfig,
    GradientSource,
    bicubic_upsample,
    build_guidance,
    discrete_gradient,
    ggd_density,
    gradient_adjoint,
    sharpen_gradient,
    transform_ratio,
)
from .imageio import (
    GradientField,
    MetricReport,
    psnr,
    read_gradient_field,
    read_image,
    ssim,
    write_gradient_field,
    write_image,
)
from .nltv import NonLocalGraph, build_graph, nl_divergence, nl_gradient, nltv_value
from .solver import (
    ReconstructionReport,
    SolverConfig,
    nui_initialize,
    objective,
    reconstruct,
    soft_threshold,
)

__version__ = "0.1.0"
