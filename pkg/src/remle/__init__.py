"""remle: random-effects maximum likelihood estimation of signal-to-noise
ratios and noise variances in high-dimensional linear models, with
Marchenko-Pastur asymptotic cross-checks and a reproducible simulation
harness."""

from .errors import (
    DegenerateDesignError,
    GenerationError,
    NoRootError,
    NumericalError,
    RemleError,
)
from .mp_theory import MpSpec, d_factor, delta_limit, mp_density, mp_moment, s_bar, trace_limit_inv
from .snr_group import (
    GroupedDesign,
    GroupTrueParameters,
    GroupVarianceEstimate,
    OmegaFactor,
    group_delta,
    group_delta_starstar,
    group_log_likelihood,
    group_mm_fit,
    group_scores,
    omega_factorize,
)
from .snr_single import (
    TrueParameters,
    VarianceEstimate,
    delta,
    delta_grid,
    delta_star,
    delta_starstar,
    log_likelihood,
    mm_fit,
    noise_variance,
    score,
    solve_gamma_root,
)
from .spectral_core import (
    SpectralCache,
    decompose,
    quad_form_inv,
    rotate_response,
    trace_inv,
    trace_inv_gram,
)

__version__ = "0.1.0"
