"""Closed-form / quadrature Marchenko-Pastur functionals.

The empirical spectral distribution of p⁻¹ZZᵀ for a design with independent
zero-mean unit-variance entries converges (n/p → τ) to the MP law: density
f_τ(x) = sqrt((b₊-x)(x-b₋)) / (2πτx) on [b₋, b₊] with b±(τ) = (1 ± √τ)²,
plus a point mass of weight 1 - 1/τ at the origin when τ > 1.

All integrals here are over the continuous part only; the atom is carried
explicitly in MpSpec.atom_weight and added exactly where the integrand is
nonzero at x = 0. Quadrature uses the substitution
x = (b₊+b₋)/2 + (b₊-b₋)/2 · sinθ, which absorbs the square-root endpoint
factor into cos²θ and leaves a smooth integrand for adaptive Gauss-Kronrod.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.integrate import quad

from .errors import NumericalError

_QUAD_TARGET = 1e-10  # absolute error target per integral
_QUAD_ACCEPT = 1e-8  # achieved-error bound beyond which we refuse to answer


@dataclass(frozen=True)
class MpSpec:
    """Aspect ratio τ = lim n/p with the derived support and atom weight."""

    tau: float
    b_minus: float
    b_plus: float
    atom_weight: float

    @classmethod
    def from_tau(cls, tau: float) -> "MpSpec":
        tau = float(tau)
        if not math.isfinite(tau) or tau <= 0.0:
            raise ValueError(f"aspect ratio tau must be a positive real, got {tau}")
        root = math.sqrt(tau)
        return cls(
            tau=tau,
            b_minus=(1.0 - root) ** 2,
            b_plus=(1.0 + root) ** 2,
            atom_weight=max(0.0, 1.0 - 1.0 / tau),
        )


def mp_density(spec: MpSpec, x: float) -> float:
    """Continuous MP density at x (the atom is reported separately)."""
    x = float(x)
    if x <= 0.0 or x < spec.b_minus or x > spec.b_plus:
        return 0.0
    return math.sqrt((spec.b_plus - x) * (x - spec.b_minus)) / (2.0 * math.pi * spec.tau * x)


def _integrate(spec: MpSpec, g) -> float:
    """∫ g(x) f_τ(x) dx over [b₋, b₊] via the sinθ substitution."""
    center = 0.5 * (spec.b_plus + spec.b_minus)
    half = 0.5 * (spec.b_plus - spec.b_minus)
    scale = half * half / (2.0 * math.pi * spec.tau)

    def integrand(theta):
        x = center + half * math.sin(theta)
        if x <= 0.0:  # only reachable at the left endpoint when tau = 1
            return 0.0
        c = math.cos(theta)
        return scale * g(x) * c * c / x

    out = quad(integrand, -0.5 * math.pi, 0.5 * math.pi, epsabs=_QUAD_TARGET, epsrel=0.0, limit=200, full_output=1)
    value, abserr = out[0], out[1]
    if len(out) > 3 or abserr > _QUAD_ACCEPT:
        raise NumericalError(
            f"MP quadrature did not reach the accuracy target (achieved abs error {abserr:.3e})"
        )
    return value


def mp_moment(spec: MpSpec, gamma: float, l: int = 0, j: int = 0) -> float:
    """Continuous-part integral ∫ xˡ (1 + γx)⁻ʲ f_τ(x) dx.

    The caller adds the atom term explicitly: it contributes
    atom_weight · 0ˡ · 1, i.e. atom_weight when l = 0 and nothing when l ≥ 1.
    """
    gamma = float(gamma)
    if not math.isfinite(gamma) or gamma < 0.0:
        raise ValueError(f"gamma must be a finite nonnegative real, got {gamma}")
    if l != int(l) or l < 0 or j != int(j) or j < 0:
        raise ValueError(f"moment orders must be nonnegative integers, got l={l}, j={j}")
    l, j = int(l), int(j)
    return _integrate(spec, lambda x: x**l / (1.0 + gamma * x) ** j)


def trace_limit_inv(spec: MpSpec, gamma: float, j: int = 1) -> float:
    """Limit of n⁻¹trace(V_γ⁻ʲ) for j in {1, 2}: ∫(1+γx)⁻ʲ f_τ dx + atom.

    The atom at 0 contributes its full weight since (1 + γ·0)⁻ʲ = 1.
    """
    if j not in (1, 2):
        raise ValueError(f"j must be 1 or 2, got {j}")
    return mp_moment(spec, gamma, 0, j) + spec.atom_weight


def d_factor(spec: MpSpec, gamma: float) -> float:
    """The strictly positive spectral factor d_{γ,τ} scaling the Δ** limit.

    Branches on τ ≤ 1 vs τ > 1; in the latter case each first/second inverse
    moment is shifted by the atom weight 1 - 1/τ. Both branches reduce to
    (t₂ - t₁²) / (t₁(1 - t₁)) with t_j = trace_limit_inv(·, γ, j), which is
    positive by strict Cauchy-Schwarz for γ > 0.
    """
    gamma = float(gamma)
    if not math.isfinite(gamma) or gamma <= 0.0:
        raise ValueError(f"gamma must be a positive real, got {gamma}")
    m1 = mp_moment(spec, gamma, 0, 1)
    m2 = mp_moment(spec, gamma, 0, 2)
    if spec.tau <= 1.0:
        return 1.0 - (m1 - m2) / (m1 - m1 * m1)
    w = spec.atom_weight
    return -((m1 + w) ** 2 - (m2 + w)) / ((m1 + w) * (1.0 / spec.tau - m1))


def delta_limit(spec: MpSpec, gamma: float, gamma0: float, sigma0_sq: float) -> float:
    """Almost-sure limit c_γ = σ₀²(γ₀/γ - 1)·d_{γ,τ} of the Δ** surrogate.

    Vanishes exactly at γ = γ₀ and carries sign(γ₀ - γ) elsewhere.
    """
    gamma0 = float(gamma0)
    sigma0_sq = float(sigma0_sq)
    if gamma0 <= 0.0:
        raise ValueError(f"gamma0 must be positive, got {gamma0}")
    if sigma0_sq <= 0.0:
        raise ValueError(f"sigma0_sq must be positive, got {sigma0_sq}")
    coeff = gamma0 / float(gamma) - 1.0
    if coeff == 0.0:
        return 0.0
    return sigma0_sq * coeff * d_factor(spec, gamma)


def s_bar(spec: MpSpec, gamma: float, gamma0: float, sigma0_sq: float) -> float:
    """Limit of s_n(γ) = n⁻¹yᵀV_γ⁻¹y: σ₀²(∫(1+γ₀x)/(1+γx) f_τ dx + atom).

    Strictly decreasing in γ, and equal to σ₀² at γ = γ₀ where the
    integrand collapses to 1.
    """
    gamma = float(gamma)
    gamma0 = float(gamma0)
    sigma0_sq = float(sigma0_sq)
    if not math.isfinite(gamma) or gamma < 0.0:
        raise ValueError(f"gamma must be a finite nonnegative real, got {gamma}")
    if gamma0 <= 0.0:
        raise ValueError(f"gamma0 must be positive, got {gamma0}")
    if sigma0_sq <= 0.0:
        raise ValueError(f"sigma0_sq must be positive, got {sigma0_sq}")
    cont = _integrate(spec, lambda x: (1.0 + gamma0 * x) / (1.0 + gamma * x))
    return sigma0_sq * (cont + spec.atom_weight)
