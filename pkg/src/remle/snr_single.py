"""Single-design random-effects MLE of the SNR and noise variance.

The postulated model treats the regression coefficients as i.i.d. Gaussian
with variance σ_α²/p and the noise as N(0, σ_ε²), giving the covariance
Ω = σ_ε²I + (σ_α²/p)ZZᵀ = σ_ε²V_γ with γ = σ_α²/σ_ε². Everything below is
evaluated through the spectral cache of p⁻¹ZZᵀ, so each operation is O(n)
once the decomposition exists.

Two routes to the estimate are provided and cross-checked in the tests:
the profiled likelihood equation delta(γ) = 0 solved by a safeguarded
bracketing root finder, and the multiplicative MM fixed-point iteration
mm_fit whose ascent property makes it the robust default.

delta_star / delta_starstar are diagnostics from the consistency analysis:
the conditional expectation of delta given the design, and its
design-trace surrogate whose large-n limit is delta_limit in mp_theory.
They require knowing the true parameters and are not estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateDesignError, NoRootError
from .spectral_core import (
    SpectralCache,
    decompose,
    quad_form_inv,
    trace_inv,
    trace_inv_gram,
    validate_design,
)

LOG_2PI = math.log(2.0 * math.pi)

# Variance components are clamped at this floor instead of collapsing to 0.
VARIANCE_FLOOR = 1e-12

# Default bracket and hard expansion cap for the root finder.
ROOT_BRACKET = (1e-2, 1e2)
ROOT_BRACKET_CAP = (1e-6, 1e4)


@dataclass(frozen=True)
class VarianceEstimate:
    """Fitted (σ̂_ε², σ̂_α², γ̂) with convergence metadata.

    boundary marks a fit whose σ_α² hit the variance floor (the constrained
    optimum sits on σ_α² = 0); loglik_path is populated only when the fitter
    is asked to record it.
    """

    sigma_eps_sq: float
    sigma_alpha_sq: float
    gamma_hat: float
    iterations: int
    converged: bool
    final_loglik: float
    boundary: bool = False
    loglik_path: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TrueParameters:
    """Ground-truth (β, σ₀²) with the implied SNR γ₀ = ‖β‖²/σ₀²."""

    beta: np.ndarray
    sigma0_sq: float
    gamma0: float

    @classmethod
    def from_beta(cls, beta, sigma0_sq: float) -> "TrueParameters":
        beta = np.asarray(beta, dtype=float)
        sigma0_sq = float(sigma0_sq)
        if sigma0_sq <= 0.0:
            raise ValueError(f"sigma0_sq must be positive, got {sigma0_sq}")
        norm_sq = float(beta @ beta)
        return cls(beta=beta, sigma0_sq=sigma0_sq, gamma0=norm_sq / sigma0_sq)

    def __post_init__(self):
        norm_sq = float(np.asarray(self.beta, dtype=float) @ np.asarray(self.beta, dtype=float))
        target = self.gamma0 * self.sigma0_sq
        if abs(target - norm_sq) > 1e-10 * max(norm_sq, 1e-300):
            raise ValueError(
                f"gamma0 * sigma0_sq = {target!r} does not match ||beta||^2 = {norm_sq!r}"
            )


def _check_variances(sigma_eps_sq: float, sigma_alpha_sq: float):
    if not (sigma_eps_sq > 0.0) or not math.isfinite(sigma_eps_sq):
        raise ValueError(f"sigma_eps_sq must be positive, got {sigma_eps_sq}")
    if sigma_alpha_sq < 0.0 or not math.isfinite(sigma_alpha_sq):
        raise ValueError(f"sigma_alpha_sq must be nonnegative, got {sigma_alpha_sq}")


def _omega_diag(cache: SpectralCache, sigma_eps_sq: float, sigma_alpha_sq: float) -> np.ndarray:
    return sigma_eps_sq + sigma_alpha_sq * cache.eigenvalues


def log_likelihood(cache: SpectralCache, rotated_y, sigma_eps_sq: float, sigma_alpha_sq: float) -> float:
    """Gaussian log-likelihood -(n/2)log 2π - ½log det Ω - ½yᵀΩ⁻¹y.

    Evaluated spectrally: Ω has eigenvalues σ_ε² + σ_α²λ_k in the cache
    basis. The additive constant is the full Gaussian one so values are
    comparable across implementations.
    """
    _check_variances(sigma_eps_sq, sigma_alpha_sq)
    ry = np.asarray(rotated_y, dtype=float)
    omega = _omega_diag(cache, sigma_eps_sq, sigma_alpha_sq)
    return float(
        -0.5 * (cache.n * LOG_2PI + np.sum(np.log(omega)) + np.sum(ry**2 / omega))
    )


def score(cache: SpectralCache, rotated_y, sigma_eps_sq: float, sigma_alpha_sq: float) -> tuple[float, float]:
    """Score vector (∂l/∂σ_ε², ∂l/∂σ_α²).

    S_ε = ½(yᵀΩ⁻²y - trace Ω⁻¹); S_α = ½(yᵀΩ⁻¹(p⁻¹ZZᵀ)Ω⁻¹y - trace(Ω⁻¹p⁻¹ZZᵀ)).
    """
    _check_variances(sigma_eps_sq, sigma_alpha_sq)
    ry = np.asarray(rotated_y, dtype=float)
    lam = cache.eigenvalues
    omega = _omega_diag(cache, sigma_eps_sq, sigma_alpha_sq)
    w = 1.0 / omega
    q = ry**2 * w * w
    s_eps = 0.5 * (np.sum(q) - np.sum(w))
    s_alpha = 0.5 * (np.sum(lam * q) - np.sum(lam * w))
    return float(s_eps), float(s_alpha)


def delta(cache: SpectralCache, rotated_y, gamma: float) -> float:
    """Profiled likelihood equation in the SNR alone.

    delta(γ) = yᵀV_γ⁻¹y / trace(I - V_γ⁻¹)
             - n·yᵀV_γ⁻²y / (trace(I - V_γ⁻¹)·trace(V_γ⁻¹)),
    with trace(I - V_γ⁻¹) accumulated as γ·Σλ_k/(1+γλ_k) to avoid the
    cancellation in n - trace(V_γ⁻¹) at small γ. Its root is the SNR MLE.
    """
    gamma = float(gamma)
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    tg = trace_inv_gram(cache, gamma, 1)
    if tg <= 0.0:
        raise DegenerateDesignError(
            "all Gram eigenvalues are zero, so trace(I - V^-1) = 0 and delta is undefined"
        )
    t1 = trace_inv(cache, gamma, 1)
    q1 = quad_form_inv(cache, rotated_y, gamma, 1)
    q2 = quad_form_inv(cache, rotated_y, gamma, 2)
    tr_complement = gamma * tg
    return float(q1 / tr_complement - cache.n * q2 / (tr_complement * t1))


def delta_grid(cache: SpectralCache, rotated_y, gammas) -> np.ndarray:
    """delta evaluated over a grid of γ values (uniqueness diagnostic)."""
    return np.array([delta(cache, rotated_y, g) for g in np.asarray(gammas, dtype=float)])


def solve_gamma_root(
    cache: SpectralCache,
    rotated_y,
    bracket: tuple[float, float] = ROOT_BRACKET,
    tol: float = 1e-10,
    ftol: float = 0.0,
) -> float:
    """Root of delta(γ) inside a (possibly expanded) bracket.

    The initial bracket is widened geometrically by factors of 10, never
    beyond [1e-6, 1e4], until the endpoint values change sign. A probe with
    |delta| ≤ ftol short-circuits and is returned as-is. The interior solve
    is Brent's safeguarded bisection/interpolation with both absolute and
    relative x-tolerance set to tol, so the final bracket width is at most
    tol·(1 + γ̂). Raises NoRootError (with the probed values) if the capped
    expansion never produces a sign change.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (0.0 < lo < hi):
        raise ValueError(f"bracket must satisfy 0 < lo < hi, got ({lo}, {hi})")
    tol = float(tol)
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")

    f = lambda g: delta(cache, rotated_y, g)
    f_lo, f_hi = f(lo), f(hi)
    probes = [(lo, f_lo), (hi, f_hi)]
    if abs(f_lo) <= ftol:
        return lo
    if abs(f_hi) <= ftol:
        return hi
    cap_lo, cap_hi = ROOT_BRACKET_CAP
    while f_lo * f_hi > 0.0:
        if lo <= cap_lo and hi >= cap_hi:
            raise NoRootError(
                "delta has no sign change inside "
                f"[{cap_lo:g}, {cap_hi:g}] (delta({lo:g}) = {f_lo:.6g}, "
                f"delta({hi:g}) = {f_hi:.6g}); the constrained optimum may sit "
                "on the gamma = 0 boundary",
                probes,
            )
        if lo > cap_lo:
            lo = max(lo / 10.0, cap_lo)
            f_lo = f(lo)
            probes.append((lo, f_lo))
            if abs(f_lo) <= ftol:
                return lo
        if f_lo * f_hi > 0.0 and hi < cap_hi:
            hi = min(hi * 10.0, cap_hi)
            f_hi = f(hi)
            probes.append((hi, f_hi))
            if abs(f_hi) <= ftol:
                return hi
    rtol = max(tol, 4.0 * np.finfo(float).eps)
    return float(brentq(f, lo, hi, xtol=tol, rtol=rtol))


def noise_variance(cache: SpectralCache, rotated_y, gamma_hat: float) -> float:
    """Noise-variance estimate σ̂_ε² = n⁻¹ yᵀV_γ̂⁻¹y (positive for y ≠ 0)."""
    gamma_hat = float(gamma_hat)
    if gamma_hat < 0.0:
        raise ValueError(f"gamma_hat must be nonnegative, got {gamma_hat}")
    return quad_form_inv(cache, rotated_y, gamma_hat, 1) / cache.n


def mm_fit(
    cache: SpectralCache,
    rotated_y,
    init: Optional[tuple[float, float]] = None,
    tol: float = 1e-8,
    max_iter: int = 10000,
    stat_tol: float = 1e-7,
    record_path: bool = False,
) -> VarianceEstimate:
    """Multiplicative MM iteration for (σ_ε², σ_α²).

    Each sweep rebuilds Ω at the current iterate and applies, simultaneously,
        σ_α² ← σ_α²·sqrt(yᵀΩ⁻¹(p⁻¹ZZᵀ)Ω⁻¹y / trace(Ω⁻¹p⁻¹ZZᵀ)),
        σ_ε² ← σ_ε²·sqrt(yᵀΩ⁻²y / trace Ω⁻¹),
    which never decreases the log-likelihood. Convergence requires the
    log-likelihood change to fall below tol and every interior component's
    squared update ratio to sit within stat_tol of 1, so that the scores
    vanish at the reported estimate (stat_tol <= 0 disables the second
    check). A σ_α² collapse is clamped at 1e-12 and flagged as a boundary
    fit rather than an error; running out of iterations returns a
    non-converged estimate, also not an error.

    Default initialization splits the sample variance evenly:
    σ_ε² = σ_α² = ‖y‖²/(2n).
    """
    ry = np.asarray(rotated_y, dtype=float)
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    if init is None:
        scale = float(ry @ ry) / (2.0 * cache.n)
        if scale <= 0.0:
            raise ValueError("response is identically zero; no positive initialization exists")
        s_eps, s_alpha = scale, scale
    else:
        s_eps, s_alpha = float(init[0]), float(init[1])
        if s_eps <= 0.0 or s_alpha <= 0.0:
            raise ValueError(f"initial variances must be positive, got {init}")

    lam = cache.eigenvalues
    y2 = ry**2
    path = [] if record_path else None
    prev_ll = -np.inf
    ll = -np.inf
    boundary = False
    converged = False
    iterations = 0
    for t in range(max_iter):
        omega = s_eps + s_alpha * lam
        w = 1.0 / omega
        q = y2 * w * w
        ll = -0.5 * (cache.n * LOG_2PI + np.sum(np.log(omega)) + np.sum(y2 * w))
        if path is not None:
            path.append(ll)
        ratio_eps = np.sum(q) / np.sum(w)
        den_alpha = np.sum(lam * w)
        ratio_alpha = np.sum(lam * q) / den_alpha if den_alpha > 0.0 else 1.0
        if t > 0 and abs(ll - prev_ll) < tol:
            # a component pinned at the floor with its ratio still pushing
            # down sits on the constrained boundary and counts as stationary
            eps_ok = abs(ratio_eps - 1.0) <= stat_tol or (
                s_eps <= VARIANCE_FLOOR and ratio_eps < 1.0
            )
            alpha_ok = abs(ratio_alpha - 1.0) <= stat_tol or (
                s_alpha <= VARIANCE_FLOOR and ratio_alpha < 1.0
            )
            if stat_tol <= 0.0 or (eps_ok and alpha_ok):
                converged = True
                break
        prev_ll = ll
        s_eps = s_eps * math.sqrt(ratio_eps)
        s_alpha = s_alpha * math.sqrt(ratio_alpha)
        if s_alpha < VARIANCE_FLOOR:
            s_alpha = VARIANCE_FLOOR
            boundary = True
        if s_eps < VARIANCE_FLOOR:
            s_eps = VARIANCE_FLOOR
            boundary = True
        iterations = t + 1

    if not converged:
        # Loop exhausted max_iter: report the log-likelihood at the iterate
        # actually returned, not the pre-update one.
        omega = s_eps + s_alpha * lam
        ll = -0.5 * (cache.n * LOG_2PI + np.sum(np.log(omega)) + np.sum(y2 / omega))
        if path is not None:
            path.append(ll)

    return VarianceEstimate(
        sigma_eps_sq=float(s_eps),
        sigma_alpha_sq=float(s_alpha),
        gamma_hat=float(s_alpha / s_eps),
        iterations=iterations,
        converged=converged,
        final_loglik=float(ll),
        boundary=boundary,
        loglik_path=np.array(path) if path is not None else None,
    )


def delta_star(Z, params: TrueParameters, gamma: float, cache: Optional[SpectralCache] = None) -> float:
    """Conditional expectation of delta(γ) given the design (diagnostic).

    E[delta(γ)|Z] = [Σ_k β_k² z_kᵀV⁻¹z_k + σ₀²·tr V⁻¹] / tr(I - V⁻¹)
                  - n[Σ_k β_k² z_kᵀV⁻²z_k + σ₀²·tr V⁻²] / (tr(I - V⁻¹)·tr V⁻¹),
    valid under the symmetrized representation where each column carries an
    independent sign flip. Requires the ground truth, so this is a proof
    diagnostic, not an estimator.
    """
    Z = validate_design(Z)
    if cache is None:
        cache = decompose(Z)
    gamma = float(gamma)
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    beta = np.asarray(params.beta, dtype=float)
    if beta.shape != (cache.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({cache.p},)")
    tg = trace_inv_gram(cache, gamma, 1)
    if tg <= 0.0:
        raise DegenerateDesignError("all Gram eigenvalues are zero; delta_star is undefined")
    lam = cache.eigenvalues
    c = 1.0 / (1.0 + gamma * lam)
    # Rotate the columns once: z_k' V^-j z_k = sum_i W_ik^2 c_i^j.
    W = cache.eigenvectors.T @ Z
    m = (W * W) @ (beta * beta)
    sig1 = float(np.sum(m * c))
    sig2 = float(np.sum(m * c * c))
    t1 = float(np.sum(c))
    t2 = float(np.sum(c * c))
    tr_complement = gamma * tg
    s0 = params.sigma0_sq
    return float(
        (sig1 + s0 * t1) / tr_complement
        - cache.n * (sig2 + s0 * t2) / (tr_complement * t1)
    )


def delta_starstar(cache: SpectralCache, gamma0: float, sigma0_sq: float, gamma: float) -> float:
    """Deterministic surrogate of delta_star built from design traces.

    delta**(γ) = σ₀²·tr(V_γ⁻¹(I + (γ₀/p)ZZᵀ)) / tr(I - V_γ⁻¹)
               - n·σ₀²·tr(V_γ⁻²(I + (γ₀/p)ZZᵀ)) / (tr(I - V_γ⁻¹)·tr V_γ⁻¹).
    Identically zero at γ = γ₀ since V_{γ₀}⁻¹(I + (γ₀/p)ZZᵀ) = I; its
    large-n limit is mp_theory.delta_limit.
    """
    gamma = float(gamma)
    gamma0 = float(gamma0)
    sigma0_sq = float(sigma0_sq)
    if gamma <= 0.0 or gamma0 <= 0.0:
        raise ValueError(f"gamma and gamma0 must be positive, got {gamma}, {gamma0}")
    if sigma0_sq <= 0.0:
        raise ValueError(f"sigma0_sq must be positive, got {sigma0_sq}")
    tg1 = trace_inv_gram(cache, gamma, 1)
    if tg1 <= 0.0:
        raise DegenerateDesignError("all Gram eigenvalues are zero; delta_starstar is undefined")
    tg2 = trace_inv_gram(cache, gamma, 2)
    t1 = trace_inv(cache, gamma, 1)
    t2 = trace_inv(cache, gamma, 2)
    tr_complement = gamma * tg1
    num1 = t1 + gamma0 * tg1
    num2 = t2 + gamma0 * tg2
    return float(sigma0_sq * (num1 / tr_complement - cache.n * num2 / (tr_complement * t1)))
