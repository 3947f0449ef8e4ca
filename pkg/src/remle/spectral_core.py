"""Spectral decomposition of the scaled Gram matrix p⁻¹ZZᵀ.

Every single-design likelihood quantity in this package reduces to sums of
the form Σ g(λ_k) or Σ ỹ_k² g(λ_k) over the eigenvalues λ_k of p⁻¹ZZᵀ and
the rotated response ỹ = Uᵀy. Decomposing once therefore buys O(n)
evaluation per candidate SNR value, which is what makes grid scans, root
finding and the MM iteration cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

# Highest inverse power needed anywhere (conditional-variance diagnostics
# use trace(V^-4)).
MAX_TRACE_POWER = 4

# Band of tiny negative eigenvalues treated as roundoff from the PSD Gram.
_CLIP_BAND = 1e-10


@dataclass(frozen=True)
class SpectralCache:
    """Eigenpairs of p⁻¹ZZᵀ plus the dimensions they came from.

    eigenvalues are sorted descending and are all ≥ 0; eigenvectors is the
    orthogonal matrix U with p⁻¹ZZᵀ = U diag(eigenvalues) Uᵀ. Instances are
    immutable and safe to share across threads.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n: int
    p: int

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", np.asarray(self.eigenvalues, dtype=float))
        object.__setattr__(self, "eigenvectors", np.asarray(self.eigenvectors, dtype=float))
        self.eigenvalues.setflags(write=False)
        self.eigenvectors.setflags(write=False)


def validate_design(Z) -> np.ndarray:
    """Check that Z is a finite dense real matrix with n, p ≥ 1."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise ValueError(f"design matrix must be 2-dimensional, got shape {Z.shape}")
    n, p = Z.shape
    if n < 1 or p < 1:
        raise ValueError(f"design matrix needs n >= 1 and p >= 1, got {n} x {p}")
    if not np.all(np.isfinite(Z)):
        raise ValueError("design matrix contains non-finite entries")
    return Z


def decompose(Z) -> SpectralCache:
    """Eigendecompose the n×n matrix p⁻¹ZZᵀ.

    Eigenvalues in the roundoff band [-1e-10·λ₁, 0) are clipped to zero;
    anything more negative indicates a broken eigensolve and raises
    NumericalError, as does LAPACK non-convergence.
    """
    Z = validate_design(Z)
    n, p = Z.shape
    gram = Z @ Z.T
    gram += gram.T  # symmetrize exactly before dividing
    gram /= 2.0 * p
    try:
        lam, U = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigendecomposition of the {n}x{n} scaled Gram matrix failed: {exc}"
        ) from exc
    lam = lam[::-1].copy()
    U = U[:, ::-1].copy()
    lam_max = max(lam[0], 0.0)
    if lam[-1] < -_CLIP_BAND * lam_max - np.finfo(float).tiny:
        raise NumericalError(
            f"Gram eigenvalue {lam[-1]:.3e} is negative beyond the roundoff band "
            f"(lambda_max = {lam_max:.3e})"
        )
    np.clip(lam, 0.0, None, out=lam)
    return SpectralCache(eigenvalues=lam, eigenvectors=U, n=n, p=p)


def rotate_response(cache: SpectralCache, y) -> np.ndarray:
    """Rotate y into the eigenbasis: ỹ = Uᵀy (norm preserving)."""
    y = np.asarray(y, dtype=float)
    if y.shape != (cache.n,):
        raise ValueError(f"response has shape {y.shape}, expected ({cache.n},)")
    return cache.eigenvectors.T @ y


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma < 0.0:
        raise ValueError(f"gamma must be a finite nonnegative real, got {gamma}")
    return gamma


def _check_power(power: int, high: int) -> int:
    if power != int(power) or not 1 <= power <= high:
        raise ValueError(f"power must be an integer in [1, {high}], got {power}")
    return int(power)


def trace_inv(cache: SpectralCache, gamma: float, power: int = 1) -> float:
    """trace(V_γ^-power) = Σ_k (1 + γλ_k)^-power for power in 1..4.

    Lies in (0, n] and decreases in both gamma and power.
    """
    gamma = _check_gamma(gamma)
    power = _check_power(power, MAX_TRACE_POWER)
    w = 1.0 / (1.0 + gamma * cache.eigenvalues)
    return float(np.sum(w**power))


def trace_inv_gram(cache: SpectralCache, gamma: float, power: int = 1) -> float:
    """trace(V_γ^-power · p⁻¹ZZᵀ) = Σ_k λ_k (1 + γλ_k)^-power for power in {1, 2}.

    Nonnegative; zero exactly when the whole spectrum is zero.
    """
    gamma = _check_gamma(gamma)
    power = _check_power(power, 2)
    lam = cache.eigenvalues
    w = 1.0 / (1.0 + gamma * lam)
    return float(np.sum(lam * w**power))


def quad_form_inv(cache: SpectralCache, rotated_y, gamma: float, power: int = 1) -> float:
    """yᵀV_γ^-power y = Σ_k ỹ_k² (1 + γλ_k)^-power for power in {1, 2}."""
    gamma = _check_gamma(gamma)
    power = _check_power(power, 2)
    ry = np.asarray(rotated_y, dtype=float)
    if ry.shape != (cache.n,):
        raise ValueError(f"rotated response has shape {ry.shape}, expected ({cache.n},)")
    w = 1.0 / (1.0 + gamma * cache.eigenvalues)
    return float(np.sum(ry**2 * w**power))
