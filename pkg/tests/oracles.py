"""Independent dense-algebra oracles used by the test suite.

Everything here works from the raw design matrix with explicit inverses,
Cholesky factors and scalar searches, deliberately avoiding the package's
spectral shortcut so that agreement is evidence, not tautology.
"""

import math

import numpy as np
import scipy.linalg

LOG_2PI = math.log(2.0 * math.pi)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def dense_v(Z, gamma):
    n = Z.shape[0]
    return np.eye(n) + (gamma / Z.shape[1]) * (Z @ Z.T)


def dense_omega(groups, sigma_eps_sq, sigma_alpha_sq):
    n = groups[0].shape[0]
    omega = sigma_eps_sq * np.eye(n)
    for Z, sa in zip(groups, np.atleast_1d(sigma_alpha_sq)):
        omega += (sa / Z.shape[1]) * (Z @ Z.T)
    return omega


def dense_loglik(groups, y, sigma_eps_sq, sigma_alpha_sq):
    """Gaussian log-likelihood via Cholesky log-det and a dense solve."""
    omega = dense_omega(groups, sigma_eps_sq, sigma_alpha_sq)
    L = scipy.linalg.cholesky(omega, lower=True)
    half_logdet = float(np.sum(np.log(np.diag(L))))
    w = scipy.linalg.cho_solve((L, True), y)
    return -0.5 * (len(y) * LOG_2PI) - half_logdet - 0.5 * float(y @ w)


def dense_scores(groups, y, sigma_eps_sq, sigma_alpha_sq):
    """(S_eps, S_alpha_1, ..., S_alpha_s) from explicit inverses."""
    omega = dense_omega(groups, sigma_eps_sq, sigma_alpha_sq)
    Oi = np.linalg.inv(omega)
    w = Oi @ y
    out = [0.5 * (w @ w - np.trace(Oi))]
    for Z in groups:
        S = Z @ Z.T / Z.shape[1]
        out.append(0.5 * (w @ S @ w - np.trace(Oi @ S)))
    return np.array(out)


def dense_delta(Z, y, gamma):
    """y'B_gamma y with B_gamma assembled densely from its definition."""
    n = Z.shape[0]
    S = Z @ Z.T / Z.shape[1]
    Vi = np.linalg.inv(np.eye(n) + gamma * S)
    B = Vi @ S @ Vi / np.trace(Vi @ S) - Vi @ Vi / np.trace(Vi)
    return float(y @ B @ y)


def dense_group_delta(groups, y, gamma, i):
    n = groups[0].shape[0]
    V = np.eye(n)
    for Z, g in zip(groups, gamma):
        V += (g / Z.shape[1]) * (Z @ Z.T)
    Vi = np.linalg.inv(V)
    Si = groups[i] @ groups[i].T / groups[i].shape[1]
    w = Vi @ y
    return float(w @ Si @ w / np.trace(Vi @ Si) - w @ w / np.trace(Vi))


def dense_group_delta_starstar(groups, gamma0, sigma0_sq, gamma, i):
    n = groups[0].shape[0]
    V = np.eye(n)
    for Z, g in zip(groups, gamma):
        V += (g / Z.shape[1]) * (Z @ Z.T)
    Vi = np.linalg.inv(V)
    Vi2 = Vi @ Vi
    Si = groups[i] @ groups[i].T / groups[i].shape[1]
    value = sigma0_sq * (1.0 - gamma0[i] / gamma[i]) * (
        np.trace(Vi2 @ Si) / np.trace(Vi @ Si) - np.trace(Vi2) / np.trace(Vi)
    )
    for r in range(len(groups)):
        if r == i:
            continue
        Sr = groups[r] @ groups[r].T / groups[r].shape[1]
        value += sigma0_sq * gamma[r] * (gamma0[r] / gamma[r] - gamma0[i] / gamma[i]) * (
            np.trace(Vi @ Sr @ Vi @ Si) / np.trace(Vi @ Si)
            - np.trace(Vi2 @ Sr) / np.trace(Vi)
        )
    return float(value)


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def golden_max(f, lo, hi, tol=1e-7, max_iter=500):
    """Golden-section maximizer of a unimodal scalar function on [lo, hi]."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * (1.0 + abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def coordinate_maximize(f, x0, span=8.0, sweeps=200, tol=1e-10):
    """Cyclic per-coordinate golden-section ascent from x0 (positive coords).

    Brackets each coordinate multiplicatively by `span` around its current
    value (the span narrows as sweeps progress). Coordinate descent zigzags
    on correlated likelihood ridges, so the sweep budget is generous;
    accuracy is limited by unimodality along coordinates, which holds for
    the variance-component likelihoods exercised in the tests.
    """
    x = np.array(x0, dtype=float)
    for sweep in range(sweeps):
        moved = 0.0
        for k in range(len(x)):
            def fk(v, k=k):
                trial = x.copy()
                trial[k] = v
                return f(trial)
            new = golden_max(fk, x[k] / span, x[k] * span, tol=tol)
            moved = max(moved, abs(new - x[k]) / max(x[k], 1e-12))
            x[k] = new
        span = max(1.0 + 0.7 * (span - 1.0), 1.01)
        if moved < 1e-11:
            break
    return x


def grid_then_golden_loglik(groups, y, n_grid=12):
    """Brute-force ML oracle: coarse log-grid scan, then coordinate golden
    refinement of the dense log-likelihood over (sigma_eps^2, sigma_alpha^2...)."""
    n = len(y)
    s = len(groups)
    scale = float(y @ y) / n
    grid = scale * np.logspace(-2.0, 0.5, n_grid)
    f = lambda x: dense_loglik(groups, y, x[0], x[1:])
    best, best_val = None, -np.inf
    if s == 1:
        for se in grid:
            for sa in grid:
                val = f(np.array([se, sa]))
                if val > best_val:
                    best, best_val = np.array([se, sa]), val
    else:
        # joint grid is too big for s >= 2; scan a crude diagonal instead
        for se in grid:
            for sa in grid:
                x = np.concatenate([[se], np.full(s, sa)])
                val = f(x)
                if val > best_val:
                    best, best_val = x, val
    return coordinate_maximize(f, best, span=6.0)
