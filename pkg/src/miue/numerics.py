"""Special functions and small dense linear algebra helpers."""

from __future__ import annotations

import numpy as np

LOG_2PI_E = float(np.log(2.0 * np.pi * np.e))

# Bernoulli-number coefficients B_2k / (2k) of the digamma asymptotic series
_DIGAMMA_SERIES = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_ASYMPTOTIC_START = 10.0


def digamma(x):
    """Digamma function for positive arguments (scalar or array).

    Small arguments are shifted up with psi(x) = psi(x + 1) - 1/x until the
    asymptotic expansion is accurate to well below 1e-12.
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise ValueError("digamma is only defined here for x > 0")
    z = arr.copy()
    acc = np.zeros_like(z)
    while True:
        small = z < _ASYMPTOTIC_START
        if not small.any():
            break
        acc -= np.where(small, 1.0 / z, 0.0)
        z = np.where(small, z + 1.0, z)
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for coef in reversed(_DIGAMMA_SERIES):
        series = (series + coef) * inv2
    out = np.log(z) - 0.5 / z - series + acc
    return float(out) if np.ndim(x) == 0 else out


def cholesky_spd(M, sym_tol: float = 1e-10) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > sym_tol * max(1.0, np.max(np.abs(M), initial=0.0)):
        raise ValueError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "matrix is not positive-definite; consider adding a small ridge (M + lambda*I)"
        ) from exc


def logdet_spd(M) -> float:
    """log det M for symmetric positive-definite M via its Cholesky factor."""
    L = cholesky_spd(M)
    return float(2.0 * np.sum(np.log(np.diag(L))))


def gaussian_entropy(Sigma) -> float:
    """Differential entropy (nats) of N(mu, Sigma): 0.5 * log det(2 pi e Sigma)."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=np.float64))
    d = Sigma.shape[0]
    return 0.5 * (d * LOG_2PI_E + logdet_spd(Sigma))
