"""Matérn-5/2 kernel with ARD lengthscales, plus the derivatives used elsewhere.

All functions operate on raw coordinate arrays; input normalization is the
caller's concern. Derivatives are analytic and remain finite at zero distance
(the r -> 0 limits are taken explicitly).
"""

from __future__ import annotations

import numpy as np

_SQRT5 = np.sqrt(5.0)


def _scaled_sqdist(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Squared distance of lengthscale-scaled inputs, shape (n1, n2), clipped at 0."""
    A = X1 / lengthscales
    B = X2 / lengthscales
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.maximum(sq, 0.0)


def matern52(
    X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray, outputscale: float
) -> np.ndarray:
    """Matérn-5/2 kernel matrix k(X1, X2), shape (n1, n2).

    k(a, b) = s^2 (1 + sqrt(5) r + 5/3 r^2) exp(-sqrt(5) r) with
    r^2 = sum_i ((a_i - b_i) / l_i)^2.
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    X2 = np.atleast_2d(np.asarray(X2, dtype=np.float64))
    if not (np.all(np.isfinite(X1)) and np.all(np.isfinite(X2))):
        raise ValueError("kernel inputs must be finite")
    lengthscales = np.asarray(lengthscales, dtype=np.float64)
    r = np.sqrt(_scaled_sqdist(X1, X2, lengthscales))
    return outputscale * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-_SQRT5 * r)


def matern52_grad_x1(
    X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray, outputscale: float
) -> np.ndarray:
    """First-argument derivative dk(x1, x2)/dx1, shape (n1, n2, d).

    dk/da_i = g(r) (a_i - b_i) / l_i^2 with
    g(r) = -(5/3) s^2 (1 + sqrt(5) r) exp(-sqrt(5) r), which is finite at r = 0.
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    X2 = np.atleast_2d(np.asarray(X2, dtype=np.float64))
    lengthscales = np.asarray(lengthscales, dtype=np.float64)
    r = np.sqrt(_scaled_sqdist(X1, X2, lengthscales))
    g = -(5.0 / 3.0) * outputscale * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
    diff = (X1[:, None, :] - X2[None, :, :]) / (lengthscales**2)
    return g[:, :, None] * diff


def matern52_grad_log_hyper(
    X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray, outputscale: float
) -> tuple[np.ndarray, np.ndarray]:
    """Kernel-matrix derivatives w.r.t. log-lengthscales and log-outputscale.

    Returns ``(dK_dlog_ls, dK_dlog_os)`` with shapes (n1, n2, d) and (n1, n2).
    dk/dlog l_i = g(r) (a_i - b_i)^2 / l_i^2 ... with the sign such that growing
    a lengthscale raises covariance: dk/dl_i = -g(r) (a_i - b_i)^2 / l_i^3.
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    X2 = np.atleast_2d(np.asarray(X2, dtype=np.float64))
    lengthscales = np.asarray(lengthscales, dtype=np.float64)
    r = np.sqrt(_scaled_sqdist(X1, X2, lengthscales))
    K = outputscale * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-_SQRT5 * r)
    g = -(5.0 / 3.0) * outputscale * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
    sq = ((X1[:, None, :] - X2[None, :, :]) / lengthscales) ** 2
    dK_dlog_ls = -g[:, :, None] * sq
    return dK_dlog_ls, K
