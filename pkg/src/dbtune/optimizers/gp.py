"""Exact Gaussian-process regression with a Matern-5/2 kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

SQRT5 = math.sqrt(5.0)
LENGTHSCALE_GRID = (0.1, 0.25, 0.5, 1.0, 2.0)
SIGNAL_GRID = (0.5, 1.0, 2.0)
MAX_NOISE = 1e-2


class GpError(RuntimeError):
    pass


def matern52(A: np.ndarray, B: np.ndarray, lengthscale: Union[float, np.ndarray], signal: float) -> np.ndarray:
    A = np.atleast_2d(A) / lengthscale
    B = np.atleast_2d(B) / lengthscale
    sq = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    r = np.sqrt(np.maximum(sq, 0.0))
    return signal * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


@dataclass
class GpModel:
    X: np.ndarray
    y: np.ndarray              # standardized targets
    lengthscale: np.ndarray
    signal: float
    noise: float
    chol: np.ndarray
    alpha: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    def log_marginal_likelihood(self) -> float:
        m = len(self.y)
        if m == 0:
            return 0.0
        return float(-0.5 * self.y @ self.alpha - np.sum(np.log(np.diag(self.chol)))
                     - 0.5 * m * math.log(2 * math.pi))


def gp_fit(X: np.ndarray, y: np.ndarray, lengthscale: Union[float, Sequence[float]] = 0.5,
           signal: float = 1.0, noise: float = 1e-6) -> GpModel:
    """Condition a GP on (X, y); ``y`` is standardized internally.

    On a failed Cholesky factorization the noise is raised tenfold, up to
    ``MAX_NOISE``, before giving up with :class:`GpError`.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    d = X.shape[1] if X.ndim == 2 else 0
    ls = np.broadcast_to(np.asarray(lengthscale, dtype=float), (max(d, 1),)).copy()
    m = len(y)
    if m == 0:
        return GpModel(X.reshape(0, d), y, ls, signal, noise, np.zeros((0, 0)), np.zeros(0))
    mean = float(y.mean())
    std = float(y.std()) if m > 1 else 1.0
    if not std > 0:
        std = 1.0
    ys = (y - mean) / std
    K = matern52(X, X, ls, signal)
    eps = noise
    while True:
        try:
            L = np.linalg.cholesky(K + eps * np.eye(m))
            break
        except np.linalg.LinAlgError:
            if eps >= MAX_NOISE:
                raise GpError(f"Cholesky failed even with noise {eps:g}") from None
            eps = min(MAX_NOISE, max(eps * 10.0, 1e-10))
    alpha = cho_solve((L, True), ys)
    return GpModel(X, ys, ls, signal, eps, L, alpha, mean, std)


def gp_predict(model: GpModel, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at ``Xq``, in the original target units."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if len(model.y) == 0:
        mean = np.zeros(len(Xq))
        var = np.full(len(Xq), model.signal)
    else:
        Ks = matern52(Xq, model.X, model.lengthscale, model.signal)
        mean = Ks @ model.alpha
        v = solve_triangular(model.chol, Ks.T, lower=True)
        var = np.maximum(model.signal - np.sum(v * v, axis=0), 0.0)
    return mean * model.y_std + model.y_mean, var * model.y_std ** 2


def fit_hyperparameters(X: np.ndarray, y: np.ndarray, noise: float = 1e-2,
                        lengthscales=LENGTHSCALE_GRID, signals=SIGNAL_GRID) -> GpModel:
    """Grid search over a shared length-scale and the signal variance by marginal likelihood."""
    best, best_lml = None, -math.inf
    for ls in lengthscales:
        for sig in signals:
            try:
                model = gp_fit(X, y, ls, sig, noise)
            except GpError:
                continue
            lml = model.log_marginal_likelihood()
            if lml > best_lml:
                best, best_lml = model, lml
    if best is None:
        raise GpError("no grid point produced a valid factorization")
    return best


def expected_improvement(mean, variance, best):
    """EI for maximization; zero wherever there is no uncertainty and no improvement."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    diff = mean - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, diff / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = diff * ndtr(z) + sigma * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    ei = np.where(sigma > 0, ei, np.maximum(diff, 0.0))
    return np.maximum(ei, 0.0)
