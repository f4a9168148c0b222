"""Gaussian-process regression with an isotropic squared-exponential kernel.

Exact inference via Cholesky factorization; hyperparameters found by
multi-start derivative-free maximization of the log marginal likelihood
in (log length-scale, log signal variance, log noise variance) space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, SingularKernel
from .sobol import sobol_points

NOISE_FLOOR = 1e-8
DUPLICATE_TOL = 1e-12

# Bounds for the multi-start likelihood search, in natural units.
DEFAULT_BOUNDS = {
    "length_scale": (1e-2, 1e2),
    "signal_variance": (1e-6, 1e3),
    "noise_variance": (NOISE_FLOOR, 1.0),
}
N_STARTS = 8
OPT_TOL = 1e-6
MAX_EVALS_PER_START = 250


@dataclass(frozen=True)
class GPHyperparams:
    length_scale: float
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        if self.length_scale <= 0 or self.signal_variance <= 0:
            raise ValueError("length_scale and signal_variance must be positive")
        if self.noise_variance < NOISE_FLOOR:
            object.__setattr__(self, "noise_variance", NOISE_FLOOR)


def kernel(x: np.ndarray, y: np.ndarray, hyper: GPHyperparams) -> float:
    """Squared-exponential covariance between two points."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise DimensionMismatch(f"point dimensions differ: {x.shape} vs {y.shape}")
    sq = float(np.sum((x - y) ** 2))
    return hyper.signal_variance * np.exp(-sq / (2.0 * hyper.length_scale**2))


def _kernel_matrix(sqdist: np.ndarray, hyper: GPHyperparams) -> np.ndarray:
    return hyper.signal_variance * np.exp(-sqdist / (2.0 * hyper.length_scale**2))


class GPModel:
    """Fitted GP: training data, hyperparameters, Cholesky factor."""

    def __init__(self, X: np.ndarray, y: np.ndarray, hyper: GPHyperparams):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y row counts differ")
        if X.shape[0] < 1:
            raise ValueError("need at least one training point")
        self.X = X
        self.offset = float(y.mean())
        self.y_centered = y - self.offset
        self.hyper = hyper
        K = _kernel_matrix(cdist(X, X, "sqeuclidean"), hyper)
        K[np.diag_indices_from(K)] += hyper.noise_variance
        try:
            self.chol = cholesky(K, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularKernel(str(exc)) from exc
        self.alpha = cho_solve((self.chol, True), self.y_centered)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def log_marginal_likelihood(self) -> float:
        n = self.X.shape[0]
        return float(
            -0.5 * self.y_centered @ self.alpha
            - np.log(np.diag(self.chol)).sum()
            - 0.5 * n * np.log(2.0 * np.pi)
        )

    def predict(self, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return gp_predict(self, Xs)

    def to_json(self) -> str:
        return json.dumps(
            {
                "X": self.X.tolist(),
                "y": (self.y_centered + self.offset).tolist(),
                "hyper": {
                    "length_scale": self.hyper.length_scale,
                    "signal_variance": self.hyper.signal_variance,
                    "noise_variance": self.hyper.noise_variance,
                },
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GPModel":
        data = json.loads(text)
        hyper = GPHyperparams(**data["hyper"])
        return cls(np.asarray(data["X"]), np.asarray(data["y"]), hyper)


def _merge_duplicates(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average targets of rows identical within DUPLICATE_TOL."""
    order = np.lexsort(X.T[::-1])
    Xs, ys = X[order], y[order]
    keep_X, keep_y = [Xs[0]], [[ys[0]]]
    for row, target in zip(Xs[1:], ys[1:]):
        if np.max(np.abs(row - keep_X[-1])) <= DUPLICATE_TOL:
            keep_y[-1].append(target)
        else:
            keep_X.append(row)
            keep_y.append([target])
    return np.array(keep_X), np.array([np.mean(g) for g in keep_y])


def _log_likelihood(theta: np.ndarray, sqdist: np.ndarray, y: np.ndarray) -> float:
    """LML at theta = (log l, log sigma^2, log noise); -inf when singular."""
    l, sig2, noise = np.exp(theta)
    K = sig2 * np.exp(-sqdist / (2.0 * l * l))
    K[np.diag_indices_from(K)] += max(noise, NOISE_FLOOR)
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = cho_solve((L, True), y)
    n = y.shape[0]
    return float(-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi))


def gp_fit(
    X: np.ndarray,
    y: np.ndarray,
    bounds: dict[str, tuple[float, float]] | None = None,
    hyper: GPHyperparams | None = None,
) -> GPModel:
    """Fit a GP; hyperparameters maximize the log marginal likelihood.

    Pass `hyper` to skip optimization and use fixed hyperparameters.
    Duplicate inputs (within 1e-12) are merged by averaging targets.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if not np.isfinite(y).all():
        raise ValueError("targets must be finite")
    if X.shape[0] < 2 and hyper is None:
        raise ValueError("need at least 2 training points to fit hyperparameters")
    X, y = _merge_duplicates(X, y)
    if hyper is not None:
        return GPModel(X, y, hyper)

    bnds = dict(DEFAULT_BOUNDS)
    if bounds:
        bnds.update(bounds)
    log_bounds = np.log(
        [bnds["length_scale"], bnds["signal_variance"], bnds["noise_variance"]]
    )

    y_centered = y - y.mean()
    sqdist = cdist(X, X, "sqeuclidean")
    starts = log_bounds[:, 0] + sobol_points(3, N_STARTS, skip=1) * (
        log_bounds[:, 1] - log_bounds[:, 0]
    )

    best_theta, best_lml = None, -np.inf
    for theta0 in starts:
        res = minimize(
            lambda t: -_log_likelihood(t, sqdist, y_centered),
            theta0,
            method="Nelder-Mead",
            bounds=log_bounds,
            options={"xatol": OPT_TOL, "fatol": OPT_TOL, "maxfev": MAX_EVALS_PER_START},
        )
        if -res.fun > best_lml:
            best_lml, best_theta = -res.fun, res.x
    if best_theta is None or not np.isfinite(best_lml):
        raise SingularKernel("likelihood not finite at any hyperparameter start")

    l, sig2, noise = np.exp(best_theta)
    return GPModel(X, y, GPHyperparams(l, sig2, max(noise, NOISE_FLOOR)))


def gp_predict(model: GPModel, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and variance at query points (variance >= 0)."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    if Xs.shape[1] != model.dim:
        raise DimensionMismatch(
            f"query dimension {Xs.shape[1]} != training dimension {model.dim}"
        )
    ks = _kernel_matrix(cdist(Xs, model.X, "sqeuclidean"), model.hyper)
    mean = ks @ model.alpha + model.offset
    v = solve_triangular(model.chol, ks.T, lower=True)
    var = (
        model.hyper.signal_variance
        - np.einsum("ij,ij->j", v, v)
        + model.hyper.noise_variance
    )
    return mean, np.maximum(var, 0.0)
