"""Exact recursive filtering for small linear-Gaussian systems.

Validation support only: the exact recursion and the analytic predictive
density give the test suite an independent reference for the particle
machinery. Deliberately restricted to state dimension <= 4 and observation
dimension <= 2 so the oracle stays small enough to trust; it has no
ambitions as a general Kalman filter library.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, SingularModelError

__all__ = [
    "LinearGaussianModel",
    "GaussianBelief",
    "kalman_predict",
    "kalman_update",
    "kalman_step",
    "grid_predictive_density",
]

_MAX_STATE_DIM = 4
_MAX_OBS_DIM = 2


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    if arr.ndim != 2:
        raise ContractViolationError(f"{name} must be a matrix")
    return arr


def _check_psd(mat: np.ndarray, name: str) -> None:
    if not np.allclose(mat, mat.T, atol=1e-10):
        raise ContractViolationError(f"{name} must be symmetric")
    eigvals = np.linalg.eigvalsh(mat)
    if eigvals.min() < -1e-10:
        raise ContractViolationError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class LinearGaussianModel:
    """x' = A x + w, w ~ N(0, Q);  y = H x + v, v ~ N(0, R)."""

    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    initial_mean: np.ndarray
    initial_cov: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        Q = _as_matrix(self.Q, "Q")
        H = _as_matrix(self.H, "H")
        R = _as_matrix(self.R, "R")
        m0 = np.atleast_1d(np.asarray(self.initial_mean, dtype=float))
        P0 = _as_matrix(self.initial_cov, "initial_cov")

        n = A.shape[0]
        m = H.shape[0]
        if n > _MAX_STATE_DIM or m > _MAX_OBS_DIM:
            raise ContractViolationError(
                f"oracle scope is N <= {_MAX_STATE_DIM}, M <= {_MAX_OBS_DIM}"
            )
        if A.shape != (n, n) or Q.shape != (n, n) or H.shape != (m, n):
            raise ContractViolationError("inconsistent A/Q/H dimensions")
        if R.shape != (m, m) or m0.shape != (n,) or P0.shape != (n, n):
            raise ContractViolationError("inconsistent R/initial dimensions")
        _check_psd(Q, "Q")
        _check_psd(R, "R")
        _check_psd(P0, "initial_cov")

        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "initial_mean", m0)
        object.__setattr__(self, "initial_cov", P0)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.H.shape[0]

    def initial_belief(self) -> "GaussianBelief":
        return GaussianBelief(mean=self.initial_mean, covariance=self.initial_cov)


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _as_matrix(self.covariance, "covariance")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ContractViolationError("covariance shape does not match mean")
        _check_psd(cov, "covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


def kalman_predict(belief: GaussianBelief, model: LinearGaussianModel) -> GaussianBelief:
    """One-step-ahead prior: mean A m, covariance A P A^T + Q."""
    mean = model.A @ belief.mean
    cov = model.A @ belief.covariance @ model.A.T + model.Q
    cov = 0.5 * (cov + cov.T)
    return GaussianBelief(mean=mean, covariance=cov)


def kalman_update(
    belief: GaussianBelief, model: LinearGaussianModel, reading: np.ndarray
) -> GaussianBelief:
    """Measurement correction of an already-predicted belief.

    Uses the Joseph-form covariance update, which preserves symmetry and
    positive semidefiniteness.
    """
    reading = np.atleast_1d(np.asarray(reading, dtype=float))
    if reading.shape != (model.obs_dim,):
        raise ContractViolationError(
            f"reading shape {reading.shape} does not match obs dim {model.obs_dim}"
        )
    H, R = model.H, model.R
    S = H @ belief.covariance @ H.T + R
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularModelError(f"innovation covariance is singular (cond={cond:.3g})")
    K = belief.covariance @ H.T @ np.linalg.inv(S)
    mean = belief.mean + K @ (reading - H @ belief.mean)
    I_KH = np.eye(model.state_dim) - K @ H
    cov = I_KH @ belief.covariance @ I_KH.T + K @ R @ K.T
    cov = 0.5 * (cov + cov.T)
    return GaussianBelief(mean=mean, covariance=cov)


def kalman_step(
    belief: GaussianBelief, model: LinearGaussianModel, reading: np.ndarray
) -> GaussianBelief:
    """Standard predict-then-correct recursion for one reading."""
    return kalman_update(kalman_predict(belief, model), model, reading)


def grid_predictive_density(
    belief: GaussianBelief, model: LinearGaussianModel, queries: np.ndarray
) -> np.ndarray:
    """Exact predictive measurement density at each query reading.

    `belief` must be the one-step-ahead prior (post-predict); the
    predictive law is then N(H mean, H cov H^T + R). Queries are given as
    an array of shape (n_queries, obs_dim) or (n_queries,) for scalar
    observations.
    """
    queries = np.asarray(queries, dtype=float)
    if queries.ndim == 1:
        queries = queries[:, None]
    if queries.shape[1] != model.obs_dim:
        raise ContractViolationError(
            f"queries have dim {queries.shape[1]}, model observes {model.obs_dim}"
        )
    mean = model.H @ belief.mean
    cov = model.H @ belief.covariance @ model.H.T + model.R
    m = model.obs_dim

    diff = queries - mean
    cov_inv = np.linalg.inv(cov)
    mahal = np.einsum("qi,ij,qj->q", diff, cov_inv, diff)
    norm = 1.0 / np.sqrt((2.0 * np.pi) ** m * np.linalg.det(cov))
    return norm * np.exp(-0.5 * mahal)
