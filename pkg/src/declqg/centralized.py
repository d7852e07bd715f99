"""Centralized finite-horizon LQG: Kalman filter and LQR Riccati recursions
and the closed-form optimal cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import SingularHessian, SingularInnovation
from .problem import PlantData, ensure_valid


def sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def spd_solve_right(X: np.ndarray, H: np.ndarray, err, what: str) -> np.ndarray:
    """Return ``X @ inv(H)`` for symmetric positive definite ``H`` via Cholesky."""
    try:
        fac = linalg.cho_factor(H)
    except linalg.LinAlgError:
        raise err(f"{what} is not numerically positive definite") from None
    return linalg.cho_solve(fac, X.T).T


def spd_solve_left(H: np.ndarray, X: np.ndarray, err, what: str) -> np.ndarray:
    """Return ``inv(H) @ X`` for symmetric positive definite ``H``."""
    try:
        fac = linalg.cho_factor(H)
    except linalg.LinAlgError:
        raise err(f"{what} is not numerically positive definite") from None
    return linalg.cho_solve(fac, X)


def kalman_recursion(A, C, W, U, V, Sigma_init):
    """Forward error-covariance recursion of the one-step predictor.

    Gains use the sign convention ``z+ = A z + B u - L (y - C z)``.  Returns the
    covariances ``Sigma[0..T]`` and gains ``L[0..T-1]`` as stacked arrays.
    """
    T = len(A)
    n, p = A[0].shape[0], C[0].shape[0]
    Sigma = np.empty((T + 1, n, n))
    L = np.empty((T, n, p))
    Sigma[0] = Sigma_init
    for t in range(T):
        S = Sigma[t]
        innov = C[t] @ S @ C[t].T + V[t]
        L[t] = -spd_solve_right(A[t] @ S @ C[t].T + U[t].T, innov,
                                SingularInnovation, f"innovation covariance at t={t}")
        Sigma[t + 1] = sym(A[t] @ S @ A[t].T + L[t] @ (C[t] @ S @ A[t].T + U[t]) + W[t])
    return Sigma, L


def lqr_recursion(A, B, Q, S, R, P_final):
    """Backward cost-to-go recursion; returns ``P[0..T]`` and ``K[0..T-1]``
    with ``u = K x``."""
    T = len(A)
    n, m = B[0].shape
    P = np.empty((T + 1, n, n))
    K = np.empty((T, m, n))
    P[T] = P_final
    for t in reversed(range(T)):
        Pn = P[t + 1]
        hess = B[t].T @ Pn @ B[t] + R[t]
        K[t] = -spd_solve_left(hess, B[t].T @ Pn @ A[t] + S[t].T,
                               SingularHessian, f"input Hessian at t={t}")
        P[t] = sym(A[t].T @ Pn @ A[t] + (A[t].T @ Pn @ B[t] + S[t]) @ K[t] + Q[t])
    return P, K


def _plant(problem) -> PlantData:
    return problem if isinstance(problem, PlantData) else ensure_valid(problem).plant


def filter_recursion(problem):
    g = _plant(problem)
    return kalman_recursion(g.A, g.C, g.W, g.U, g.V, g.Sigma_init)


def control_recursion(problem):
    g = _plant(problem)
    return lqr_recursion(g.A, g.B, g.Q, g.S, g.R, g.P_final)


@dataclass(frozen=True, eq=False)
class CentralizedSolution:
    Sigma: np.ndarray  # (T+1, n, n)
    L: np.ndarray      # (T, n, p)
    P: np.ndarray      # (T+1, n, n)
    K: np.ndarray      # (T, m, n)
    J0: float

    @property
    def horizon(self) -> int:
        return self.L.shape[0]


def input_hessians(g: PlantData, P: np.ndarray) -> np.ndarray:
    """``B' P+ B + R`` for every stage."""
    return np.einsum("tji,tjk,tkl->til", g.B, P[1:], g.B) + g.R


def centralized_cost(problem, solution: CentralizedSolution) -> float:
    g = _plant(problem)
    P, Sigma, K = solution.P, solution.Sigma, solution.K
    H = input_hessians(g, P)
    J = np.trace(P[0] @ g.Sigma_init) + g.mu_init @ P[0] @ g.mu_init
    for t in range(g.horizon):
        J += np.trace(P[t + 1] @ g.W[t]) + np.trace(Sigma[t] @ K[t].T @ H[t] @ K[t])
    return float(J)


def solve_centralized(problem) -> CentralizedSolution:
    g = _plant(problem)
    Sigma, L = kalman_recursion(g.A, g.C, g.W, g.U, g.V, g.Sigma_init)
    P, K = lqr_recursion(g.A, g.B, g.Q, g.S, g.R, g.P_final)
    partial = CentralizedSolution(Sigma=Sigma, L=L, P=P, K=K, J0=np.nan)
    return CentralizedSolution(Sigma=Sigma, L=L, P=P, K=K, J0=centralized_cost(g, partial))
