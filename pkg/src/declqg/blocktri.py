"""Block-tridiagonal linear systems and their O(T) block LU solve."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import PivotFailure

PIVOT_RTOL = 1e-13


@dataclass(frozen=True, eq=False)
class BoundarySystem:
    """``M eta = c`` with identity diagonal blocks.

    ``G[t-1]`` multiplies ``eta[t-1]`` in block row ``t`` and ``H[t-1]``
    multiplies ``eta[t]`` in block row ``t-1`` (for ``t = 1..T-1``), i.e. the
    sub- and super-diagonals.  ``stage_maps`` holds, per stage, the affine maps
    used to rebuild the eliminated gains once ``eta`` is known.
    """

    q: int
    G: np.ndarray  # (T-1, 2q, 2q)
    H: np.ndarray  # (T-1, 2q, 2q)
    c: np.ndarray  # (T, 2q)
    stage_maps: tuple = ()

    @property
    def horizon(self) -> int:
        return self.c.shape[0]

    @property
    def block(self) -> int:
        return 2 * self.q

    def dense(self) -> np.ndarray:
        T, b = self.horizon, self.block
        M = np.eye(T * b)
        for t in range(1, T):
            M[t * b:(t + 1) * b, (t - 1) * b:t * b] = self.G[t - 1]
            M[(t - 1) * b:t * b, t * b:(t + 1) * b] = self.H[t - 1]
        return M

    def apply(self, eta: np.ndarray) -> np.ndarray:
        """``M @ eta`` without forming ``M``; ``eta`` has shape (T, 2q)."""
        out = np.array(eta, dtype=float)
        out[1:] += np.einsum("tij,tj->ti", self.G, eta[:-1])
        out[:-1] += np.einsum("tij,tj->ti", self.H, eta[1:])
        return out

    def residual(self, eta: np.ndarray) -> float:
        """``||M eta - c|| / (1 + ||c||)``."""
        r = self.apply(eta) - self.c
        return float(np.linalg.norm(r) / (1.0 + np.linalg.norm(self.c)))


def _factor(D: np.ndarray, t: int):
    with warnings.catch_warnings():
        # an exactly singular block is reported below as PivotFailure
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(D, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= PIVOT_RTOL * max(1.0, np.abs(D).max()):
        raise PivotFailure(f"pivot block {t} is numerically singular "
                           f"(smallest U diagonal {d.min():.3e})", t)
    return lu, piv


def solve_block_tridiagonal(system: BoundarySystem, diag=None) -> np.ndarray:
    """Block Thomas algorithm: forward elimination, then back substitution.

    ``diag`` overrides the identity diagonal blocks (shape (T, b, b)).  Work is
    O(T b^3) and storage O(T b^2).  Returns ``eta`` with shape (T, b).
    """
    T, b = system.horizon, system.block
    G, H, c = system.G, system.H, system.c
    D = np.broadcast_to(np.eye(b), (T, b, b)) if diag is None else diag

    facs = [None] * T
    rhs = np.empty((T, b))
    # U_t = D'_t^{-1} H_t, stored for back substitution
    upper = np.empty((max(T - 1, 0), b, b))
    Dp = np.array(D[0], dtype=float)
    rhs[0] = c[0]
    for t in range(T):
        if t > 0:
            Dp = D[t] - G[t - 1] @ upper[t - 1]
            rhs[t] = c[t] - G[t - 1] @ rhs[t - 1]
        facs[t] = _factor(Dp, t)
        rhs[t] = linalg.lu_solve(facs[t], rhs[t])
        if t < T - 1:
            upper[t] = linalg.lu_solve(facs[t], H[t])

    eta = np.empty((T, b))
    eta[T - 1] = rhs[T - 1]
    for t in range(T - 2, -1, -1):
        eta[t] = rhs[t] - upper[t] @ eta[t + 1]
    return eta
