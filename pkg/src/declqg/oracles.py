"""Independent optimality checks for synthesized controllers.

* :func:`evaluate_policy_cost` -- exact expected cost of any dual-estimator
  controller by second-moment propagation of the closed loop.
* :func:`disturbance_feedback_optimum` -- the optimal cost recomputed from
  scratch as a convex quadratic program over strictly causal, structure
  respecting linear maps of the purified outputs.  Shares no code with the
  Riccati machinery.
* :func:`fixed_point_gains` -- alternating best responses on the coupled
  recursions.
* :func:`pbp_perturbation_check` -- unilateral gain perturbations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .centralized import CentralizedSolution, solve_centralized
from .controller import GainSchedule
from .errors import IllConditioned
from .problem import ensure_valid
from .synthesis import (
    TwoPlayerGains,
    _with_cost,
    decoupled_schedules,
    khat_formula,
    lhat_formula,
    p_hat_step,
    propagate_hat,
    sigma_hat_step,
)

COND_LIMIT = 1e12


# --- exact policy evaluation ---------------------------------------------------

def closed_loop_matrices(spec, schedule: GainSchedule, t: int):
    """Closed-loop map of ``xi = (x, zhat, z)`` at stage ``t``.

    Returns ``(Acl, Dcl, Kcl)`` with ``xi+ = Acl xi + Dcl (w, v)`` and
    ``u = Kcl xi``.
    """
    g = spec.plant
    n, p = spec.dims.n, spec.dims.p
    A, B, C = g.A[t], g.B[t], g.C[t]
    K, L, Kh, Lh = schedule.K[t], schedule.L[t], schedule.KHat[t], schedule.LHat[t]
    Z = np.zeros((n, n))
    Kcl = np.hstack([np.zeros_like(K), K - Kh, Kh])
    Acl = np.block([
        [A, B @ (K - Kh), B @ Kh],
        [-Lh @ C, A + B @ K + Lh @ C, Z],
        [-L @ C, B @ (K - Kh), A + B @ Kh + L @ C],
    ])
    Dcl = np.block([
        [np.eye(n), np.zeros((n, p))],
        [Z, -Lh],
        [Z, -L],
    ])
    return Acl, Dcl, Kcl


def evaluate_policy_cost(problem, schedule: GainSchedule, check_structure: bool = True) -> float:
    """Exact expected cost of the dual-estimator controller with ``schedule``.

    No sampling: the mean and covariance of ``(x, zhat, z)`` are propagated
    exactly.  Pass ``check_structure=False`` to evaluate schedules that are not
    two-player admissible, e.g. the centralized law.
    """
    spec = ensure_valid(problem)
    if check_structure:
        schedule.check_structure(spec.dims)
    g = spec.plant
    n = spec.dims.n
    mean = np.tile(spec.mu_init, 3)
    cov = np.zeros((3 * n, 3 * n))
    cov[:n, :n] = spec.Sigma_init
    J = 0.0
    for t in range(spec.horizon):
        Acl, Dcl, Kcl = closed_loop_matrices(spec, schedule, t)
        Psi = np.vstack([np.hstack([np.eye(n), np.zeros((n, 2 * n))]), Kcl])
        weight = Psi.T @ np.block([[g.Q[t], g.S[t]], [g.S[t].T, g.R[t]]]) @ Psi
        J += np.sum(weight * (cov + np.outer(mean, mean)))
        N = np.block([[g.W[t], g.U[t].T], [g.U[t], g.V[t]]])
        mean = Acl @ mean
        cov = Acl @ cov @ Acl.T + Dcl @ N @ Dcl.T
        cov = 0.5 * (cov + cov.T)
    J += np.sum(spec.P_final * (cov[:n, :n] + np.outer(mean[:n], mean[:n])))
    return float(J)


# --- disturbance-feedback convex program ---------------------------------------

@dataclass(frozen=True, eq=False)
class DisturbanceFeedbackProgram:
    """Expected cost as a quadratic in the purified-output feedback ``u = ubar + F ytil``.

    ``F`` is ``(T m) x (T p)``; block ``(t, s)`` maps ``ytil_s`` to ``u_t`` and
    may be nonzero only for ``s < t``, with the ``u1`` rows further restricted to
    ``ytil1`` columns (``mask``).  For zero-mean noise the cost splits as
    ``const + tr(H F Y F') + 2 <F, D' X>`` plus a deterministic part in ``ubar``.
    """

    Y: np.ndarray       # cov(ytil)  (Tp, Tp)
    X: np.ndarray       # cov(delta, ytil)  (n(T+1), Tp)
    Delta: np.ndarray   # cov(delta)  (n(T+1), n(T+1))
    H: np.ndarray       # input Hessian  (Tm, Tm)
    D: np.ndarray       # Qx G + S  (n(T+1), Tm)
    G: np.ndarray       # input-to-state map  (n(T+1), Tm)
    Qx: np.ndarray
    Sx: np.ndarray
    Rx: np.ndarray
    free_mean: np.ndarray  # state mean under u = 0
    mask: np.ndarray    # admissible entries of F
    normal_matrix: np.ndarray
    rhs: np.ndarray

    def cost(self, F: np.ndarray, ubar: np.ndarray | None = None) -> float:
        """Expected cost of the admissible policy ``u = ubar + F ytil``."""
        if np.any(F[~self.mask] != 0):
            raise ValueError("decision matrix violates the causality/structure mask")
        stoch = (np.sum(self.H * (F @ self.Y @ F.T)) + 2.0 * np.sum(F * (self.D.T @ self.X))
                 + np.sum(self.Qx * self.Delta))
        if ubar is None:
            ubar = np.zeros(self.H.shape[0])
        xbar = self.free_mean + self.G @ ubar
        det = xbar @ self.Qx @ xbar + 2.0 * xbar @ self.Sx @ ubar + ubar @ self.Rx @ ubar
        return float(stoch + det)


def information_mask(dims, T: int) -> np.ndarray:
    m, p = dims.m, dims.p
    mask = np.zeros((T * m, T * p), dtype=bool)
    for t in range(T):
        for s in range(t):
            blk = np.zeros((m, p), dtype=bool)
            blk[dims.u1, dims.y1] = True
            blk[dims.u2, :] = True
            mask[t * m:(t + 1) * m, s * p:(s + 1) * p] = blk
    return mask


def build_disturbance_feedback_program(problem) -> DisturbanceFeedbackProgram:
    spec = ensure_valid(problem)
    g = spec.plant
    d = spec.dims
    T, n, m, p = spec.horizon, d.n, d.m, d.p
    nz = n + T * (n + p)

    # primitive noise zeta = (x0 - mu, w_0, v_0, ..., w_{T-1}, v_{T-1})
    cov_zeta = np.zeros((nz, nz))
    cov_zeta[:n, :n] = spec.Sigma_init
    # delta_t = x_t - xi_t, the state of the autonomous noisy system
    delta = np.zeros((T + 1, n, nz))
    delta[0][:, :n] = np.eye(n)
    ytil = np.zeros((T, p, nz))
    # G maps stacked inputs to stacked states
    G = np.zeros((T + 1, n, T * m))
    free = np.zeros((T + 1, n))
    free[0] = spec.mu_init
    for t in range(T):
        w0 = n + t * (n + p)
        v0 = w0 + n
        cov_zeta[w0:v0 + p, w0:v0 + p] = np.block([[g.W[t], g.U[t].T], [g.U[t], g.V[t]]])
        ytil[t] = g.C[t] @ delta[t]
        ytil[t][:, v0:v0 + p] += np.eye(p)
        delta[t + 1] = g.A[t] @ delta[t]
        delta[t + 1][:, w0:w0 + n] += np.eye(n)
        G[t + 1] = g.A[t] @ G[t]
        G[t + 1][:, t * m:(t + 1) * m] += g.B[t]
        free[t + 1] = g.A[t] @ free[t]

    Dz = delta.reshape((T + 1) * n, nz)
    Yz = ytil.reshape(T * p, nz)
    Y = Yz @ cov_zeta @ Yz.T
    X = Dz @ cov_zeta @ Yz.T
    Delta = Dz @ cov_zeta @ Dz.T
    Gs = G.reshape((T + 1) * n, T * m)

    Qx = linalg.block_diag(*g.Q, spec.P_final)
    Sx = np.zeros(((T + 1) * n, T * m))
    for t in range(T):
        Sx[t * n:(t + 1) * n, t * m:(t + 1) * m] = g.S[t]
    Rx = linalg.block_diag(*g.R)
    H = Gs.T @ Qx @ Gs + Gs.T @ Sx + Sx.T @ Gs + Rx
    H = 0.5 * (H + H.T)
    D = Qx @ Gs + Sx

    mask = information_mask(d, T)
    rows, cols = np.nonzero(mask)
    # normal equations (Y kron H) vec F = -vec(D' X) restricted to free entries
    normal = H[np.ix_(rows, rows)] * Y[np.ix_(cols, cols)]
    rhs = -(D.T @ X)[rows, cols]
    return DisturbanceFeedbackProgram(
        Y=Y, X=X, Delta=Delta, H=H, D=D, G=Gs, Qx=Qx, Sx=Sx, Rx=Rx, free_mean=free.reshape(-1),
        mask=mask, normal_matrix=normal, rhs=rhs,
    )


@dataclass(frozen=True, eq=False)
class DisturbanceFeedbackResult:
    cost: float
    F: np.ndarray       # optimal purified-output feedback, (Tm, Tp)
    ubar: np.ndarray    # optimal open-loop offsets, (Tm,)
    condition: float
    program: DisturbanceFeedbackProgram

    def blocks(self, m: int, p: int) -> np.ndarray:
        """``F`` as an array of ``(m, p)`` blocks indexed ``[t, s]``."""
        T = self.F.shape[0] // m
        return self.F.reshape(T, m, T, p).transpose(0, 2, 1, 3)


def disturbance_feedback_optimum(problem) -> DisturbanceFeedbackResult:
    """Minimum expected cost over all admissible linear policies.

    Because the information structure is partially nested, linear policies
    are optimal, so this is the optimal cost of the two-player problem.
    """
    prog = build_disturbance_feedback_program(problem)
    A, b = prog.normal_matrix, prog.rhs
    F = np.zeros(prog.mask.shape)
    cond = 1.0
    if A.size:
        cond = float(np.linalg.cond(A))
        if cond > COND_LIMIT:
            warnings.warn(f"disturbance-feedback normal equations have condition "
                          f"number {cond:.3e}", IllConditioned, stacklevel=2)
        k = linalg.solve(A, b, assume_a="pos")
        F[prog.mask] = k
    ubar = -linalg.solve(prog.H, prog.D.T @ prog.free_mean, assume_a="pos")
    return DisturbanceFeedbackResult(cost=prog.cost(F, ubar), F=F, ubar=ubar,
                                     condition=cond, program=prog)


# --- alternating best responses ----------------------------------------------

@dataclass(frozen=True, eq=False)
class FixedPointResult:
    gains: TwoPlayerGains
    iterations: int
    change: float
    converged: bool = True


@dataclass(frozen=True)
class NonConvergence:
    iterations: int
    change: float
    converged: bool = False


def fixed_point_gains(problem, tol: float = 1e-10, max_iter: int = 500,
                      centralized: CentralizedSolution | None = None):
    """Alternate forward (estimation) and backward (control) sweeps of the
    coupled recursions, each holding the other player's gains fixed.

    Starts from the centralized ``K`` with player-1 rows zeroed.  Stops when an
    iteration changes every gain by less than ``tol`` (max norm).  Returns a
    :class:`FixedPointResult` or a :class:`NonConvergence` marker.
    """
    spec = ensure_valid(problem)
    if tol <= 0:
        raise ValueError("tol must be positive")
    cen = solve_centralized(spec) if centralized is None else centralized
    g = spec.plant
    d = spec.dims
    T = spec.horizon
    Sig, L, P, K = cen.Sigma, cen.L, cen.P, cen.K

    KHat = np.array(K)
    KHat[:, d.u1, :] = 0.0
    LHat = None
    SH = np.empty_like(Sig)
    PH = np.empty_like(P)
    change = np.inf
    for it in range(1, max_iter + 1):
        LHat_new = np.empty_like(L)
        SH[0] = g.Sigma_init
        for t in range(T):
            LHat_new[t] = lhat_formula(spec, t, Sig, SH[t], KHat[t])
            AHat = g.A[t] + g.B[t] @ KHat[t] + LHat_new[t] @ g.C[t]
            SH[t + 1] = sigma_hat_step(g, t, Sig, L, SH[t], AHat, LHat_new[t])
        KHat_new = np.empty_like(K)
        PH[T] = g.P_final
        for t in reversed(range(T)):
            KHat_new[t] = khat_formula(spec, t, P, PH[t + 1], LHat_new[t])
            AHat = g.A[t] + g.B[t] @ KHat_new[t] + LHat_new[t] @ g.C[t]
            PH[t] = p_hat_step(g, t, P, K, PH[t + 1], AHat, KHat_new[t])
        # LHat is a function of KHat, so a repeated KHat means a fixed point
        change = float(np.max(np.abs(KHat_new - KHat)))
        if LHat is not None:
            change = max(change, float(np.max(np.abs(LHat_new - LHat))))
        KHat, LHat = KHat_new, LHat_new
        if change < tol:
            return FixedPointResult(gains=_gains_from_schedules(spec, cen, LHat, KHat),
                                    iterations=it, change=change)
    return NonConvergence(iterations=max_iter, change=change)


def _gains_from_schedules(spec, cen, LHat, KHat) -> TwoPlayerGains:
    d = spec.dims
    dec = decoupled_schedules(spec)
    AHat, SigmaHat, PHat = propagate_hat(spec.plant, cen, LHat, KHat)
    gains = TwoPlayerGains(
        decoupled=dec,
        SigmaHat21=SigmaHat[:, d.x2, d.x1], PHat21=PHat[:, d.x2, d.x1],
        LHat21=LHat[:, d.x2, d.y1], KHat21=KHat[:, d.u2, d.x1],
        LHat=LHat, KHat=KHat, SigmaHat=SigmaHat, PHat=PHat, AHat=AHat, JHat0=np.nan,
    )
    return _with_cost(spec, cen, gains)


# --- person-by-person perturbations -------------------------------------------

def _player_parameters(dims, player: int):
    """(schedule field, row slice, column slice) triples owned by ``player``.

    Player 1 owns its input gain on ``zhat`` and the ``y1`` columns of its
    estimator gain; player 2 owns its input gains and the full-information
    filter gain.
    """
    full = slice(None)
    if player == 1:
        return [("K", dims.u1, full), ("LHat", full, dims.y1)]
    return [("K", dims.u2, full), ("KHat", dims.u2, full), ("L", full, full)]


def pbp_perturbation_check(problem, schedule: GainSchedule, eps: float, trials: int,
                           seed: int = 0, baseline: float | None = None) -> float:
    """Largest cost decrease found by random rank-one unilateral perturbations.

    For each player, ``trials`` perturbations ``eps * a b'`` (unit ``a``, ``b``)
    are applied to one randomly chosen stage of one of that player's gain
    matrices, within the admissible zero pattern.  Returns
    ``max(baseline - perturbed cost)``; ``baseline`` defaults to the exact
    cost of ``schedule``.  Non-positive (up to roundoff) at an optimum.
    """
    spec = ensure_valid(problem)
    d = spec.dims
    if baseline is None:
        baseline = evaluate_policy_cost(spec, schedule)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for player in (1, 2):
        params = _player_parameters(d, player)
        for _ in range(trials):
            name, rows, cols = params[rng.integers(len(params))]
            t = int(rng.integers(spec.horizon))
            arrays = {k: np.array(getattr(schedule, k)) for k in ("K", "L", "KHat", "LHat")}
            blk = arrays[name][t][rows, cols]
            a = rng.standard_normal(blk.shape[0])
            b = rng.standard_normal(blk.shape[1])
            arrays[name][t][rows, cols] = blk + eps * np.outer(a / np.linalg.norm(a),
                                                               b / np.linalg.norm(b))
            J = evaluate_policy_cost(spec, GainSchedule(**arrays))
            worst = max(worst, baseline - J)
    return float(worst) if trials > 0 else 0.0
