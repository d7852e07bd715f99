"""Optimal two-player gains.

The player-1 estimation gains ``M`` and player-2 control gains ``J`` follow
from ordinary Riccati recursions on the diagonal blocks.  The remaining
21-blocks couple a forward (estimation) and a backward (control) recursion;
after eliminating the mutually dependent gains stage by stage they form a
linear two-point boundary-value problem, assembled here as a block
tridiagonal system and solved in O(T).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .blocktri import BoundarySystem, solve_block_tridiagonal
from .centralized import (
    CentralizedSolution,
    input_hessians,
    kalman_recursion,
    lqr_recursion,
    solve_centralized,
    spd_solve_left,
    spd_solve_right,
    sym,
)
from .errors import (
    ConsistencyError,
    EliminationSingular,
    SingularHessian,
    SingularInnovation,
)
from .problem import ensure_valid

CONSISTENCY_RTOL = 1e-8
ELIMINATION_RCOND = 1e-13


def vec(X: np.ndarray) -> np.ndarray:
    return X.reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return v.reshape((rows, cols), order="F")


@dataclass(frozen=True, eq=False)
class DecoupledSchedules:
    Gamma: np.ndarray  # (T+1, n1, n1)
    M: np.ndarray      # (T, n1, p1)
    F: np.ndarray      # (T+1, n2, n2)
    J: np.ndarray      # (T, m2, n2)
    A_M: np.ndarray    # (T, n1, n1)
    A_J: np.ndarray    # (T, n2, n2)


@dataclass(frozen=True, eq=False)
class TwoPlayerGains:
    decoupled: DecoupledSchedules
    SigmaHat21: np.ndarray  # (T+1, n2, n1)
    PHat21: np.ndarray      # (T+1, n2, n1)
    LHat21: np.ndarray      # (T, n2, p1)
    KHat21: np.ndarray      # (T, m2, n1)
    LHat: np.ndarray        # (T, n, p)
    KHat: np.ndarray        # (T, m, n)
    SigmaHat: np.ndarray    # (T+1, n, n)
    PHat: np.ndarray        # (T+1, n, n)
    AHat: np.ndarray        # (T, n, n)
    JHat0: float

    @property
    def horizon(self) -> int:
        return self.LHat.shape[0]


def player1_filter_recursion(problem):
    """Kalman recursion of subsystem 1 alone: ``(Gamma, M, A_M)``."""
    spec = ensure_valid(problem)
    g = spec.subsystem(1)
    Gamma, M = kalman_recursion(g.A, g.C, g.W, g.U, g.V, g.Sigma_init)
    A_M = g.A + M @ g.C
    return Gamma, M, A_M


def player2_control_recursion(problem):
    """Riccati recursion of subsystem 2 alone: ``(F, J, A_J)``."""
    spec = ensure_valid(problem)
    g = spec.subsystem(2)
    F, J = lqr_recursion(g.A, g.B, g.Q, g.S, g.R, g.P_final)
    A_J = g.A + g.B @ J
    return F, J, A_J


def decoupled_schedules(problem) -> DecoupledSchedules:
    Gamma, M, A_M = player1_filter_recursion(problem)
    F, J, A_J = player2_control_recursion(problem)
    return DecoupledSchedules(Gamma=Gamma, M=M, F=F, J=J, A_M=A_M, A_J=A_J)


@dataclass(frozen=True)
class _StageMap:
    """``vec L21 = l0 + lx x + ly y`` and ``vec K21 = k0 + kx x + ky y`` with
    ``x = vec SigmaHat21[t]`` and ``y = vec PHat21[t+1]``."""

    l0: np.ndarray
    lx: np.ndarray
    ly: np.ndarray
    k0: np.ndarray
    kx: np.ndarray
    ky: np.ndarray


def assemble_boundary_system(problem, centralized: CentralizedSolution | None = None,
                             decoupled: DecoupledSchedules | None = None) -> BoundarySystem:
    """Assemble the block tridiagonal system for
    ``eta[t] = (vec PHat21[t], vec SigmaHat21[t+1])``."""
    spec = ensure_valid(problem)
    if centralized is None:
        centralized = solve_centralized(spec)
    if decoupled is None:
        decoupled = decoupled_schedules(spec)
    d = spec.dims
    g = spec.plant
    x1, x2, u1, u2, y1 = d.x1, d.x2, d.u1, d.u2, d.y1
    T = spec.horizon
    n1, n2, m2, p1 = d.n1, d.n2, d.m2, d.p1
    q = n2 * n1
    nl, nk = n2 * p1, m2 * n1

    Gam, M, A_M = decoupled.Gamma, decoupled.M, decoupled.A_M
    F, J, A_J = decoupled.F, decoupled.J, decoupled.A_J
    Sig, P = centralized.Sigma, centralized.P

    # per stage: P21[t] = pc + PX x + PY y ;  S21[t+1] = sc + SX x + SY y
    pc = np.empty((T, q))
    sc = np.empty((T, q))
    PX, PY, SX, SY = (np.empty((T, q, q)) for _ in range(4))
    maps = []
    for t in range(T):
        A21 = g.A[t][x2, x1]
        B22 = g.B[t][x2, u2]
        C11 = g.C[t][y1, x1]
        U12 = g.U[t][y1, x2]
        W21 = g.W[t][x2, x1]
        V11 = g.V[t][y1, y1]
        Q21 = g.Q[t][x2, x1]
        S12 = g.S[t][x1, u2]
        R22 = g.R[t][u2, u2]
        Fn = F[t + 1]
        D = Gam[t] - Sig[t][x1, x1]
        E0 = A21 @ Gam[t] - B22 @ J[t] @ Sig[t][x2, x1]
        Gd = Fn - P[t + 1][x2, x2]
        Z0 = Fn @ A21 - P[t + 1][x2, x1] @ M[t] @ C11

        innov = C11 @ Gam[t] @ C11.T + V11
        NiC = spd_solve_left(innov, C11, SingularInnovation,
                             f"player-1 innovation covariance at t={t}")  # innov^-1 C11
        hess = B22.T @ Fn @ B22 + R22
        HiB = spd_solve_left(hess, B22.T, SingularHessian,
                             f"player-2 input Hessian at t={t}")          # hess^-1 B22'

        # L21 = -(A_J X C11' + B22 K D C11' + E0 C11' + U12') innov^-1
        Lx = -np.kron(NiC, A_J[t])
        Lk = -np.kron((D @ NiC.T).T, B22)
        L0 = -vec(spd_solve_right(E0 @ C11.T + U12.T, innov, SingularInnovation,
                                  f"player-1 innovation covariance at t={t}"))
        # K21 = -hess^-1 (B22' Y A_M + B22' Gd L C11 + B22' Z0 + S12')
        Ky = -np.kron(A_M[t].T, HiB)
        Kl = -np.kron(C11.T, HiB @ Gd)
        K0 = -vec(HiB @ Z0 + spd_solve_left(hess, S12.T, SingularHessian,
                                            f"player-2 input Hessian at t={t}"))

        # eliminate the mutual dependence: [I -Lk; -Kl I] [L; K] = rhs
        Zm = np.block([[np.eye(nl), -Lk], [-Kl, np.eye(nk)]])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu, piv = linalg.lu_factor(Zm)
        rc = np.abs(np.diag(lu))
        if rc.min() <= ELIMINATION_RCOND * max(1.0, np.abs(Zm).max()):
            raise EliminationSingular(
                f"gain elimination matrix is numerically singular at t={t}", t)
        rhs = np.zeros((nl + nk, 1 + 2 * q))
        rhs[:nl, 0] = L0
        rhs[nl:, 0] = K0
        rhs[:nl, 1:1 + q] = Lx
        rhs[nl:, 1 + q:] = Ky
        sol = linalg.lu_solve((lu, piv), rhs)
        m_t = _StageMap(l0=sol[:nl, 0], lx=sol[:nl, 1:1 + q], ly=sol[:nl, 1 + q:],
                        k0=sol[nl:, 0], kx=sol[nl:, 1:1 + q], ky=sol[nl:, 1 + q:])
        maps.append(m_t)

        # SigmaHat21+ = A_J X A_M' + B22 K D A_M' + E0 A_M' + U12' M' + W21
        Sx = np.kron(A_M[t], A_J[t])
        Sk = np.kron(A_M[t] @ D.T, B22)
        s0 = vec(E0 @ A_M[t].T + U12.T @ M[t].T + W21)
        sc[t] = s0 + Sk @ m_t.k0
        SX[t] = Sx + Sk @ m_t.kx
        SY[t] = Sk @ m_t.ky
        # PHat21 = A_J' Y A_M + A_J' Gd L C11 + A_J' Z0 + J' S12' + Q21
        Py = np.kron(A_M[t].T, A_J[t].T)
        Pl = np.kron(C11.T, A_J[t].T @ Gd)
        p0 = vec(A_J[t].T @ Z0 + J[t].T @ S12.T + Q21)
        pc[t] = p0 + Pl @ m_t.l0
        PX[t] = Pl @ m_t.lx
        PY[t] = Py + Pl @ m_t.ly

    c = np.concatenate([pc, sc], axis=1)
    # fold the boundary values into the first and last right-hand sides
    s_init = vec(spec.Sigma_init[x2, x1])
    p_final = vec(spec.P_final[x2, x1])
    c[0] += np.concatenate([PX[0] @ s_init, SX[0] @ s_init])
    c[T - 1] += np.concatenate([PY[T - 1] @ p_final, SY[T - 1] @ p_final])

    G = np.zeros((T - 1, 2 * q, 2 * q))
    H = np.zeros((T - 1, 2 * q, 2 * q))
    for t in range(1, T):
        # row t depends on SigmaHat21[t], the second half of eta[t-1]
        G[t - 1][:q, q:] = -PX[t]
        G[t - 1][q:, q:] = -SX[t]
        # row t-1 depends on PHat21[t], the first half of eta[t]
        H[t - 1][:q, :q] = -PY[t - 1]
        H[t - 1][q:, :q] = -SY[t - 1]
    return BoundarySystem(q=q, G=G, H=H, c=c, stage_maps=tuple(maps))


def _split_eta(spec, eta):
    d = spec.dims
    T = spec.horizon
    n1, n2, q = d.n1, d.n2, d.n1 * d.n2
    S21 = np.empty((T + 1, n2, n1))
    P21 = np.empty((T + 1, n2, n1))
    S21[0] = spec.Sigma_init[d.x2, d.x1]
    P21[T] = spec.P_final[d.x2, d.x1]
    for t in range(T):
        P21[t] = unvec(eta[t, :q], n2, n1)
        S21[t + 1] = unvec(eta[t, q:], n2, n1)
    return S21, P21


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b)))) if a.size else 0.0


def recover_gains(problem, centralized: CentralizedSolution, decoupled: DecoupledSchedules,
                  eta: np.ndarray, system: BoundarySystem) -> TwoPlayerGains:
    """Rebuild every gain from the boundary solution and propagate the full
    covariance and cost-to-go recursions of the two-player realization."""
    spec = ensure_valid(problem)
    d = spec.dims
    g = spec.plant
    T, n, m, p = spec.horizon, d.n, d.m, d.p
    n1, n2, m2, p1 = d.n1, d.n2, d.m2, d.p1
    S21, P21 = _split_eta(spec, eta)

    L21 = np.empty((T, n2, p1))
    K21 = np.empty((T, m2, n1))
    LHat = np.zeros((T, n, p))
    KHat = np.zeros((T, m, n))
    for t, mp in enumerate(system.stage_maps):
        x, y = vec(S21[t]), vec(P21[t + 1])
        L21[t] = unvec(mp.l0 + mp.lx @ x + mp.ly @ y, n2, p1)
        K21[t] = unvec(mp.k0 + mp.kx @ x + mp.ky @ y, m2, n1)
        LHat[t][d.x1, d.y1] = decoupled.M[t]
        LHat[t][d.x2, d.y1] = L21[t]
        KHat[t][d.u2, d.x1] = K21[t]
        KHat[t][d.u2, d.x2] = decoupled.J[t]

    AHat, SigmaHat, PHat = propagate_hat(g, centralized, LHat, KHat)

    checks = [
        ("SigmaHat11 vs Gamma", _rel(SigmaHat[:, d.x1, d.x1], decoupled.Gamma)),
        ("SigmaHat21 vs boundary solution", _rel(SigmaHat[:, d.x2, d.x1], S21)),
        ("PHat22 vs F", _rel(PHat[:, d.x2, d.x2], decoupled.F)),
        ("PHat21 vs boundary solution", _rel(PHat[:, d.x2, d.x1], P21)),
    ]
    bad = [(k, v) for k, v in checks if not v <= CONSISTENCY_RTOL]
    if bad:
        msg = "; ".join(f"{k}: {v:.3e}" for k, v in bad)
        raise ConsistencyError(f"propagated recursions disagree with block solution ({msg})")

    partial = TwoPlayerGains(
        decoupled=decoupled, SigmaHat21=S21, PHat21=P21, LHat21=L21, KHat21=K21,
        LHat=LHat, KHat=KHat, SigmaHat=SigmaHat, PHat=PHat, AHat=AHat, JHat0=np.nan,
    )
    return _with_cost(spec, centralized, partial)


def _with_cost(spec, centralized, gains: TwoPlayerGains) -> TwoPlayerGains:
    J = two_player_cost(spec, centralized, gains)
    return TwoPlayerGains(**{**gains.__dict__, "JHat0": J})


def propagate_hat(g, centralized: CentralizedSolution, LHat, KHat):
    """Forward ``SigmaHat`` and backward ``PHat`` for fixed gains."""
    T = len(LHat)
    Sig, L, P, K = centralized.Sigma, centralized.L, centralized.P, centralized.K
    AHat = g.A + g.B @ KHat + LHat @ g.C
    SigmaHat = np.empty_like(Sig)
    PHat = np.empty_like(P)
    SigmaHat[0] = g.Sigma_init
    for t in range(T):
        SigmaHat[t + 1] = sigma_hat_step(g, t, Sig, L, SigmaHat[t], AHat[t], LHat[t])
    PHat[T] = g.P_final
    for t in reversed(range(T)):
        PHat[t] = p_hat_step(g, t, P, K, PHat[t + 1], AHat[t], KHat[t])
    return AHat, SigmaHat, PHat


def sigma_hat_step(g, t, Sig, L, SigmaHat_t, AHat_t, LHat_t):
    C, V = g.C[t], g.V[t]
    dL = LHat_t - L[t]
    return sym(Sig[t + 1] + AHat_t @ (SigmaHat_t - Sig[t]) @ AHat_t.T
               + dL @ (C @ Sig[t] @ C.T + V) @ dL.T)


def p_hat_step(g, t, P, K, PHat_next, AHat_t, KHat_t):
    B, R = g.B[t], g.R[t]
    dK = KHat_t - K[t]
    return sym(P[t] + AHat_t.T @ (PHat_next - P[t + 1]) @ AHat_t
               + dK.T @ (B.T @ P[t + 1] @ B + R) @ dK)


def lhat_formula(spec, t, Sig, SigmaHat_t, KHat_t):
    """Player-1 estimator gain implied by ``SigmaHat_t`` and ``KHat_t``."""
    d = spec.dims
    g = spec.plant
    A, B, C, U = g.A[t], g.B[t], g.C[t], g.U[t]
    C11, V11 = C[d.y1, d.x1], g.V[t][d.y1, d.y1]
    X = A @ SigmaHat_t @ C.T + U.T + B @ KHat_t @ (SigmaHat_t - Sig[t]) @ C.T
    out = np.zeros((d.n, d.p))
    out[:, d.y1] = -spd_solve_right(X[:, d.y1], C11 @ SigmaHat_t[d.x1, d.x1] @ C11.T + V11,
                                    SingularInnovation,
                                    f"player-1 innovation covariance at t={t}")
    return out


def khat_formula(spec, t, P, PHat_next, LHat_t):
    """Player-2 correction gain implied by ``PHat_{t+1}`` and ``LHat_t``."""
    d = spec.dims
    g = spec.plant
    A, B, C, S = g.A[t], g.B[t], g.C[t], g.S[t]
    B22, R22 = B[d.x2, d.u2], g.R[t][d.u2, d.u2]
    X = B.T @ PHat_next @ A + S.T + B.T @ (PHat_next - P[t + 1]) @ LHat_t @ C
    out = np.zeros((d.m, d.n))
    out[d.u2, :] = -spd_solve_left(B22.T @ PHat_next[d.x2, d.x2] @ B22 + R22, X[d.u2, :],
                                   SingularHessian, f"player-2 input Hessian at t={t}")
    return out


def two_player_cost(problem, centralized: CentralizedSolution, gains: TwoPlayerGains) -> float:
    spec = ensure_valid(problem)
    g = spec.plant
    P, Sig, K = centralized.P, centralized.Sigma, centralized.K
    H = input_hessians(g, P)
    J = np.trace(P[0] @ g.Sigma_init) + g.mu_init @ P[0] @ g.mu_init
    for t in range(spec.horizon):
        dK = gains.KHat[t] - K[t]
        J += (np.trace(P[t + 1] @ g.W[t])
              + np.trace(Sig[t] @ K[t].T @ H[t] @ K[t])
              + np.trace((gains.SigmaHat[t] - Sig[t]) @ dK.T @ H[t] @ dK))
    return float(J)


@dataclass(frozen=True)
class ResidualReport:
    """Maximum relative residual per equation family, plus per-stage values."""

    sigma_hat: float
    l_hat: float
    p_hat: float
    k_hat: float
    per_stage: dict

    @property
    def max(self) -> float:
        return max(self.sigma_hat, self.l_hat, self.p_hat, self.k_hat)


def coupled_residuals(problem, centralized: CentralizedSolution, gains) -> ResidualReport:
    """Evaluate both sides of the coupled covariance / cost-to-go recursions
    and gain formulas at every stage.

    ``gains`` needs ``LHat``, ``KHat``, ``SigmaHat`` and ``PHat``.  Residuals
    are ``max|lhs - rhs| / (1 + max|lhs|)``.
    """
    spec = ensure_valid(problem)
    g = spec.plant
    T = spec.horizon
    Sig, L, P, K = centralized.Sigma, centralized.L, centralized.P, centralized.K
    LHat, KHat, SH, PH = gains.LHat, gains.KHat, gains.SigmaHat, gains.PHat
    AHat = g.A + g.B @ KHat + LHat @ g.C
    rs, rl, rp, rk = (np.zeros(T + 1) for _ in range(4))
    rs[0] = _rel(g.Sigma_init, SH[0])
    rp[T] = _rel(g.P_final, PH[T])
    for t in range(T):
        rs[t + 1] = _rel(sigma_hat_step(g, t, Sig, L, SH[t], AHat[t], LHat[t]), SH[t + 1])
        rl[t] = _rel(lhat_formula(spec, t, Sig, SH[t], KHat[t]), LHat[t])
        rp[t] = _rel(p_hat_step(g, t, P, K, PH[t + 1], AHat[t], KHat[t]), PH[t])
        rk[t] = _rel(khat_formula(spec, t, P, PH[t + 1], LHat[t]), KHat[t])
    return ResidualReport(
        sigma_hat=float(rs.max()), l_hat=float(rl.max()), p_hat=float(rp.max()),
        k_hat=float(rk.max()),
        per_stage={"sigma_hat": rs, "l_hat": rl[:T], "p_hat": rp, "k_hat": rk[:T]},
    )


@dataclass(frozen=True, eq=False)
class Synthesis:
    """Everything produced by :func:`synthesize`."""

    problem: object
    centralized: CentralizedSolution
    gains: TwoPlayerGains
    system: BoundarySystem
    eta: np.ndarray
    residuals: ResidualReport


def synthesize(problem) -> Synthesis:
    """Full pipeline: centralized and decoupled recursions, boundary system
    assembly and solve, gain recovery, cost and residual check."""
    spec = ensure_valid(problem)
    cen = solve_centralized(spec)
    dec = decoupled_schedules(spec)
    system = assemble_boundary_system(spec, cen, dec)
    eta = solve_block_tridiagonal(system)
    gains = recover_gains(spec, cen, dec, eta, system)
    res = coupled_residuals(spec, cen, gains)
    return Synthesis(problem=spec, centralized=cen, gains=gains, system=system, eta=eta,
                     residuals=res)
