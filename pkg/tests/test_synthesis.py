import dataclasses

import numpy as np
import pytest

from declqg import BlockDims, random_instance, solve_centralized, synthesize, validate
from declqg.blocktri import solve_block_tridiagonal
from declqg.problem import y1_only
from declqg.synthesis import (
    assemble_boundary_system,
    coupled_residuals,
    decoupled_schedules,
    khat_formula,
    lhat_formula,
    p_hat_step,
    player1_filter_recursion,
    player2_control_recursion,
    recover_gains,
    sigma_hat_step,
    two_player_cost,
    vec,
    unvec,
)

from conftest import DIMS_ACCEPT, scalar_blocks


def test_player1_filter_scalar_by_hand():
    Gamma, M, A_M = player1_filter_recursion(scalar_blocks(2))
    np.testing.assert_allclose(Gamma.ravel(), [0.0, 1.0, 1.5], atol=1e-15)
    np.testing.assert_allclose(M.ravel(), [0.0, -0.5], atol=1e-15)
    np.testing.assert_allclose(A_M.ravel(), [1.0, 0.5], atol=1e-15)


def test_player1_filter_blind():
    spec = scalar_blocks(3, C=0.0)
    _, M, A_M = player1_filter_recursion(spec)
    assert np.all(M == 0)
    np.testing.assert_array_equal(A_M, spec.plant.A[:, :1, :1])


def test_player2_control_scalar_by_hand():
    F, J, A_J = player2_control_recursion(scalar_blocks(1))
    assert J[0, 0, 0] == pytest.approx(-0.5, abs=1e-15)
    assert F[0, 0, 0] == pytest.approx(1.5, abs=1e-15)


def test_player2_zero_cost_to_go():
    F, J, _ = player2_control_recursion(scalar_blocks(3, Q=0.0, P_final=0.0))
    assert np.all(F == 0) and np.all(J == 0)


def test_decoupled_schedules_match_standalone(decoupled):
    dec = decoupled_schedules(decoupled)
    s1 = solve_centralized(decoupled.subsystem(1))
    s2 = solve_centralized(decoupled.subsystem(2))
    np.testing.assert_allclose(dec.Gamma, s1.Sigma, atol=1e-14)
    np.testing.assert_allclose(dec.M, s1.L, atol=1e-14)
    np.testing.assert_allclose(dec.F, s2.P, atol=1e-14)
    np.testing.assert_allclose(dec.J, s2.K, atol=1e-14)


def test_vec_is_column_major():
    X = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(vec(X), [0, 3, 1, 4, 2, 5])
    np.testing.assert_array_equal(unvec(vec(X), 2, 3), X)
    # vec(A X B) = (B' kron A) vec X
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((4, 2)), rng.standard_normal((3, 5))
    np.testing.assert_allclose(vec(A @ X @ B), np.kron(B.T, A) @ vec(X), atol=1e-13)


def test_single_stage_system_is_identity():
    spec = validate(random_instance(2, DIMS_ACCEPT, 1))
    sys = assemble_boundary_system(spec)
    assert sys.G.shape[0] == 0 and sys.H.shape[0] == 0
    np.testing.assert_array_equal(solve_block_tridiagonal(sys)[0], sys.c[0])


def test_decoupled_instance_has_zero_drive(decoupled):
    syn = synthesize(decoupled)
    assert np.all(syn.system.c == 0)
    assert np.all(syn.eta == 0)
    g, d = syn.gains, decoupled.dims
    assert np.all(g.LHat21 == 0) and np.all(g.KHat21 == 0)
    assert np.all(g.SigmaHat[:, d.x2, d.x1] == 0)
    assert np.all(g.PHat[:, d.x2, d.x1] == 0)
    assert syn.residuals.max <= 1e-12


# --- finite-difference identification of the boundary system ---------------------

def _stage_map(spec, cen, ref, t):
    """Affine map (SigmaHat21_t, PHat21_{t+1}) -> (PHat21_t, SigmaHat21_{t+1})
    evaluated directly from the nonlinear gain formulas and recursions."""
    d, g = spec.dims, spec.plant
    n2, n1, p1, m2 = d.n2, d.n1, d.p1, d.m2

    def with21(X, B):
        X = np.array(X)
        X[d.x2, d.x1] = B
        X[d.x1, d.x2] = B.T
        return X

    def h(x, y):
        SH = with21(ref.SigmaHat[t], unvec(x, n2, n1))
        PH = with21(ref.PHat[t + 1], unvec(y, n2, n1))
        nl = n2 * p1

        def gains(z):
            KHat = np.zeros((d.m, d.n))
            KHat[d.u2, d.x2] = ref.KHat[t][d.u2, d.x2]
            KHat[d.u2, d.x1] = unvec(z[nl:], m2, n1)
            LHat = np.zeros((d.n, d.p))
            LHat[:, d.y1] = ref.LHat[t][:, d.y1]
            LHat[d.x2, d.y1] = unvec(z[:nl], n2, p1)
            return LHat, KHat

        def phi(z):
            LHat, KHat = gains(z)
            Ln = lhat_formula(spec, t, cen.Sigma, SH, KHat)
            Kn = khat_formula(spec, t, cen.P, PH, LHat)
            return np.concatenate([vec(Ln[d.x2, d.y1]), vec(Kn[d.u2, d.x1])])

        k = n2 * p1 + m2 * n1
        z0 = phi(np.zeros(k))
        Phi = np.column_stack([phi(e) - z0 for e in np.eye(k)])
        z = np.linalg.solve(np.eye(k) - Phi, z0)
        LHat, KHat = gains(z)
        LHat[d.x1, d.y1] = lhat_formula(spec, t, cen.Sigma, SH, KHat)[d.x1, d.y1]
        AHat = g.A[t] + g.B[t] @ KHat + LHat @ g.C[t]
        P21 = p_hat_step(g, t, cen.P, cen.K, PH, AHat, KHat)[d.x2, d.x1]
        S21 = sigma_hat_step(g, t, cen.Sigma, cen.L, SH, AHat, LHat)[d.x2, d.x1]
        return np.concatenate([vec(P21), vec(S21)])

    q = n2 * n1
    h0 = h(np.zeros(q), np.zeros(q))
    Hx = np.column_stack([h(e, np.zeros(q)) - h0 for e in np.eye(q)])
    Hy = np.column_stack([h(np.zeros(q), e) - h0 for e in np.eye(q)])
    return h0, Hx, Hy


def test_boundary_system_matches_finite_difference_probe():
    spec = validate(random_instance(3, BlockDims(2, 2, 1, 1, 1, 1), 4))
    syn = synthesize(spec)
    cen, sys, T, q = syn.centralized, syn.system, spec.horizon, syn.system.q
    d = spec.dims
    s_init = vec(spec.Sigma_init[d.x2, d.x1])
    p_final = vec(spec.P_final[d.x2, d.x1])
    for t in range(T):
        h0, Hx, Hy = _stage_map(spec, cen, syn.gains, t)
        c = h0.copy()
        if t == 0:
            c += Hx @ s_init
        if t == T - 1:
            c += Hy @ p_final
        np.testing.assert_allclose(sys.c[t], c, atol=1e-10)
        if t > 0:
            G = np.zeros((2 * q, 2 * q))
            G[:, q:] = -Hx
            np.testing.assert_allclose(sys.G[t - 1], G, atol=1e-10)
        if t < T - 1:
            H = np.zeros((2 * q, 2 * q))
            H[:, :q] = -Hy
            np.testing.assert_allclose(sys.H[t], H, atol=1e-10)


# --- recovered gains -----------------------------------------------------------

def test_gain_structure_is_exact(medium):
    g, d = synthesize(medium).gains, medium.dims
    assert np.all(g.LHat[:, :, d.y2] == 0)
    assert np.all(g.KHat[:, d.u1, :] == 0)


def test_residuals_small(medium):
    res = synthesize(medium).residuals
    assert res.max <= 1e-9


def test_recover_gains_directly(medium):
    cen = solve_centralized(medium)
    dec = decoupled_schedules(medium)
    sys = assemble_boundary_system(medium, cen, dec)
    gains = recover_gains(medium, cen, dec, solve_block_tridiagonal(sys), sys)
    assert gains.JHat0 == pytest.approx(synthesize(medium).gains.JHat0, rel=1e-14)


def test_residual_detects_perturbed_gain(medium):
    syn = synthesize(medium)
    g, d = syn.gains, medium.dims
    KHat = np.array(g.KHat)
    KHat[2][d.u2, d.x1] += 1e-3
    bad = dataclasses.replace(g, KHat=KHat)
    res = coupled_residuals(medium, syn.centralized, bad)
    assert res.per_stage["k_hat"][2] >= 1e-4


def test_uninformative_second_measurement():
    spec = validate(y1_only(random_instance(4, DIMS_ACCEPT, 5)))
    syn = synthesize(spec)
    np.testing.assert_allclose(syn.gains.SigmaHat, syn.centralized.Sigma, atol=1e-12)
    d, g = spec.dims, spec.plant
    y1 = dataclasses.replace(g, C=g.C[:, d.y1, :], U=g.U[:, d.y1, :], V=g.V[:, d.y1, d.y1])
    J_y1 = solve_centralized(y1).J0
    assert syn.gains.JHat0 == pytest.approx(J_y1, rel=1e-8)
    assert syn.centralized.J0 == pytest.approx(J_y1, rel=1e-8)


def test_two_player_cost_at_least_centralized():
    for seed in range(8):
        syn = synthesize(validate(random_instance(seed, DIMS_ACCEPT, 5)))
        assert syn.gains.JHat0 >= syn.centralized.J0 * (1 - 1e-12)


def test_decoupled_cost_is_sum_of_standalone(decoupled):
    syn = synthesize(decoupled)
    J1 = solve_centralized(decoupled.subsystem(1)).J0
    J2 = solve_centralized(decoupled.subsystem(2)).J0
    assert syn.gains.JHat0 == pytest.approx(syn.centralized.J0, rel=1e-9)
    assert syn.gains.JHat0 == pytest.approx(J1 + J2, rel=1e-9)
    assert two_player_cost(decoupled, syn.centralized, syn.gains) == syn.gains.JHat0


def test_covariance_ordering(medium):
    syn = synthesize(medium)
    for t in range(medium.horizon + 1):
        for hat, ref in ((syn.gains.SigmaHat[t], syn.centralized.Sigma[t]),
                         (syn.gains.PHat[t], syn.centralized.P[t])):
            assert np.linalg.eigvalsh(hat - ref).min() >= -1e-8 * (1 + np.abs(ref).max())
