import numpy as np
import pytest

from declqg import (
    CentralizedController,
    HorizonExceeded,
    StructureError,
    TwoPlayerController,
    make_custom_linear_controller,
    random_instance,
    sample_rollout,
    synthesize,
    validate,
)
from declqg.controller import (
    centralized_schedule,
    step_centralized,
    step_two_player,
    two_player_schedule,
)
from declqg.montecarlo import rollout_rng, simulate_batch
from declqg.oracles import evaluate_policy_cost
from declqg.problem import with_mean, y1_only

from conftest import DIMS_ACCEPT


def optimal(spec):
    syn = synthesize(spec)
    return syn, TwoPlayerController(spec, two_player_schedule(syn.centralized, syn.gains))


def test_first_input_is_zero_for_zero_mean(medium):
    _, ctrl = optimal(medium)
    y = np.random.default_rng(0).standard_normal(medium.dims.p) * 100
    u, st = ctrl.step(ctrl.initial_state(), y)
    assert np.all(u == 0)
    assert st.t == 1


def test_player1_input_ignores_y2(medium):
    """Feeding measurement sequences that differ only in y2 leaves u1
    bit-for-bit unchanged."""
    _, ctrl = optimal(validate(with_mean(medium, np.ones(4))))
    d = medium.dims
    rng = np.random.default_rng(1)
    ys = rng.standard_normal((medium.horizon, d.p))
    ys2 = ys.copy()
    ys2[:, d.y2] = rng.standard_normal((medium.horizon, d.p2)) * 1e3
    sa, sb = ctrl.initial_state(), ctrl.initial_state()
    diff_u2 = False
    for t in range(medium.horizon):
        ua, sa = ctrl.step(sa, ys[t])
        ub, sb = ctrl.step(sb, ys2[t])
        np.testing.assert_array_equal(ua[d.u1], ub[d.u1])
        np.testing.assert_array_equal(sa.zhat, sb.zhat)
        diff_u2 |= bool(np.any(ua[d.u2] != ub[d.u2]))
    assert diff_u2


def test_twin_closed_loop_rollouts_share_player1_actions(medium):
    """Closed loop: perturbing only the y2 noise leaves x1 and u1 identical."""
    spec = medium.replace(U=np.zeros_like(medium.plant.U))
    spec = validate(spec.replace(V=_block_diag_v(spec)))
    syn, ctrl = optimal(spec)
    d, g, T = spec.dims, spec.plant, spec.horizon
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal(d.n)
    w = rng.standard_normal((T, d.n))
    v = rng.standard_normal((T, d.p))
    v_alt = v.copy()
    v_alt[:, d.y2] += 5.0 * rng.standard_normal((T, d.p2))

    def run(v):
        x, st, us = x0.copy(), ctrl.initial_state(), []
        for t in range(T):
            u, st = ctrl.step(st, g.C[t] @ x + v[t])
            us.append(u)
            x = g.A[t] @ x + g.B[t] @ u + w[t]
        return np.array(us)

    ua, ub = run(v), run(v_alt)
    np.testing.assert_array_equal(ua[:, d.u1], ub[:, d.u1])
    assert np.any(ua[:, d.u2] != ub[:, d.u2])


def _block_diag_v(spec):
    d = spec.dims
    V = np.array(spec.plant.V)
    V[:, d.y1, d.y2] = 0
    V[:, d.y2, d.y1] = 0
    return V


def test_full_estimate_replays_standard_kalman_filter(medium):
    spec = validate(with_mean(medium, np.array([1.0, -1.0, 0.5, 2.0])))
    syn, ctrl = optimal(spec)
    tr = sample_rollout(spec, ctrl, seed=4)
    g, cen = spec.plant, syn.centralized
    # independent predictor form of the Kalman filter
    z = spec.mu_init.copy()
    S = spec.Sigma_init.copy()
    for t in range(spec.horizon):
        np.testing.assert_allclose(tr.z[t], z, atol=1e-10)
        A, C, W, U, V = g.A[t], g.C[t], g.W[t], g.U[t], g.V[t]
        gain = (A @ S @ C.T + U.T) @ np.linalg.inv(C @ S @ C.T + V)
        z = A @ z + g.B[t] @ tr.u[t] + gain @ (tr.y[t] - C @ z)
        S = A @ S @ A.T + W - gain @ (C @ S @ A.T + U)
    np.testing.assert_allclose(tr.z[-1], z, atol=1e-10)
    np.testing.assert_allclose(S, cen.Sigma[-1], atol=1e-10)


def test_equal_estimates_give_centralized_action():
    spec = validate(y1_only(random_instance(6, DIMS_ACCEPT, 4)))
    syn, ctrl = optimal(spec)
    st = ctrl.initial_state()
    st = type(st)(t=2, z=np.array([0.3, -0.2, 1.0, 0.4]), zhat=np.array([0.3, -0.2, 1.0, 0.4]))
    u, _ = ctrl.step(st, np.zeros(spec.dims.p))
    np.testing.assert_allclose(u, syn.centralized.K[2] @ st.z, atol=1e-14)


def test_centralized_perfect_information():
    spec = random_instance(2, DIMS_ACCEPT, 5)
    spec = validate(spec.replace(W=np.zeros_like(spec.plant.W), U=np.zeros_like(spec.plant.U),
                                 Sigma_init=np.zeros((4, 4)), mu_init=np.array([1.0, 2, 3, 4])))
    syn = synthesize(spec)
    tr = sample_rollout(spec, CentralizedController(spec, syn.centralized), seed=0)
    np.testing.assert_allclose(tr.z, tr.x, atol=1e-12)


def test_centralized_with_zero_gain_is_pure_filter():
    spec = random_instance(2, DIMS_ACCEPT, 4)
    spec = validate(spec.replace(Q=np.zeros_like(spec.plant.Q), S=np.zeros_like(spec.plant.S),
                                 P_final=np.zeros((4, 4))))
    syn = synthesize(spec)
    assert np.all(syn.centralized.K == 0)
    tr = sample_rollout(spec, CentralizedController(spec, syn.centralized), seed=1)
    assert np.all(tr.u == 0)


def test_centralized_and_two_player_agree_when_information_coincides():
    spec = validate(y1_only(random_instance(8, DIMS_ACCEPT, 5, coupling=0.0)))
    syn, ctrl = optimal(spec)
    cc = CentralizedController(spec, syn.centralized)
    a = sample_rollout(spec, ctrl, seed=3)
    b = sample_rollout(spec, cc, seed=3)
    np.testing.assert_allclose(a.u, b.u, atol=1e-10)


def test_stateless_helpers_match_controllers(medium):
    syn, ctrl = optimal(medium)
    y = np.arange(medium.dims.p, dtype=float)
    st = ctrl.initial_state()
    u1, s1 = step_two_player(st, y, medium, syn.centralized, syn.gains)
    u2, s2 = ctrl.step(st, y)
    np.testing.assert_array_equal(u1, u2)
    np.testing.assert_array_equal(s1.z, s2.z)
    uc, _ = step_centralized(st, y, medium, syn.centralized)
    np.testing.assert_array_equal(uc, CentralizedController(medium, syn.centralized)
                                  .step(st, y)[0])


def test_custom_controller_with_optimal_gains_matches(medium):
    syn, ctrl = optimal(medium)
    c, g = syn.centralized, syn.gains
    custom = make_custom_linear_controller(medium, c.K, c.L, g.KHat, g.LHat)
    a = sample_rollout(medium, ctrl, seed=9)
    b = sample_rollout(medium, custom, seed=9)
    np.testing.assert_array_equal(a.u, b.u)


def test_custom_controller_rejects_inadmissible_gains(medium):
    syn = synthesize(medium)
    c, g = syn.centralized, syn.gains
    KHat = np.array(g.KHat)
    KHat[0][medium.dims.u1, 0] = 1.0
    with pytest.raises(StructureError):
        make_custom_linear_controller(medium, c.K, c.L, KHat, g.LHat)
    LHat = np.array(g.LHat)
    LHat[1][0, medium.dims.y2] = 0.5
    with pytest.raises(StructureError):
        make_custom_linear_controller(medium, c.K, c.L, g.KHat, LHat)


def test_perturbed_gains_cost_more(medium):
    syn = synthesize(medium)
    c, g = syn.centralized, syn.gains
    rng = np.random.default_rng(0)
    for _ in range(5):
        KHat = np.array(g.KHat)
        KHat[:, medium.dims.u2, :] += 0.05 * rng.standard_normal(KHat[:, medium.dims.u2].shape)
        sched = make_custom_linear_controller(medium, c.K, c.L, KHat, g.LHat).schedule
        assert evaluate_policy_cost(medium, sched) > g.JHat0


def test_horizon_exceeded(small):
    syn, ctrl = optimal(small)
    st = ctrl.initial_state()
    for _ in range(small.horizon):
        _, st = ctrl.step(st, np.zeros(small.dims.p))
    with pytest.raises(HorizonExceeded):
        ctrl.step(st, np.zeros(small.dims.p))


def test_batched_step_matches_single(medium):
    syn, ctrl = optimal(validate(with_mean(medium, np.ones(4))))
    tr = simulate_batch(ctrl.spec, ctrl, rollout_rng(0, 0), 4)
    for k in range(4):
        st = ctrl.initial_state()
        for t in range(medium.horizon):
            u, st = ctrl.step(st, tr.y[k, t])
            np.testing.assert_allclose(u, tr.u[k, t], atol=1e-12)


def test_centralized_schedule_masks(medium):
    syn = synthesize(medium)
    sched = centralized_schedule(syn.centralized)
    assert sched.structure_violations(medium.dims)  # KHat = K is not admissible
