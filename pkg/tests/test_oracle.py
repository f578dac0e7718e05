import math
from fractions import Fraction

import numpy as np
import pytest

from mfnet.enumeration import compositions, n_compositions
from mfnet.env import (
    EmpiricalStateDist,
    InitialDistribution,
    TeamActionDist,
    canonical_profile,
    line3_model,
    team_sample_step,
)
from mfnet.errors import CapExceededError
from mfnet.graph import build_graph
from mfnet.nets import init_net
from mfnet.oracle import ExactOracle, enumerate_xi, exact_team_kernel
from mfnet.policies import (
    EnergyPolicyParams,
    EnergyTeamPolicy,
    LiftedTeamPolicy,
    PreferFirstPolicy,
    UniformPolicy,
)
from mfnet.sampling import StationaryTupleStream, VisitationSampler, discounted_return_mc
from mfnet.training import substream

MU0 = EmpiricalStateDist(counts=(2, 1, 1), n_agents=4)
P0 = InitialDistribution(kind="point", n_agents=4, n_states=3, counts=(2, 1, 1))


@pytest.fixture(scope="module")
def setup():
    g, m = line3_model()
    oracle = ExactOracle(m, g)
    policy = LiftedTeamPolicy(UniformPolicy(2), 4, 2)
    return g, m, oracle, policy


def test_enumerate_xi_sizes(setup):
    _, _, oracle, _ = setup
    xi = oracle.xi
    assert xi.n_mus == 15 == n_compositions(4, 3)
    block = xi.block(xi.mu_index((2, 1, 1)))
    assert block.stop - block.start == 12  # 3 * 2 * 2


def test_enumerate_xi_index_round_trips(setup):
    _, _, oracle, _ = setup
    xi = oracle.xi
    for i in range(xi.n_xi):
        mu, h = xi.pair(i)
        assert xi.index(mu.counts, h.counts) == i


def test_enumerate_xi_cap():
    g = build_graph(list(range(4)), [(i, i + 1) for i in range(3)])
    with pytest.raises(CapExceededError):
        enumerate_xi(g, 30, 3, cap=1000)


def test_exact_kernel_all_stay(setup):
    g, m, _, _ = setup
    h = TeamActionDist(counts=((2, 0), (1, 0), (1, 0)))
    assert exact_team_kernel(m, g, MU0, h) == {(2, 1, 1): Fraction(1)}


def test_exact_kernel_forced_move(setup):
    g, m, _, _ = setup
    h = TeamActionDist(counts=((0, 2), (1, 0), (1, 0)))
    assert exact_team_kernel(m, g, MU0, h) == {(0, 3, 1): Fraction(1)}


def test_exact_kernel_sums_to_one_everywhere(setup):
    g, m, oracle, _ = setup
    for xi_id in range(oracle.xi.n_xi):
        row = oracle.kernel_rows[xi_id]
        assert sum(row.values()) == 1


def test_exact_kernel_matches_sampler(setup):
    g, m, _, _ = setup
    h = TeamActionDist(counts=((1, 1), (0, 1), (1, 0)))
    law = exact_team_kernel(m, g, MU0, h)
    rng = np.random.default_rng(31)
    draws = 100_000
    hist = {}
    for _ in range(draws):
        nxt = team_sample_step(m, g, MU0, h, rng)
        hist[nxt.counts] = hist.get(nxt.counts, 0) + 1
    tv = 0.5 * sum(abs(hist.get(k, 0) / draws - float(p)) for k, p in law.items())
    tv += 0.5 * sum(hist[k] / draws for k in hist if k not in law)
    assert tv <= 0.02


def test_bellman_constant_stage(setup):
    _, m, oracle, policy = setup
    stage = np.full(oracle.xi.n_xi, 0.3)
    q = np.full(oracle.xi.n_xi, 1.7)
    out = oracle.bellman_apply(policy, q, stage)
    assert np.allclose(out, 0.3 + m.gamma * 1.7, atol=1e-12)


def test_bellman_contraction_random_pairs(setup):
    _, m, oracle, policy = setup
    probs = oracle.policy_block_probs(policy)
    stage = oracle.rs_table(1)
    rng = np.random.default_rng(2)
    for _ in range(20):
        f = rng.uniform(-2, 2, oracle.xi.n_xi)
        h = rng.uniform(-2, 2, oracle.xi.n_xi)
        lhs = np.max(np.abs(oracle.bellman_apply(probs, f, stage)
                            - oracle.bellman_apply(probs, h, stage)))
        assert lhs <= m.gamma * np.max(np.abs(f - h)) + 1e-12


def _rollout_team_q(g, m, mu0, h0, s, n_rollouts, horizon, seed):
    """Replica-vectorized Monte Carlo of the discounted r_s return from
    (mu0, h0) under the uniform lifted policy (canonical line model)."""
    rng = np.random.default_rng(seed)
    n = m.n_agents
    n_states = g.n_states
    profile = canonical_profile(mu0, h0)
    states = np.tile(np.array(profile.states), (n_rollouts, 1))
    actions = np.tile(np.array(profile.actions), (n_rollouts, 1))
    neigh = [list(g.adjacency[t]) for t in range(n_states)]
    deg = np.array([len(x) for x in neigh])
    max_deg = deg.max()
    table = np.zeros((n_states, max_deg), dtype=np.int64)
    for t, ns in enumerate(neigh):
        table[t, : len(ns)] = ns
    row = np.arange(n_rollouts)[:, None]
    total = np.zeros(n_rollouts)
    coef = 1.0
    for step in range(horizon):
        counts = np.bincount(
            (states + row * n_states).ravel(), minlength=n_rollouts * n_states
        ).reshape(n_rollouts, n_states)
        occ_s = counts[:, s]
        total += coef * (1.0 - occ_s / n) * (occ_s > 0)
        u = rng.random(states.shape)
        pick = np.minimum((u * deg[states]).astype(np.int64), deg[states] - 1)
        moved = table[states, pick]
        states = np.where(actions == 1, moved, states)
        actions = (rng.random(states.shape) < 0.5).astype(np.int64)
        coef *= m.gamma
    return float(total.mean()), float(total.std(ddof=1) / math.sqrt(n_rollouts))


def test_team_q_fixed_point_matches_rollouts(setup):
    g, m, oracle, policy = setup
    q = oracle.exact_team_q(policy, 0, tol=1e-10)
    h0 = TeamActionDist(counts=((1, 1), (0, 1), (1, 0)))
    xi_id = oracle.xi.index(MU0.counts, h0.counts)
    mc, se = _rollout_team_q(g, m, MU0, h0, 0, 100_000, 45, seed=77)
    assert abs(mc - q[xi_id]) <= max(1e-2 * abs(q[xi_id]), 4 * se)


def test_team_q_constant_stage_and_bound(setup):
    _, m, oracle, policy = setup
    const = oracle.policy_q(policy, np.full(oracle.xi.n_xi, 0.6), tol=1e-10)
    assert np.allclose(const, 0.6 / (1 - m.gamma), atol=1e-9)
    for s in range(3):
        q = oracle.exact_team_q(policy, s, tol=1e-8)
        assert np.max(np.abs(q)) <= m.r_max / (1 - m.gamma) + 1e-8


def test_team_q_aggregation_matches_mu_value_iteration(setup):
    """Sum over states of E_h Q_s equals the (unweighted) value from an
    independent recursion on the mu space alone."""
    _, m, oracle, policy = setup
    tol = 1e-9
    probs = oracle.policy_block_probs(policy)
    v_indep = oracle.exact_value(policy, weighted=False, tol=tol)
    agg = np.zeros(oracle.xi.n_mus)
    for s in range(3):
        q = oracle.exact_team_q(policy, s, tol=tol)
        agg += oracle._expected_over_h(probs, q)
    assert np.max(np.abs(agg - v_indep)) <= 2 * tol


def test_optimal_q_properties(setup):
    g, m, oracle, policy = setup
    q_opt = oracle.exact_optimal_q(tol=1e-9)
    # dominates the global Q of several policies
    tested = [
        policy,
        LiftedTeamPolicy(PreferFirstPolicy(2, p=0.9), 4, 2),
        EnergyTeamPolicy(
            EnergyPolicyParams(
                nets=tuple(init_net(8, 3, substream(3, 1, s), radius=5.0) for s in range(3)),
                tau=1.0,
            ), 4, 2,
        ),
    ]
    for pol in tested:
        q_pol = oracle.exact_global_q(pol, tol=1e-9)
        assert np.min(q_opt - q_pol) >= -2e-9


def test_optimal_q_tiny_gamma_equals_stage():
    g, m = line3_model(gamma=1e-9)
    oracle = ExactOracle(m, g)
    q_opt = oracle.exact_optimal_q(tol=1e-12)
    assert np.max(np.abs(q_opt - oracle.global_reward_table())) <= 1e-8


def test_stationary_frozen_chain(setup):
    g, m, oracle, _ = setup
    stay = LiftedTeamPolicy(PreferFirstPolicy(2, p=1.0), 4, 2)
    nu = oracle.exact_stationary(stay, P0)
    assert abs(nu.sum() - 1.0) <= 1e-12
    xi = oracle.xi
    h0 = TeamActionDist(counts=((2, 0), (1, 0), (1, 0)))
    expected_id = xi.index(MU0.counts, h0.counts)
    assert nu[expected_id] == pytest.approx(1.0, abs=1e-10)


def test_stationary_matches_longrun_sampler(setup):
    g, m, oracle, policy = setup
    nu = oracle.exact_stationary(policy, P0)
    stream = StationaryTupleStream(m, g, policy, P0, 500, substream(8, 2))
    draws = 200_000
    hist = np.zeros(oracle.xi.n_xi)
    for _ in range(draws):
        tup = stream.next_tuple()
        hist[oracle.xi.index(tup.mu.counts, tup.h.counts)] += 1
    tv = 0.5 * float(np.abs(hist / draws - nu).sum())
    assert tv <= 0.03


def test_visitation_tiny_gamma_is_rho0():
    g, m = line3_model(gamma=1e-12)
    oracle = ExactOracle(m, g)
    policy = LiftedTeamPolicy(UniformPolicy(2), 4, 2)
    sigma = oracle.exact_visitation(policy, P0)
    rho0 = oracle.rho0(policy, P0)
    assert np.max(np.abs(sigma - rho0)) <= 1e-11


def test_visitation_sums_to_one_and_matches_sampler(setup):
    g, m, oracle, policy = setup
    sigma = oracle.exact_visitation(policy, P0)
    assert abs(sigma.sum() - 1.0) <= 1e-14
    sampler = VisitationSampler(m, g, policy, P0, substream(9, 3), warmup_restarts=10)
    draws = 100_000
    hist = np.zeros(oracle.xi.n_xi)
    for _ in range(draws):
        mu, h = sampler.next_pair()
        hist[oracle.xi.index(mu.counts, h.counts)] += 1
    tv = 0.5 * float(np.abs(hist / draws - sigma).sum())
    assert tv <= 0.03


def test_j_constant_reward_policy_invariant():
    g, m = line3_model(reward_name="constant", reward_params={"value": 0.8})
    oracle = ExactOracle(m, g)
    target = 0.8 / (1 - m.gamma)
    pols = [
        LiftedTeamPolicy(UniformPolicy(2), 4, 2),
        EnergyTeamPolicy(
            EnergyPolicyParams(
                nets=tuple(init_net(6, 3, substream(5, s), radius=5.0) for s in range(3)),
                tau=1.0,
            ), 4, 2,
        ),
    ]
    for pol in pols:
        assert oracle.exact_j(pol, P0, tol=1e-10) == pytest.approx(target, abs=1e-8)


def test_j_bound_and_mc_crosscheck(setup):
    g, m, oracle, policy = setup
    j = oracle.exact_j(policy, P0, tol=1e-10)
    assert abs(j) <= len(g.labels) * m.r_max / (1 - m.gamma)
    mc, se = discounted_return_mc(m, g, policy, P0, substream(10, 4), 20_000, 45)
    assert abs(mc - j) <= max(1e-2 * abs(j), 4 * se)


def test_policy_grad_zero_for_constant_reward():
    g, m = line3_model(reward_name="constant", reward_params={"value": 0.5})
    oracle = ExactOracle(m, g)
    params = EnergyPolicyParams(
        nets=tuple(init_net(8, 3, substream(6, s), radius=5.0) for s in range(3)),
        tau=1.0,
    )
    policy = EnergyTeamPolicy(params, 4, 2)
    for s in range(3):
        grad = oracle.exact_policy_grad(params, policy, P0, s, tol=1e-12)
        assert np.max(np.abs(grad)) <= 1e-10


def test_policy_grad_finite_difference_and_localized(setup):
    g, m, oracle, _ = setup
    rng = np.random.default_rng(40)
    while True:
        params = EnergyPolicyParams(
            nets=tuple(init_net(6, 3, substream(int(rng.integers(1 << 30)), s), radius=5.0)
                       for s in range(3)),
            tau=1.0,
        )
        from mfnet.policies import _encode_candidates, candidate_rows

        X = np.vstack([
            _encode_candidates(c / 4, candidate_rows(c, 2), c) for c in range(5)
        ])
        X = X[np.linalg.norm(X, axis=1) > 0]
        if all(np.min(np.abs(X @ net.weights.T)) > 1e-3 for net in params.nets):
            break
    policy = EnergyTeamPolicy(params, 4, 2)
    s = 2
    g_an = oracle.exact_policy_grad(params, policy, P0, s, tol=1e-12)
    step = 1e-5
    g_fd = np.zeros_like(g_an)
    net = params.nets[s]
    for i in range(net.width):
        for j in range(net.in_dim):
            saved = net.weights[i, j]
            net.weights[i, j] = saved + step
            jp = oracle.exact_j(EnergyTeamPolicy(params, 4, 2), P0, tol=1e-12)
            net.weights[i, j] = saved - step
            jm = oracle.exact_j(EnergyTeamPolicy(params, 4, 2), P0, tol=1e-12)
            net.weights[i, j] = saved
            g_fd[i, j] = (jp - jm) / (2 * step)
    assert np.linalg.norm(g_an - g_fd) / np.linalg.norm(g_fd) <= 1e-4
    g_loc = oracle.localized_policy_grad(params, policy, P0, s, k=g.diameter(), tol=1e-12)
    assert np.max(np.abs(g_loc - g_an)) <= 1e-10


def test_decay_gap_zero_at_diameter_and_bounded(setup):
    g, m, oracle, policy = setup
    c = m.r_max / (1 - m.gamma)
    rho = math.sqrt(m.gamma)
    for s in range(3):
        q = oracle.exact_team_q(policy, s, tol=1e-10)
        for k in range(4):
            gap = oracle.decay_gap(q, s, k)
            if k >= g.diameter():
                assert gap == 0.0
            assert gap <= c * rho ** (k + 1) + 1e-9


def test_decay_bound_quarter_gamma_example():
    g, m = line3_model(gamma=0.25)
    oracle = ExactOracle(m, g)
    policy = LiftedTeamPolicy(UniformPolicy(2), 4, 2)
    bound = (1.0 / 0.75) * 0.25 ** 1.5  # = 4/3 * 0.125
    assert bound == pytest.approx(1 / 6, abs=1e-12)
    for s in range(3):
        q = oracle.exact_team_q(policy, s, tol=1e-10)
        assert oracle.decay_gap(q, s, 2) <= bound + 1e-9


def test_truncated_q_exact_at_diameter(setup):
    g, m, oracle, policy = setup
    s = 1
    q = oracle.exact_team_q(policy, s, tol=1e-10)
    qhat = oracle.truncated_q(q, s, g.diameter())
    dense = oracle.truncated_lookup(qhat, s, g.diameter())
    assert np.array_equal(dense, q)


def test_truncated_q_bounds_and_weightings(setup):
    g, m, oracle, policy = setup
    c = m.r_max / (1 - m.gamma)
    rho = math.sqrt(m.gamma)
    nu = oracle.exact_stationary(policy, P0)
    for s in range(3):
        q = oracle.exact_team_q(policy, s, tol=1e-10)
        for k in range(3):
            bound = c * rho ** (k + 1)
            uni = oracle.truncated_lookup(oracle.truncated_q(q, s, k), s, k)
            cond = oracle.truncated_lookup(
                oracle.truncated_q(q, s, k, weights="nu-conditional", nu=nu), s, k
            )
            assert np.max(np.abs(uni - q)) <= bound + 1e-9
            assert np.max(np.abs(cond - q)) <= bound + 1e-9
            assert np.max(np.abs(uni - cond)) <= 2 * bound + 1e-9


def test_truncated_q_rejects_unknown_weighting(setup):
    _, _, oracle, policy = setup
    q = oracle.exact_team_q(policy, 0, tol=1e-8)
    with pytest.raises(ValueError, match="weighting"):
        oracle.truncated_q(q, 0, 1, weights="magic")
    with pytest.raises(ValueError, match="needs nu"):
        oracle.truncated_q(q, 0, 1, weights="nu-conditional")


def test_compute_tables_bundle(setup):
    g, m, oracle, policy = setup
    tables = oracle.compute_tables(policy, P0, tol=1e-8)
    assert set(tables.q_team) == {0, 1, 2}
    total_w = sum(tables.q_team_weighted[s] for s in range(3))
    assert np.max(np.abs(total_w - tables.q_global)) <= 3e-8
    assert abs(tables.stationary.sum() - 1) < 1e-10
    assert abs(tables.visitation.sum() - 1) < 1e-12
    probs = oracle.policy_block_probs(policy)
    v_from_q = oracle._expected_over_h(probs, tables.q_global)
    assert np.max(np.abs(v_from_q - tables.v_weighted)) <= 3e-8
