from fractions import Fraction

import numpy as np
import pytest

from mfnet.env import (
    AgentProfile,
    EmpiricalStateDist,
    InitialDistribution,
    TeamActionDist,
    agent_step,
    canonical_profile,
    empirical_of,
    global_stage_reward,
    kernel_pmf,
    line3_model,
    local_team_reward,
    make_model,
    team_dist_of,
    team_sample_step,
    validate_model,
)
from mfnet.errors import ModelValidityError
from mfnet.graph import build_graph, k_hop, restrict
from mfnet.oracle import exact_team_kernel, mu_prime_marginal

MU0 = EmpiricalStateDist(counts=(2, 1, 1), n_agents=4)


def all_stay_h(mu):
    return TeamActionDist(
        counts=tuple((c, 0) for c in mu.counts)
    )


def test_empirical_of_examples():
    p = AgentProfile(states=(0, 0, 1, 2))
    assert empirical_of(p, 3).counts == (2, 1, 1)
    assert empirical_of(AgentProfile(states=(0, 0, 0)), 2).counts == (3, 0)
    perm = AgentProfile(states=(2, 0, 1, 0))
    assert empirical_of(perm, 3).counts == (2, 1, 1)


def test_team_dist_of_examples():
    p = AgentProfile(states=(0, 0, 1, 2), actions=(0, 1, 0, 0))
    h = team_dist_of(p, 3, 2)
    assert h.counts == ((1, 1), (1, 0), (1, 0))
    single = team_dist_of(AgentProfile(states=(1,), actions=(1,)), 3, 2)
    assert single.counts == ((0, 0), (0, 1), (0, 0))
    perm = AgentProfile(states=(2, 0, 1, 0), actions=(0, 1, 0, 0))
    assert team_dist_of(perm, 3, 2).counts == ((1, 1), (1, 0), (1, 0))


def test_team_dist_requires_actions():
    with pytest.raises(ValueError, match="no actions"):
        team_dist_of(AgentProfile(states=(0,)), 1, 2)


def test_counts_invariants():
    with pytest.raises(ValueError):
        EmpiricalStateDist(counts=(2, 1), n_agents=4)
    with pytest.raises(ValueError):
        EmpiricalStateDist(counts=(-1, 5), n_agents=4)
    assert MU0.mu(0) == Fraction(1, 2)


def test_agent_step_all_stay():
    g, m = line3_model()
    profile = AgentProfile(states=(0, 0, 1, 2), actions=(0, 0, 0, 0))
    nxt, rewards = agent_step(m, g, profile, np.random.default_rng(0))
    assert nxt.states == (0, 0, 1, 2)
    assert rewards == (Fraction(1, 2), Fraction(1, 2), Fraction(3, 4), Fraction(3, 4))


def test_agent_step_forced_move():
    g, m = line3_model()
    profile = AgentProfile(states=(0, 0), actions=(1, 1))
    nxt, _ = agent_step(m, g, AgentProfile(states=(0, 0), actions=(1, 1)),
                        np.random.default_rng(3))
    assert nxt.states == (1, 1)


def test_agent_step_frequencies_match_exact_kernel():
    g, m = line3_model()
    h = TeamActionDist(counts=((1, 1), (0, 1), (1, 0)))
    profile = canonical_profile(MU0, h)
    law = exact_team_kernel(m, g, MU0, h)
    rng = np.random.default_rng(42)
    hist = {}
    draws = 100_000
    for _ in range(draws):
        nxt, _ = agent_step(m, g, profile, rng)
        key = empirical_of(nxt, 3).counts
        hist[key] = hist.get(key, 0) + 1
    tv = 0.5 * sum(
        abs(hist.get(k, 0) / draws - float(p)) for k, p in law.items()
    ) + 0.5 * sum(hist[k] / draws for k in hist if k not in law)
    assert tv <= 0.02


def test_team_sample_step_trivial_cases():
    g, m = line3_model()
    rng = np.random.default_rng(1)
    assert team_sample_step(m, g, MU0, all_stay_h(MU0), rng).counts == (2, 1, 1)
    h = TeamActionDist(counts=((0, 2), (1, 0), (1, 0)))
    for _ in range(20):
        nxt = team_sample_step(m, g, MU0, h, rng)
        assert nxt.counts[0] == 0  # both state-0 agents are forced off 0


def test_team_step_conservation_and_support():
    g, m = line3_model(kernel_name="crowd_averse")
    rng = np.random.default_rng(9)
    mu = MU0
    for _ in range(200):
        h = TeamActionDist(
            counts=tuple(
                tuple(np.random.default_rng(rng.integers(1 << 31)).multinomial(c, [0.5, 0.5]))
                for c in mu.counts
            )
        )
        nxt = team_sample_step(m, g, mu, h, rng)
        assert sum(nxt.counts) == 4
        # mass only moves within 1-hop neighborhoods
        left = [c for c in mu.counts]
        for s in range(3):
            reachable = set()
            for t in range(3):
                if mu.counts[t] and s in g.khop_members(t, 1):
                    reachable.add(t)
            if nxt.counts[s] > 0 and not reachable:
                raise AssertionError("mass appeared outside any 1-hop reach")
        mu = nxt


def test_team_step_incompatible_h():
    g, m = line3_model()
    bad = TeamActionDist(counts=((2, 0), (1, 0), (0, 0)))
    with pytest.raises(ValueError, match="occupancy"):
        team_sample_step(m, g, MU0, bad, np.random.default_rng(0))


def test_local_team_reward_examples():
    g, m = line3_model()
    w = k_hop(g, 1, 1)
    mu_w = restrict(MU0.mu_vector(), w)
    assert local_team_reward(m, w, mu_w, (Fraction(1), Fraction(0))) == Fraction(3, 4)
    assert local_team_reward(m, w, mu_w, (0, 0)) == 0
    g2, m2 = line3_model(reward_name="action_indicator", reward_params={"target": 0})
    val = local_team_reward(m2, w, mu_w, (Fraction(1, 2), Fraction(1, 2)))
    assert val == Fraction(1, 2)


def test_local_team_reward_rejects_negative():
    g, m = line3_model()
    w = k_hop(g, 1, 1)
    with pytest.raises(ValueError, match="negative"):
        local_team_reward(m, w, restrict(MU0.mu_vector(), w), (-0.5, 1.5))


def test_global_stage_reward_arithmetic():
    g, m = line3_model()
    val = global_stage_reward(m, g, MU0, all_stay_h(MU0))
    assert val == Fraction(5, 8)  # 1/2*1/2 + 1/4*3/4 + 1/4*3/4


def test_global_stage_reward_single_occupied_state():
    g, m = line3_model()
    mu = EmpiricalStateDist(counts=(4, 0, 0), n_agents=4)
    h = TeamActionDist(counts=((4, 0), (0, 0), (0, 0)))
    assert global_stage_reward(m, g, mu, h) == Fraction(0)  # 1 * (1 - 1)


def test_global_equals_agent_average_over_profiles():
    g, m = line3_model()
    h = TeamActionDist(counts=((1, 1), (1, 0), (0, 1)))
    expected = global_stage_reward(m, g, MU0, h)
    base = canonical_profile(MU0, h)
    rng = np.random.default_rng(4)
    for _ in range(25):
        order = rng.permutation(4)
        profile = AgentProfile(
            states=tuple(base.states[i] for i in order),
            actions=tuple(base.actions[i] for i in order),
        )
        _, rewards = agent_step(m, g, profile, np.random.default_rng(0))
        assert Fraction(sum(Fraction(r) for r in rewards), 4) == expected


def test_kernel_validation_rejects_offwindow_mass():
    g = build_graph([0, 1, 2], [(0, 1), (1, 2)])
    m = make_model(g, kernel_name="bad_teleport")
    with pytest.raises(ModelValidityError, match="outside"):
        kernel_pmf(m, g, 0, MU0, 0)
    with pytest.raises(ModelValidityError):
        validate_model(m, g)


def test_kernel_pmfs_are_exact_rationals():
    g, m = line3_model()
    pmf = kernel_pmf(m, g, 1, MU0, 1)
    assert pmf == {0: Fraction(1, 2), 2: Fraction(1, 2)}
    assert sum(pmf.values()) == 1


def test_reward_bound_enforced():
    g = build_graph([0, 1], [(0, 1)])
    m = make_model(g, reward_name="constant", reward_params={"value": 3.0}, r_max=1.0,
                   n_agents=2)
    with pytest.raises(ModelValidityError, match="exceeds r_max"):
        validate_model(m, g)


def test_local_dependence_of_marginal_exact_line5():
    """mu'(s) law is unchanged by edits outside (N^2_s, N^1_s), with a kernel
    that really reads mu. Line of 5 states makes the outside nonempty."""
    g = build_graph(list(range(5)), [(i, i + 1) for i in range(4)])
    m = make_model(g, kernel_name="crowd_averse", n_agents=3, actions=("stay", "go"))
    s = 0
    mu_a = EmpiricalStateDist(counts=(1, 1, 0, 1, 0), n_agents=3)
    mu_b = EmpiricalStateDist(counts=(1, 1, 0, 0, 1), n_agents=3)  # differs outside N^2_0
    h_a = TeamActionDist(counts=((0, 1), (1, 0), (0, 0), (1, 0), (0, 0)))
    h_b = TeamActionDist(counts=((0, 1), (1, 0), (0, 0), (0, 1), (0, 0)))  # differs outside N^1_0
    assert mu_prime_marginal(m, g, mu_a, h_a, s) == mu_prime_marginal(m, g, mu_b, h_b, s)


def test_initial_distribution():
    p0 = InitialDistribution(kind="point", n_agents=4, n_states=3, counts=(2, 1, 1))
    assert p0.support() == [((2, 1, 1), Fraction(1))]
    assert p0.sample(np.random.default_rng(0)).counts == (2, 1, 1)
    uni = InitialDistribution(kind="uniform", n_agents=2, n_states=2)
    support = uni.support()
    assert len(support) == 3
    assert sum(p for _, p in support) == 1
    with pytest.raises(ValueError):
        InitialDistribution(kind="point", n_agents=4, n_states=3)
