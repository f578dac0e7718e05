import itertools
import warnings
from fractions import Fraction

import numpy as np
import pytest

from mfnet.env import EmpiricalStateDist, TeamActionDist
from mfnet.errors import CapExceededError
from mfnet.nets import TwoLayerNet, init_net
from mfnet.policies import (
    EnergyPolicyParams,
    EnergyTeamPolicy,
    LiftedTeamPolicy,
    OccupancyAdaptivePolicy,
    UniformPolicy,
    centered_policy_feature,
    energy_policy_pmf,
    lift_policy,
    log_policy_grad,
    make_individual_policy,
    recover_individual,
    sample_energy_policy,
    sample_team_action,
    softmax_pmf,
)


def brute_force_lift(probs, n):
    """Independent oracle: enumerate all action tuples and group by counts."""
    out = {}
    for tup in itertools.product(range(len(probs)), repeat=n):
        counts = tuple(tup.count(a) for a in range(len(probs)))
        p = 1.0
        for a in tup:
            p *= probs[a]
        out[counts] = out.get(counts, 0.0) + p
    return out


def test_lift_symmetric_binomial():
    pi = lambda s, mu_s: (Fraction(1, 2), Fraction(1, 2))
    lifted = lift_policy(pi, 0, Fraction(1, 2), 4)  # 2 agents
    assert lifted[(2, 0)] == Fraction(1, 4)
    assert lifted[(1, 1)] == Fraction(1, 2)
    assert lifted[(0, 2)] == Fraction(1, 4)


def test_lift_deterministic_policy():
    pi = lambda s, mu_s: (Fraction(1), Fraction(0))
    lifted = lift_policy(pi, 0, Fraction(3, 4), 4)
    assert lifted[(3, 0)] == 1
    assert sum(lifted.values()) == 1


def test_lift_matches_tuple_enumeration():
    pi = lambda s, mu_s: (0.3, 0.7)
    lifted = lift_policy(pi, 0, Fraction(3, 4), 4)  # 3 agents
    oracle = brute_force_lift((0.3, 0.7), 3)
    # frozen from the enumeration: 0.027, 0.189, 0.441, 0.343
    assert abs(lifted[(3, 0)] - 0.027) < 1e-15
    assert abs(lifted[(2, 1)] - 0.189) < 1e-15
    assert abs(lifted[(1, 2)] - 0.441) < 1e-15
    assert abs(lifted[(0, 3)] - 0.343) < 1e-15
    for counts, p in oracle.items():
        assert abs(lifted[counts] - p) < 1e-12


def test_lift_zero_occupancy_point_mass():
    pi = lambda s, mu_s: (Fraction(1, 2), Fraction(1, 2))
    lifted = lift_policy(pi, 0, Fraction(0), 4)
    assert lifted == {(0, 0): 1}


def test_lift_rejects_bad_pmf():
    with pytest.raises(ValueError, match="pmf"):
        lift_policy(lambda s, m: (0.5, 0.6), 0, Fraction(1, 2), 4)


def test_lift_mean_property_exact():
    pi = lambda s, mu_s: (Fraction(2, 7), Fraction(4, 7), Fraction(1, 7))
    n = 5
    lifted = lift_policy(pi, 0, Fraction(1), n)
    for a in range(3):
        mean = sum(Fraction(c[a], n) * p for c, p in lifted.items())
        assert mean == pi(0, 1)[a]


def test_recover_round_trips():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n_actions = int(rng.integers(2, 5))
        n = int(rng.integers(1, 9))
        probs = rng.dirichlet(np.ones(n_actions))
        pi = lambda s, mu_s, p=tuple(probs): p
        lifted = lift_policy(pi, 0, Fraction(n, n), n)
        back = recover_individual(lifted, Fraction(1), n)
        assert np.max(np.abs(np.array(back) - probs)) <= 1e-12


def test_recover_dirac():
    pi = lambda s, mu_s: (Fraction(0), Fraction(1))
    lifted = lift_policy(pi, 0, Fraction(1), 3)
    assert recover_individual(lifted, Fraction(1), 3) == (0.0, 1.0)


def test_recover_rejects_empty_state():
    with pytest.raises(ValueError, match="empty"):
        recover_individual({(0, 0): 1.0}, Fraction(0), 4)


def test_recover_flags_non_lift():
    bogus = {(2, 0): 0.5, (1, 1): 0.0, (0, 2): 0.5}  # not a multinomial lift
    with pytest.raises(ValueError, match="not a multinomial lift"):
        recover_individual(bogus, Fraction(1), 2)


def test_recover_warns_on_numerical_drift():
    pi = lambda s, mu_s: (0.3, 0.7)
    lifted = {k: float(v) for k, v in lift_policy(pi, 0, Fraction(1), 3).items()}
    lifted[(3, 0)] *= 1 + 1e-8  # inside the 1e-6 gate, beyond 1e-12
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = recover_individual(lifted, Fraction(1), 3)
    assert any("renormalized" in str(w.message) for w in caught)
    assert abs(sum(out) - 1.0) < 1e-15


def test_sample_team_action_deterministic_and_empty():
    mu = EmpiricalStateDist(counts=(2, 0, 2), n_agents=4)
    pi = lambda s, mu_s: (Fraction(1), Fraction(0))
    h = sample_team_action(pi, mu, 2, np.random.default_rng(0))
    assert h.counts == ((2, 0), (0, 0), (2, 0))


def test_sample_team_action_frequencies_match_lift():
    mu = EmpiricalStateDist(counts=(3, 0, 1), n_agents=4)
    pi = lambda s, mu_s: (0.3, 0.7)
    lifted = lift_policy(pi, 0, Fraction(3, 4), 4)
    rng = np.random.default_rng(7)
    draws = 100_000
    hist = {}
    for _ in range(draws):
        h = sample_team_action(pi, mu, 2, rng)
        hist[h.counts[0]] = hist.get(h.counts[0], 0) + 1
    tv = 0.5 * sum(abs(hist.get(k, 0) / draws - float(p)) for k, p in lifted.items())
    assert tv <= 0.02


def zero_net(width, dim):
    w = np.zeros((width, dim))
    return TwoLayerNet(weights=w.copy(), signs=np.ones(width), init_weights=w.copy(),
                       radius=1.0)


def make_params(nets, tau=1.0):
    return EnergyPolicyParams(nets=tuple(nets), tau=tau)


def test_energy_pmf_zero_net_uniform():
    params = make_params([zero_net(4, 3) for _ in range(3)])
    candidates, probs = energy_policy_pmf(params, 0, Fraction(1, 2), 4, 2)
    assert len(candidates) == 3
    assert np.allclose(probs, 1.0 / 3.0, atol=1e-15)


def test_energy_pmf_tiny_temperature_uniform():
    rng = np.random.default_rng(3)
    nets = [init_net(8, 3, rng, radius=5.0) for _ in range(3)]
    params = make_params(nets, tau=1e-8)
    _, probs = energy_policy_pmf(params, 1, Fraction(3, 4), 4, 2)
    assert np.max(np.abs(probs - 1.0 / len(probs))) <= 1e-6


def test_energy_pmf_hand_set_energies():
    # one unit, orthogonal to candidate (1,0) and ln2 on candidate (0,1)
    mu_s = 0.25
    w = np.array([[0.0, -1.0, np.sqrt(2.0) * np.log(2.0)]])
    net = TwoLayerNet(weights=w.copy(), signs=np.ones(1), init_weights=w.copy(), radius=9.0)
    params = make_params([net, zero_net(1, 3), zero_net(1, 3)])
    candidates, probs = energy_policy_pmf(params, 0, Fraction(1, 4), 4, 2)
    assert candidates == ((1, 0), (0, 1))
    assert np.allclose(probs, [1.0 / 3.0, 2.0 / 3.0], atol=1e-12)


def test_softmax_constant_shift_invariance():
    rng = np.random.default_rng(1)
    e = rng.normal(size=7)
    assert np.allclose(softmax_pmf(e), softmax_pmf(e + 123.4), atol=1e-15)


def test_energy_candidate_cap():
    params = make_params([zero_net(2, 3)])
    with pytest.raises(CapExceededError):
        energy_policy_pmf(params, 0, Fraction(1), 30, 2, cap=10)


def test_sample_energy_uniform_frequencies():
    params = make_params([zero_net(2, 3) for _ in range(3)])
    mu = EmpiricalStateDist(counts=(2, 1, 1), n_agents=4)
    pol = EnergyTeamPolicy(params, 4, 2)
    rng = np.random.default_rng(11)
    draws = 100_000
    hist = {}
    for _ in range(draws):
        h = pol.sample(mu, rng)
        hist[h.counts] = hist.get(h.counts, 0) + 1
    n_joint = 3 * 2 * 2
    tv = 0.5 * sum(abs(c / draws - 1.0 / n_joint) for c in hist.values())
    tv += 0.5 * (n_joint - len(hist)) / n_joint
    assert tv <= 0.02


def test_sample_energy_point_mass():
    w = np.array([[0.0, 100.0, -100.0]])
    net = TwoLayerNet(weights=w.copy(), signs=np.ones(1), init_weights=w.copy(), radius=999.0)
    params = make_params([net, net, net], tau=50.0)
    mu = EmpiricalStateDist(counts=(4, 0, 0), n_agents=4)
    rng = np.random.default_rng(0)
    for _ in range(50):
        h = sample_energy_policy(params, mu, 2, rng)
        assert h.counts[0] == (4, 0)


def test_sample_energy_product_independence():
    rng = np.random.default_rng(21)
    nets = [init_net(8, 3, rng, radius=5.0) for _ in range(3)]
    params = make_params(nets)
    pol = EnergyTeamPolicy(params, 4, 2)
    mu = EmpiricalStateDist(counts=(2, 0, 2), n_agents=4)
    draws = 100_000
    joint = {}
    left = {}
    right = {}
    for _ in range(draws):
        h = pol.sample(mu, rng)
        joint[(h.counts[0], h.counts[2])] = joint.get((h.counts[0], h.counts[2]), 0) + 1
        left[h.counts[0]] = left.get(h.counts[0], 0) + 1
        right[h.counts[2]] = right.get(h.counts[2], 0) + 1
    tv = 0.0
    for a in left:
        for b in right:
            emp = joint.get((a, b), 0) / draws
            prod = (left[a] / draws) * (right[b] / draws)
            tv += 0.5 * abs(emp - prod)
    assert tv <= 0.03


def test_log_policy_grad_single_candidate_zero():
    params = make_params([zero_net(4, 3) for _ in range(3)])
    mu = EmpiricalStateDist(counts=(0, 4, 0), n_agents=4)
    h = TeamActionDist(counts=((0, 0), (2, 2), (0, 0)))
    grad = log_policy_grad(params, 0, mu, h)  # state 0 is empty: one candidate
    assert np.all(grad == 0.0)


def test_log_policy_grad_matches_finite_differences():
    rng = np.random.default_rng(5)
    mu = EmpiricalStateDist(counts=(2, 1, 1), n_agents=4)
    h = TeamActionDist(counts=((1, 1), (0, 1), (1, 0)))
    s = 0
    step = 1e-6
    for tau in (1.0, 2.0):
        while True:
            nets = [init_net(6, 3, rng, radius=5.0) for _ in range(3)]
            params = make_params(nets, tau=tau)
            from mfnet.policies import _encode_candidates, candidate_rows

            xs = _encode_candidates(0.5, candidate_rows(2, 2), 2)
            if np.min(np.abs(xs @ nets[0].weights.T)) > 1e-3:
                break

        def log_pi(p):
            cands, probs = energy_policy_pmf(p, s, Fraction(1, 2), 4, 2)
            return float(np.log(probs[cands.index((1, 1))]))

        analytic = log_policy_grad(params, s, mu, h)
        fd = np.zeros_like(analytic)
        net = params.nets[s]
        for i in range(net.width):
            for j in range(net.in_dim):
                saved = net.weights[i, j]
                net.weights[i, j] = saved + step
                up = log_pi(params)
                net.weights[i, j] = saved - step
                dn = log_pi(params)
                net.weights[i, j] = saved
                fd[i, j] = (up - dn) / (2 * step)
        rel = np.linalg.norm(analytic - fd) / np.linalg.norm(fd)
        assert rel <= 1e-5


def test_log_policy_grad_norm_bound():
    rng = np.random.default_rng(17)
    for trial in range(25):
        tau = float(rng.uniform(0.2, 3.0))
        nets = [init_net(10, 3, rng, radius=5.0) for _ in range(3)]
        params = make_params(nets, tau=tau)
        counts = rng.multinomial(4, [1 / 3] * 3)
        mu = EmpiricalStateDist(counts=tuple(int(c) for c in counts), n_agents=4)
        rows = tuple(
            tuple(int(x) for x in rng.multinomial(c, [0.5, 0.5])) for c in mu.counts
        )
        h = TeamActionDist(counts=rows)
        for s in range(3):
            grad = log_policy_grad(params, s, mu, h)
            assert np.linalg.norm(grad) <= 2.0 * tau + 1e-12


def test_centered_feature_norm_and_centering():
    rng = np.random.default_rng(23)
    mu = EmpiricalStateDist(counts=(2, 1, 1), n_agents=4)
    for _ in range(10):
        nets = [init_net(12, 3, rng, radius=5.0) for _ in range(3)]
        params = make_params(nets)
        pol = EnergyTeamPolicy(params, 4, 2)
        for s in range(3):
            cands, probs = pol.state_pmf(s, mu.counts[s])
            expect = None
            for c, p in zip(cands, probs):
                h = TeamActionDist(
                    counts=tuple(
                        c if t == s else tuple([mu.counts[t]] + [0])
                        for t in range(3)
                    )
                )
                phi = centered_policy_feature(params, s, mu, h)
                assert np.linalg.norm(phi) <= 2.0 + 1e-12
                expect = phi * p if expect is None else expect + phi * p
            assert np.max(np.abs(expect)) <= 1e-12


def test_team_policy_joint_prob_product():
    pi = UniformPolicy(2)
    pol = LiftedTeamPolicy(pi, 4, 2)
    mu = EmpiricalStateDist(counts=(2, 1, 1), n_agents=4)
    h = TeamActionDist(counts=((1, 1), (1, 0), (0, 1)))
    expected = 0.5 * 0.5 * 0.5  # C(2,1)/4 * 1/2 * 1/2
    assert abs(pol.joint_prob(mu, h) - expected) < 1e-12


def test_named_policy_registry():
    pi = make_individual_policy("occupancy_adaptive", 2)
    assert isinstance(pi, OccupancyAdaptivePolicy)
    assert pi(0, Fraction(1, 4)) == (Fraction(1, 4), Fraction(3, 4))
    with pytest.raises(ValueError, match="unknown individual policy"):
        make_individual_policy("nope", 2)
