"""Individual policies, their multinomial lift to team policies, and the
energy-based (softmax) team policy driven by per-state two-layer nets.

A lifted team policy draws, for each state, the empirical action counts of
N*mu(s) i.i.d. individual draws; the induced pmf over count vectors is
multinomial. The energy policy instead softmaxes net energies over the full
per-state candidate set of count vectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from math import factorial
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .enumeration import compositions, n_compositions
from .env import EmpiricalStateDist, TeamActionDist
from .errors import CapExceededError
from .nets import TwoLayerNet, centered_feature, encode_window, forward_many

DEFAULT_CANDIDATE_CAP = 20_000

# An individual policy maps (state, mu(s)) to a pmf over actions.
IndividualPolicyFn = Callable[[int, Fraction], Sequence]


# ---------------------------------------------------------------------------
# Named individual policies
# ---------------------------------------------------------------------------


class UniformPolicy:
    name = "uniform"

    def __init__(self, n_actions: int):
        self.n_actions = n_actions
        self.params = {}

    def __call__(self, s, mu_s):
        return tuple(Fraction(1, self.n_actions) for _ in range(self.n_actions))


class PreferFirstPolicy:
    """Probability p on action 0, remainder split evenly."""

    name = "prefer_first"

    def __init__(self, n_actions: int, p: float = 0.75):
        self.n_actions = n_actions
        self.p = Fraction(str(p))
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        self.params = {"p": p}

    def __call__(self, s, mu_s):
        if self.n_actions == 1:
            return (Fraction(1),)
        rest = (1 - self.p) / (self.n_actions - 1)
        return (self.p,) + tuple(rest for _ in range(self.n_actions - 1))


class OccupancyAdaptivePolicy:
    """Action 0 with probability mu(s): crowding raises the stay tendency."""

    name = "occupancy_adaptive"

    def __init__(self, n_actions: int):
        self.n_actions = n_actions
        self.params = {}

    def __call__(self, s, mu_s):
        stay = Fraction(mu_s)
        if self.n_actions == 1:
            return (Fraction(1),)
        rest = (1 - stay) / (self.n_actions - 1)
        return (stay,) + tuple(rest for _ in range(self.n_actions - 1))


INDIVIDUAL_POLICIES = {
    "uniform": UniformPolicy,
    "prefer_first": PreferFirstPolicy,
    "occupancy_adaptive": OccupancyAdaptivePolicy,
}


def make_individual_policy(name: str, n_actions: int, params: Optional[dict] = None):
    if name not in INDIVIDUAL_POLICIES:
        raise ValueError(
            f"unknown individual policy {name!r}; options: {sorted(INDIVIDUAL_POLICIES)}"
        )
    return INDIVIDUAL_POLICIES[name](n_actions=n_actions, **(params or {}))


def _check_pmf(probs: Sequence) -> None:
    if any(p < 0 for p in probs):
        raise ValueError("policy pmf has a negative entry")
    total = sum(probs)
    if isinstance(total, Fraction):
        ok = total == 1
    else:
        ok = abs(float(total) - 1.0) <= 1e-9
    if not ok:
        raise ValueError(f"policy pmf sums to {float(total)}, not 1")


# ---------------------------------------------------------------------------
# Multinomial lift and recovery
# ---------------------------------------------------------------------------


def _occupancy(mu_s, n_agents: int) -> int:
    n = Fraction(mu_s) * n_agents
    if n.denominator != 1 or n < 0:
        raise ValueError(f"mu(s) = {mu_s} is not a multiple of 1/{n_agents}")
    return int(n)


def lift_policy(
    pi: IndividualPolicyFn, s: int, mu_s, n_agents: int
) -> dict[tuple[int, ...], Fraction]:
    """Multinomial pmf over action-count vectors for the N*mu(s) agents at s.

    Exact when the individual pmf is exact; zero occupancy gives a point mass
    on the all-zero count vector.
    """
    n = _occupancy(mu_s, n_agents)
    probs = tuple(pi(s, Fraction(mu_s)))
    _check_pmf(probs)
    out: dict[tuple[int, ...], Fraction] = {}
    for counts in compositions(n, len(probs)):
        coef = factorial(n)
        for c in counts:
            coef //= factorial(c)
        p = coef
        for c, q in zip(counts, probs):
            p = p * q ** c  # q ** 0 == 1 even for q == 0
        out[counts] = p
    return out


def recover_individual(
    Pi_s: Mapping[tuple[int, ...], float], mu_s, n_agents: int
) -> tuple[float, ...]:
    """Invert a lift by querying the all-one-action count vectors.

    pi(a) = Pi_s(n * delta_a)^(1/n). Raises if the recovered vector fails to
    sum to 1 within 1e-6 (the input was not a multinomial lift); renormalizes
    with a warning when the drift is merely numerical (above 1e-12).
    """
    n = _occupancy(mu_s, n_agents)
    if n < 1:
        raise ValueError("cannot recover a policy from an empty state")
    n_actions = len(next(iter(Pi_s)))
    probs = []
    for a in range(n_actions):
        dirac = tuple(n if i == a else 0 for i in range(n_actions))
        p = float(Pi_s.get(dirac, 0.0))
        probs.append(p ** (1.0 / n))
    total = sum(probs)
    if abs(total - 1.0) > 1e-6:
        raise ValueError(
            f"recovered pmf sums to {total}: input is not a multinomial lift"
        )
    if abs(total - 1.0) > 1e-12:
        warnings.warn(
            f"recovered pmf renormalized (drift {total - 1.0:.3e})", stacklevel=2
        )
        probs = [p / total for p in probs]
    return tuple(probs)


def _draw_counts(probs: Sequence, n: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Counts of n i.i.d. categorical draws; one uniform per agent, inverse CDF."""
    cum = np.cumsum([float(p) for p in probs])
    counts = [0] * len(cum)
    for u in rng.random(n):
        j = int(np.searchsorted(cum, u, side="right"))
        counts[min(j, len(cum) - 1)] += 1
    return tuple(counts)


def draw_profile_actions(
    pi: IndividualPolicyFn,
    states: Sequence[int],
    mu: EmpiricalStateDist,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    """Independent action draws for explicit agents, one uniform per agent in order."""
    cums: dict[int, np.ndarray] = {}
    actions = []
    u = rng.random(len(states))
    for i, s in enumerate(states):
        if s not in cums:
            probs = tuple(pi(s, mu.mu(s)))
            _check_pmf(probs)
            cums[s] = np.cumsum([float(p) for p in probs])
        cum = cums[s]
        j = int(np.searchsorted(cum, u[i], side="right"))
        actions.append(min(j, len(cum) - 1))
    return tuple(actions)


def sample_team_action(
    pi: IndividualPolicyFn,
    mu: EmpiricalStateDist,
    n_actions: int,
    rng: np.random.Generator,
) -> TeamActionDist:
    """One multinomial draw per state (realized agent by agent, states in order)."""
    rows = []
    for s, c in enumerate(mu.counts):
        if c == 0:
            rows.append(tuple([0] * n_actions))
            continue
        probs = tuple(pi(s, mu.mu(s)))
        _check_pmf(probs)
        rows.append(_draw_counts(probs, c, rng))
    return TeamActionDist(counts=tuple(rows))


# ---------------------------------------------------------------------------
# Energy-based team policy
# ---------------------------------------------------------------------------


@dataclass
class EnergyPolicyParams:
    """Per-state actor nets theta_s plus the softmax temperature."""

    nets: tuple[TwoLayerNet, ...]
    tau: float

    @property
    def n_states(self) -> int:
        return len(self.nets)


def candidate_rows(n: int, n_actions: int, cap: int = DEFAULT_CANDIDATE_CAP):
    if n_compositions(n, n_actions) > cap:
        raise CapExceededError(
            f"candidate set for occupancy {n} with {n_actions} actions has "
            f"{n_compositions(n, n_actions)} elements, above the cap {cap}"
        )
    return compositions(n, n_actions)


def _encode_candidates(mu_s, candidates, n: int) -> np.ndarray:
    xs = []
    for counts in candidates:
        if n == 0:
            props = [0.0] * len(counts)
        else:
            props = [c / n for c in counts]
        xs.append(encode_window([mu_s], [props]))
    return np.asarray(xs)


def softmax_pmf(energies: np.ndarray) -> np.ndarray:
    """Numerically stable softmax; invariant to adding a constant."""
    z = energies - energies.max()
    expz = np.exp(z)
    return expz / expz.sum()


def energy_policy_pmf(
    params: EnergyPolicyParams,
    s: int,
    mu_s,
    n_agents: int,
    n_actions: int,
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> tuple[tuple[tuple[int, ...], ...], np.ndarray]:
    """Softmax over the per-state candidate count vectors, max-subtracted.

    Returns (candidates, probabilities) in enumeration order.
    """
    n = _occupancy(mu_s, n_agents)
    candidates = candidate_rows(n, n_actions, cap)
    if len(candidates) == 1:
        return candidates, np.array([1.0])
    xs = _encode_candidates(float(Fraction(mu_s)), candidates, n)
    energies = params.tau * forward_many(params.nets[s], xs)
    return candidates, softmax_pmf(energies)


def sample_energy_policy(
    params: EnergyPolicyParams,
    mu: EmpiricalStateDist,
    n_actions: int,
    rng: np.random.Generator,
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> TeamActionDist:
    """Inverse-CDF draw of h(s) from the energy pmf, independently per state."""
    rows = []
    for s, c in enumerate(mu.counts):
        candidates, probs = energy_policy_pmf(
            params, s, mu.mu(s), mu.n_agents, n_actions, cap
        )
        if len(candidates) == 1:
            rows.append(candidates[0])
            continue
        cum = np.cumsum(probs)
        j = int(np.searchsorted(cum, rng.random(), side="right"))
        rows.append(candidates[min(j, len(candidates) - 1)])
    return TeamActionDist(counts=tuple(rows))


def log_policy_grad(
    params: EnergyPolicyParams,
    s: int,
    mu: EmpiricalStateDist,
    h: TeamActionDist,
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> np.ndarray:
    """Gradient of log Pi_s at (mu, h) in theta_s: tau times the centered feature."""
    return params.tau * centered_policy_feature(params, s, mu, h, cap)


def centered_policy_feature(
    params: EnergyPolicyParams,
    s: int,
    mu: EmpiricalStateDist,
    h: TeamActionDist,
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> np.ndarray:
    """Phi(theta, s, mu, h): feature at the realized h(s), centered by the
    exact expectation over the candidate set under the current policy."""
    n_actions = len(h.counts[s])
    n = mu.counts[s]
    candidates, probs = energy_policy_pmf(
        params, s, mu.mu(s), mu.n_agents, n_actions, cap
    )
    xs = _encode_candidates(float(mu.mu(s)), candidates, n)
    x = xs[candidates.index(tuple(h.counts[s]))]
    return centered_feature(params.nets[s], x, xs, probs)


# ---------------------------------------------------------------------------
# Team policy objects (shared interface for samplers and the exact oracle)
# ---------------------------------------------------------------------------


class TeamPolicy:
    """Product-form team policy: a pmf over count vectors per (state, occupancy)."""

    n_agents: int
    n_actions: int

    def state_pmf(self, s: int, n: int):
        """(candidates, float probabilities) for occupancy n at state s."""
        raise NotImplementedError

    def sample_state(self, s: int, n: int, rng: np.random.Generator) -> tuple[int, ...]:
        raise NotImplementedError

    def sample(self, mu: EmpiricalStateDist, rng: np.random.Generator) -> TeamActionDist:
        rows = [self.sample_state(s, c, rng) for s, c in enumerate(mu.counts)]
        return TeamActionDist(counts=tuple(rows))

    def joint_prob(self, mu: EmpiricalStateDist, h: TeamActionDist) -> float:
        p = 1.0
        for s, c in enumerate(mu.counts):
            candidates, probs = self.state_pmf(s, c)
            p *= float(probs[candidates.index(tuple(h.counts[s]))])
        return p


class LiftedTeamPolicy(TeamPolicy):
    """Multinomial lift of an individual policy."""

    def __init__(self, pi: IndividualPolicyFn, n_agents: int, n_actions: int):
        self.pi = pi
        self.n_agents = n_agents
        self.n_actions = n_actions
        self._pmf_cache: dict[tuple[int, int], tuple] = {}
        self._cum_cache: dict[tuple[int, int], np.ndarray] = {}

    def state_pmf(self, s: int, n: int):
        key = (s, n)
        if key not in self._pmf_cache:
            lifted = lift_policy(self.pi, s, Fraction(n, self.n_agents), self.n_agents)
            candidates = tuple(lifted)
            probs = np.array([float(p) for p in lifted.values()])
            self._pmf_cache[key] = (candidates, probs)
        return self._pmf_cache[key]

    def _action_cum(self, s: int, n: int) -> np.ndarray:
        key = (s, n)
        cum = self._cum_cache.get(key)
        if cum is None:
            probs = tuple(self.pi(s, Fraction(n, self.n_agents)))
            _check_pmf(probs)
            cum = np.cumsum([float(p) for p in probs])
            self._cum_cache[key] = cum
        return cum

    def sample_state(self, s, n, rng):
        if n == 0:
            return tuple([0] * self.n_actions)
        cum = self._action_cum(s, n)
        counts = [0] * self.n_actions
        last = self.n_actions - 1
        for u in rng.random(n):
            counts[min(int(np.searchsorted(cum, u, side="right")), last)] += 1
        return tuple(counts)

    def sample(self, mu, rng):
        # same draw-by-draw realization as sample_team_action, with cached CDFs
        rows = [self.sample_state(s, c, rng) for s, c in enumerate(mu.counts)]
        return TeamActionDist(counts=tuple(rows))


class EnergyTeamPolicy(TeamPolicy):
    """Softmax team policy; per-(state, occupancy) pmfs are cached, so treat the
    underlying parameters as frozen while this object is in use."""

    def __init__(
        self,
        params: EnergyPolicyParams,
        n_agents: int,
        n_actions: int,
        cap: int = DEFAULT_CANDIDATE_CAP,
    ):
        self.params = params
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.cap = cap
        self._pmf_cache: dict[tuple[int, int], tuple] = {}

    def state_pmf(self, s: int, n: int):
        key = (s, n)
        if key not in self._pmf_cache:
            candidates, probs = energy_policy_pmf(
                self.params, s, Fraction(n, self.n_agents), self.n_agents,
                self.n_actions, self.cap,
            )
            self._pmf_cache[key] = (candidates, probs, np.cumsum(probs))
        candidates, probs, _ = self._pmf_cache[key]
        return candidates, probs

    def sample_state(self, s, n, rng):
        self.state_pmf(s, n)
        candidates, probs, cum = self._pmf_cache[(s, n)]
        if len(candidates) == 1:
            return candidates[0]
        j = int(np.searchsorted(cum, rng.random(), side="right"))
        return candidates[min(j, len(candidates) - 1)]
