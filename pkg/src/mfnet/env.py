"""Networked mean-field environment.

Holds the model primitives (reward, transition kernel, discount), the exact
count-based representations of the empirical state distribution mu and the
team action distribution h, the agent-level stepper, the induced team-level
stepper, and the localized team rewards.

Counts are integers and proportions are Fractions; floats appear only at the
neural-net input boundary and inside iterative solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .enumeration import compositions
from .errors import ModelValidityError
from .graph import StateGraph, Window, k_hop, restrict

KERNEL_SUM_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalStateDist:
    """Occupancy counts of N agents over states; mu(s) = counts[s]/N."""

    counts: tuple[int, ...]
    n_agents: int

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError("negative occupancy count")
        if sum(self.counts) != self.n_agents:
            raise ValueError(
                f"counts sum {sum(self.counts)} != n_agents {self.n_agents}"
            )

    def mu(self, s: int) -> Fraction:
        return Fraction(self.counts[s], self.n_agents)

    def mu_vector(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(c, self.n_agents) for c in self.counts)


@dataclass(frozen=True)
class TeamActionDist:
    """Per-state action counts; row s sums to the occupancy of s."""

    counts: tuple[tuple[int, ...], ...]

    def occupancy(self, s: int) -> int:
        return sum(self.counts[s])

    def proportions(self, s: int) -> tuple[Fraction, ...]:
        """h(s) as exact proportions; all-zero for an empty state."""
        n = self.occupancy(s)
        if n == 0:
            return tuple(Fraction(0) for _ in self.counts[s])
        return tuple(Fraction(c, n) for c in self.counts[s])


def check_compatible(mu: EmpiricalStateDist, h: TeamActionDist) -> None:
    if len(h.counts) != len(mu.counts):
        raise ValueError("state dimension mismatch between mu and h")
    for s, row in enumerate(h.counts):
        if any(c < 0 for c in row):
            raise ValueError("negative action count")
        if sum(row) != mu.counts[s]:
            raise ValueError(
                f"action counts at state {s} sum to {sum(row)}, occupancy is {mu.counts[s]}"
            )


@dataclass(frozen=True)
class AgentProfile:
    """Explicit per-agent states (and optionally actions); order is arbitrary."""

    states: tuple[int, ...]
    actions: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.actions is not None and len(self.actions) != len(self.states):
            raise ValueError("actions length must match states length")

    @property
    def n_agents(self) -> int:
        return len(self.states)


# A kernel returns {destination state index: probability}; support must lie in
# the 1-hop window. A reward returns a number in [-r_max, r_max]. Both receive
# the 1-hop window of s and the restriction of mu to it.
KernelFn = Callable[[int, Window, Sequence[Fraction], int], Mapping[int, Fraction]]
RewardFn = Callable[[int, Window, Sequence[Fraction], int], float]


@dataclass(frozen=True)
class ModelSpec:
    reward: RewardFn
    kernel: KernelFn
    gamma: float
    n_agents: int
    actions: tuple
    r_max: float
    reward_name: str = "custom"
    reward_params: dict = field(default_factory=dict)
    kernel_name: str = "custom"
    kernel_params: dict = field(default_factory=dict)
    kernel_mu_independent: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")

    @property
    def n_actions(self) -> int:
        return len(self.actions)


# ---------------------------------------------------------------------------
# Named built-in rewards and kernels (selected by config for reproducibility)
# ---------------------------------------------------------------------------


class CongestionReward:
    """r = 1 - mu(s): being in a crowded state pays less."""

    name = "congestion"

    def __init__(self):
        self.params = {}

    def __call__(self, s, window, mu_window, a):
        return 1 - mu_window[window.members.index(s)]


class ActionIndicatorReward:
    """r = 1 if the chosen action index equals `target` else 0."""

    name = "action_indicator"

    def __init__(self, target: int = 0):
        self.target = target
        self.params = {"target": target}

    def __call__(self, s, window, mu_window, a):
        return 1 if a == self.target else 0


class ConstantReward:
    name = "constant"

    def __init__(self, value: float = 1.0):
        self.value = value
        self.params = {"value": value}

    def __call__(self, s, window, mu_window, a):
        return self.value


class StaySpreadKernel:
    """Action 0 stays put; any other action jumps uniformly to a strict neighbor."""

    name = "stay_spread"
    mu_independent = True

    def __init__(self):
        self.params = {}

    def __call__(self, s, window, mu_window, a):
        if a == 0:
            return {s: Fraction(1)}
        neighbors = [t for t in window.members if t != s]
        if not neighbors:
            return {s: Fraction(1)}
        p = Fraction(1, len(neighbors))
        return {t: p for t in neighbors}


class DriftKernel:
    """Stay with probability 1 - p_move, otherwise uniform over strict neighbors."""

    name = "drift"
    mu_independent = True

    def __init__(self, p_move: float = 0.5):
        self.p_move = Fraction(str(p_move))
        if not 0 <= self.p_move <= 1:
            raise ValueError("p_move must lie in [0, 1]")
        self.params = {"p_move": p_move}

    def __call__(self, s, window, mu_window, a):
        neighbors = [t for t in window.members if t != s]
        if not neighbors:
            return {s: Fraction(1)}
        out = {s: 1 - self.p_move}
        share = self.p_move / len(neighbors)
        for t in neighbors:
            out[t] = share
        return out


class CrowdAverseKernel:
    """Action 0 stays; other actions move to neighbors weighted by 1 - mu(neighbor)."""

    name = "crowd_averse"
    mu_independent = False

    def __init__(self):
        self.params = {}

    def __call__(self, s, window, mu_window, a):
        if a == 0:
            return {s: Fraction(1)}
        weights = {
            t: 1 - mu_window[i]
            for i, t in enumerate(window.members)
            if t != s
        }
        total = sum(weights.values())
        if total == 0:
            return {s: Fraction(1)}
        return {t: w / total for t, w in weights.items() if w != 0}


class BadTeleportKernel:
    """Deliberately invalid: puts mass on a non-neighbor. Used by negative tests."""

    name = "bad_teleport"
    mu_independent = True

    def __init__(self):
        self.params = {}

    def __call__(self, s, window, mu_window, a):
        far = [t for t in range(max(window.members) + 2) if t not in window.members]
        target = far[0] if far else s
        return {s: Fraction(1, 2), target: Fraction(1, 2)}


REWARDS = {
    "congestion": CongestionReward,
    "action_indicator": ActionIndicatorReward,
    "constant": ConstantReward,
}

KERNELS = {
    "stay_spread": StaySpreadKernel,
    "drift": DriftKernel,
    "crowd_averse": CrowdAverseKernel,
    "bad_teleport": BadTeleportKernel,
}


def make_reward(name: str, params: Optional[dict] = None) -> RewardFn:
    if name not in REWARDS:
        raise ValueError(f"unknown reward {name!r}; options: {sorted(REWARDS)}")
    return REWARDS[name](**(params or {}))


def make_kernel(name: str, params: Optional[dict] = None) -> KernelFn:
    if name not in KERNELS:
        raise ValueError(f"unknown kernel {name!r}; options: {sorted(KERNELS)}")
    return KERNELS[name](**(params or {}))


def make_model(
    graph: StateGraph,
    reward_name: str = "congestion",
    reward_params: Optional[dict] = None,
    kernel_name: str = "stay_spread",
    kernel_params: Optional[dict] = None,
    gamma: float = 0.5,
    n_agents: int = 4,
    actions: Sequence = ("stay", "spread"),
    r_max: float = 1.0,
) -> ModelSpec:
    reward = make_reward(reward_name, reward_params)
    kernel = make_kernel(kernel_name, kernel_params)
    return ModelSpec(
        reward=reward,
        kernel=kernel,
        gamma=gamma,
        n_agents=n_agents,
        actions=tuple(actions),
        r_max=r_max,
        reward_name=reward_name,
        reward_params=dict(reward_params or {}),
        kernel_name=kernel_name,
        kernel_params=dict(kernel_params or {}),
        kernel_mu_independent=getattr(kernel, "mu_independent", False),
    )


def line3_model(**overrides) -> tuple[StateGraph, ModelSpec]:
    """The canonical desk instance: 3-state line, 2 actions, N=4, gamma=0.5."""
    from .graph import build_graph

    g = build_graph([0, 1, 2], [(0, 1), (1, 2)])
    kwargs = dict(
        reward_name="congestion",
        kernel_name="stay_spread",
        gamma=0.5,
        n_agents=4,
        actions=("stay", "spread"),
        r_max=1.0,
    )
    kwargs.update(overrides)
    return g, make_model(g, **kwargs)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def empirical_of(profile: AgentProfile, n_states: int) -> EmpiricalStateDist:
    counts = [0] * n_states
    for s in profile.states:
        counts[s] += 1
    return EmpiricalStateDist(counts=tuple(counts), n_agents=profile.n_agents)


def team_dist_of(profile: AgentProfile, n_states: int, n_actions: int) -> TeamActionDist:
    if profile.actions is None:
        raise ValueError("profile has no actions")
    counts = [[0] * n_actions for _ in range(n_states)]
    for s, a in zip(profile.states, profile.actions):
        counts[s][a] += 1
    return TeamActionDist(counts=tuple(tuple(row) for row in counts))


def kernel_pmf(
    model: ModelSpec, g: StateGraph, s: int, mu: EmpiricalStateDist, a: int
) -> dict[int, Fraction]:
    """Validated transition pmf for one (state, action) under the current mu."""
    window = k_hop(g, s, 1)
    mu_window = restrict(mu.mu_vector(), window)
    pmf = model.kernel(s, window, mu_window, a)
    support = set(window.members)
    for t, p in pmf.items():
        if t not in support:
            raise ModelValidityError(
                f"kernel({model.kernel_name}) puts mass on {t}, outside the "
                f"1-hop neighborhood of {s}"
            )
        if p < 0:
            raise ModelValidityError("kernel probability is negative")
    total = sum(pmf.values())
    if abs(float(total) - 1.0) > KERNEL_SUM_TOL:
        raise ModelValidityError(f"kernel pmf sums to {float(total)}, not 1")
    return dict(pmf)


def agent_reward(
    model: ModelSpec, g: StateGraph, s: int, mu: EmpiricalStateDist, a: int
):
    window = k_hop(g, s, 1)
    mu_window = restrict(mu.mu_vector(), window)
    r = model.reward(s, window, mu_window, a)
    if abs(float(r)) > model.r_max + 1e-12:
        raise ModelValidityError(
            f"reward({model.reward_name}) = {float(r)} exceeds r_max = {model.r_max}"
        )
    return r


def _move_profile(
    model: ModelSpec,
    g: StateGraph,
    states: Sequence[int],
    actions: Sequence[int],
    mu: EmpiricalStateDist,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    """Move every agent independently per the kernel, one uniform per agent.

    Consumes rng.random(n) and resolves each agent by inverse CDF in order, so
    team-level and agent-level steppers sharing a seed stay coupled.
    """
    u = rng.random(len(states))
    cache: dict[tuple[int, int], tuple[list[int], np.ndarray]] = {}
    next_states = []
    for i, (s, a) in enumerate(zip(states, actions)):
        key = (s, a)
        if key not in cache:
            pmf = kernel_pmf(model, g, s, mu, a)
            dests = sorted(pmf)
            cum = np.cumsum([float(pmf[t]) for t in dests])
            cache[key] = (dests, cum)
        dests, cum = cache[key]
        j = int(np.searchsorted(cum, u[i], side="right"))
        next_states.append(dests[min(j, len(dests) - 1)])
    return tuple(next_states)


def agent_step(
    model: ModelSpec, g: StateGraph, profile: AgentProfile, rng: np.random.Generator
) -> tuple[AgentProfile, tuple]:
    """One synchronous step: per-agent rewards, then independent moves."""
    if profile.actions is None:
        raise ValueError("agent_step needs a profile with actions")
    mu = empirical_of(profile, g.n_states)
    rewards = tuple(
        agent_reward(model, g, s, mu, a)
        for s, a in zip(profile.states, profile.actions)
    )
    next_states = _move_profile(model, g, profile.states, profile.actions, mu, rng)
    return AgentProfile(states=next_states), rewards


def canonical_profile(mu: EmpiricalStateDist, h: TeamActionDist) -> AgentProfile:
    """Anonymous agents realizing (mu, h): sorted by state, then action index."""
    check_compatible(mu, h)
    states: list[int] = []
    actions: list[int] = []
    for s, row in enumerate(h.counts):
        for a, c in enumerate(row):
            states.extend([s] * c)
            actions.extend([a] * c)
    return AgentProfile(states=tuple(states), actions=tuple(actions))


def team_sample_step(
    model: ModelSpec,
    g: StateGraph,
    mu: EmpiricalStateDist,
    h: TeamActionDist,
    rng: np.random.Generator,
) -> EmpiricalStateDist:
    """One draw of mu' from the induced team-level transition law.

    Realized by instantiating the canonical anonymous profile and moving each
    agent independently, which keeps it coupled with agent_step under a shared
    seed.
    """
    profile = canonical_profile(mu, h)
    next_states = _move_profile(
        model, g, profile.states, profile.actions, mu, rng
    )
    return empirical_of(AgentProfile(states=next_states), g.n_states)


def local_team_reward(model: ModelSpec, window: Window, mu_window, h_s) -> float:
    """Average reward of the team at window.center: sum_a r(s, mu(N_s), a) h(s)(a).

    h_s is the per-action proportion row; an all-zero row (empty state) gives 0.
    """
    if any(p < 0 for p in h_s):
        raise ValueError("negative proportion in h(s)")
    if all(p == 0 for p in h_s):
        return 0
    s = window.center
    return sum(
        model.reward(s, window, mu_window, a) * p for a, p in enumerate(h_s) if p != 0
    )


def local_rewards(
    model: ModelSpec, g: StateGraph, mu: EmpiricalStateDist, h: TeamActionDist
) -> tuple:
    """r_s for every state, from the 1-hop windows."""
    out = []
    mu_vec = mu.mu_vector()
    for s in range(g.n_states):
        window = k_hop(g, s, 1)
        out.append(
            local_team_reward(model, window, restrict(mu_vec, window), h.proportions(s))
        )
    return tuple(out)


def global_stage_reward(
    model: ModelSpec, g: StateGraph, mu: EmpiricalStateDist, h: TeamActionDist
):
    """Agent-average stage reward: sum_s mu(s) * r_s(mu(N_s), h(s)).

    Equals (1/N) sum_i r(s_i, mu(N_{s_i}), a_i) exactly for any profile
    realizing (mu, h).
    """
    check_compatible(mu, h)
    rs = local_rewards(model, g, mu, h)
    return sum(mu.mu(s) * r for s, r in enumerate(rs) if mu.counts[s] > 0)


@dataclass(frozen=True)
class InitialDistribution:
    """P0 over the quantized mu simplex: a point mass or uniform over all of it."""

    kind: str
    n_agents: int
    n_states: int
    counts: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.kind not in ("point", "uniform"):
            raise ValueError(f"unknown initial distribution kind {self.kind!r}")
        if self.kind == "point":
            if self.counts is None:
                raise ValueError("point initial distribution needs counts")
            EmpiricalStateDist(counts=self.counts, n_agents=self.n_agents)

    def support(self) -> list[tuple[tuple[int, ...], Fraction]]:
        if self.kind == "point":
            return [(self.counts, Fraction(1))]
        mus = compositions(self.n_agents, self.n_states)
        p = Fraction(1, len(mus))
        return [(m, p) for m in mus]

    def sample(self, rng: np.random.Generator) -> EmpiricalStateDist:
        if self.kind == "point":
            return EmpiricalStateDist(counts=self.counts, n_agents=self.n_agents)
        mus = compositions(self.n_agents, self.n_states)
        return EmpiricalStateDist(
            counts=mus[int(rng.integers(len(mus)))], n_agents=self.n_agents
        )


def validate_model(model: ModelSpec, g: StateGraph) -> None:
    """Check every kernel pmf and reward bound over the whole enumerable mu space."""
    for counts in compositions(model.n_agents, g.n_states):
        mu = EmpiricalStateDist(counts=counts, n_agents=model.n_agents)
        for s in range(g.n_states):
            if counts[s] == 0:
                continue
            for a in range(model.n_actions):
                kernel_pmf(model, g, s, mu, a)
                agent_reward(model, g, s, mu, a)
