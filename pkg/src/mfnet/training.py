"""Localized neural TD critic and localized neural actor-critic.

The critic (per state s) fits a two-layer net to the k-hop windowed inputs
zeta^k_s by projected TD semigradient steps with iterate averaging; the actor
ascends the localized gradient estimate built from the critic outputs of the
k-hop neighbors and the centered policy feature.

Determinism contract: everything is derived from one master seed through
numpy SeedSequence streams keyed by (seed, role, state or iteration), so
per-state updates can run in any order or in parallel and still produce
bit-identical parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .env import (
    EmpiricalStateDist,
    InitialDistribution,
    ModelSpec,
    TeamActionDist,
)
from .graph import StateGraph, k_hop
from .nets import (
    TwoLayerNet,
    clamp_into_ball_,
    encode_window,
    feature_map,
    forward,
    init_net,
    window_input_dim,
)
from .policies import (
    DEFAULT_CANDIDATE_CAP,
    EnergyPolicyParams,
    EnergyTeamPolicy,
    TeamPolicy,
    centered_policy_feature,
)
from .sampling import (
    StationaryTupleStream,
    TransitionTuple,
    VisitationSampler,
    discounted_return_mc,
)

# Stream roles for SeedSequence-derived generators.
_ROLE_CHAIN = 1
_ROLE_CRITIC_INIT = 2
_ROLE_ACTOR_INIT = 3
_ROLE_VISITATION = 4
_ROLE_MCJ = 5


def substream(seed: int, *tags: int) -> np.random.Generator:
    """Named deterministic stream: hash(master seed, tags...)."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(t) for t in tags)))


def default_critic_rate(gamma: float, n_iters: int) -> float:
    return min((1.0 - gamma) / 8.0, n_iters ** -0.5)


@dataclass
class TrainerConfig:
    """Shared hyperparameters for Algorithm-1 / Algorithm-2 runs."""

    width: int = 512
    radius: float = 10.0
    tau: float = 1.0
    k: Optional[int] = None          # None: use the graph diameter
    t_critic: int = 20_000
    t_actor: int = 50
    batch: int = 256
    eta_critic: Optional[float] = None
    eta_actor: Optional[float] = None
    burn_in: int = 200
    restart_warmup: int = 10
    candidate_cap: int = DEFAULT_CANDIDATE_CAP
    oracle_j: bool = True
    mc_j_every: int = 10
    mc_j_rollouts: int = 100
    mc_j_horizon: int = 60

    def resolved_k(self, g: StateGraph) -> int:
        return g.diameter() if self.k is None else self.k

    def validate(self, g: StateGraph) -> None:
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.t_critic < 2:
            raise ValueError("t_critic must be >= 2")
        if self.t_actor < 1:
            raise ValueError("t_actor must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.k is not None and self.k < 0:
            raise ValueError("k must be nonnegative")
        for eta in (self.eta_critic, self.eta_actor):
            if eta is not None and eta <= 0:
                raise ValueError("learning rates must be positive")


# ---------------------------------------------------------------------------
# Critic (Algorithm 1)
# ---------------------------------------------------------------------------


@dataclass
class CriticState:
    """Per-state critic nets, their running averages, and diagnostics."""

    nets: tuple[TwoLayerNet, ...]
    avg_weights: tuple[np.ndarray, ...]
    windows: tuple[tuple[int, ...], ...]
    k: int
    n_agents: int
    step: int = 0
    sq_residuals: Optional[np.ndarray] = None  # (t, n_states) running log
    mean_sq_residual: Optional[np.ndarray] = None

    def encode(self, s: int, mu_counts: Sequence[int], h_counts) -> np.ndarray:
        return encode_tuple_window(
            self.windows[s], self.n_agents, mu_counts, h_counts
        )

    def avg_net(self, s: int) -> TwoLayerNet:
        base = self.nets[s]
        return TwoLayerNet(
            weights=self.avg_weights[s],
            signs=base.signs,
            init_weights=base.init_weights,
            radius=base.radius,
        )

    def q_value(self, s: int, mu: EmpiricalStateDist, h: TeamActionDist) -> float:
        """Averaged-net critic output on the k-hop window of s."""
        return forward(self.avg_net(s), self.encode(s, mu.counts, h.counts))

    def q_fn(self, s: int) -> Callable[[EmpiricalStateDist, TeamActionDist], float]:
        net = self.avg_net(s)

        def q(mu: EmpiricalStateDist, h: TeamActionDist) -> float:
            return forward(net, self.encode(s, mu.counts, h.counts))

        return q


def encode_tuple_window(
    members: tuple[int, ...], n_agents: int, mu_counts, h_counts
) -> np.ndarray:
    """Window restriction of (mu, h) as the canonical net input."""
    mu_props = [mu_counts[t] / n_agents for t in members]
    h_rows = []
    for t in members:
        row = h_counts[t]
        n = sum(row)
        h_rows.append([c / n for c in row] if n else [0.0] * len(row))
    return encode_window(mu_props, h_rows)


def critic_residual(
    net: TwoLayerNet, x: np.ndarray, x_next: np.ndarray, reward: float, gamma: float
) -> float:
    """delta = Q(zeta; w) - r - gamma Q(zeta'; w)."""
    return forward(net, x) - reward - gamma * forward(net, x_next)


def critic_train(
    model: ModelSpec,
    g: StateGraph,
    policy: TeamPolicy,
    cfg: TrainerConfig,
    seed: int,
    p0: InitialDistribution,
    log_residuals: bool = False,
) -> CriticState:
    """Algorithm-1 critic: one shared tuple per iteration feeds every state;
    per-state projected TD steps with iterate averaging."""
    cfg.validate(g)
    k = cfg.resolved_k(g)
    gamma = model.gamma
    eta = cfg.eta_critic or default_critic_rate(gamma, cfg.t_critic)
    windows = tuple(g.khop_members(s, k) for s in range(g.n_states))
    nets = tuple(
        init_net(
            cfg.width,
            window_input_dim(len(windows[s]), model.n_actions),
            substream(seed, _ROLE_CRITIC_INIT, s),
            radius=cfg.radius,
        )
        for s in range(g.n_states)
    )
    avg = tuple(net.weights.copy() for net in nets)
    state = CriticState(
        nets=nets, avg_weights=avg, windows=windows, k=k, n_agents=model.n_agents
    )
    stream = StationaryTupleStream(
        model, g, policy, p0, cfg.burn_in, substream(seed, _ROLE_CHAIN)
    )
    n_iters = cfg.t_critic - 1
    log = np.empty((n_iters, g.n_states)) if log_residuals else None
    sq_sum = np.zeros(g.n_states)
    for t in range(n_iters):
        tup = stream.next_tuple()
        for s in range(g.n_states):
            delta = critic_update_state(state, s, tup, gamma, eta, t)
            sq_sum[s] += delta * delta
            if log is not None:
                log[t, s] = delta * delta
        state.step = t + 1
    state.sq_residuals = log
    state.mean_sq_residual = sq_sum / max(n_iters, 1)
    return state


def critic_update_state(
    state: CriticState,
    s: int,
    tup: TransitionTuple,
    gamma: float,
    eta: float,
    t: int,
) -> float:
    """One projected TD step for one state; returns the residual."""
    net = state.nets[s]
    x = state.encode(s, tup.mu.counts, tup.h.counts)
    x_next = state.encode(s, tup.mu_next.counts, tup.h_next.counts)
    delta = critic_residual(net, x, x_next, float(tup.rewards[s]), gamma)
    net.weights -= eta * delta * feature_map(net, x)
    clamp_into_ball_(net)
    avg = state.avg_weights[s]
    avg += (net.weights - avg) / (t + 2.0)
    return delta


# ---------------------------------------------------------------------------
# Localized gradient estimator and actor (Algorithm 2)
# ---------------------------------------------------------------------------


def ghat_estimate(
    batch: Sequence[tuple[EmpiricalStateDist, TeamActionDist]],
    q_fns: Mapping[int, Callable],
    params: EnergyPolicyParams,
    g: StateGraph,
    s: int,
    k: int,
    gamma: float,
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> np.ndarray:
    """Batch estimator of the localized policy gradient for state s:
    (tau / ((1-gamma) B)) sum_l [sum_{y in N^k_s} Q_y(window_y)] Phi(theta, s, .).

    q_fns maps each neighbor y to a window-reading critic; only k-hop windows
    of each sample are touched.
    """
    if not batch:
        raise ValueError("empty batch")
    members = k_hop(g, s, k).members
    total = None
    for mu, h in batch:
        qsum = 0.0
        for y in members:
            qsum += float(q_fns[y](mu, h))
        phi = centered_policy_feature(params, s, mu, h, cap)
        contrib = qsum * phi
        total = contrib if total is None else total + contrib
    return params.tau / ((1.0 - gamma) * len(batch)) * total


@dataclass
class ActorResult:
    params: EnergyPolicyParams
    j_values: list[float] = field(default_factory=list)
    j_kind: str = "exact"
    theta_snapshots: list[tuple[np.ndarray, ...]] = field(default_factory=list)
    critic_residuals: list[np.ndarray] = field(default_factory=list)
    durations: list[float] = field(default_factory=list)

    @property
    def best_iteration(self) -> int:
        known = [(j, i) for i, j in enumerate(self.j_values) if not np.isnan(j)]
        return max(known)[1]

    @property
    def best_j(self) -> float:
        return float(np.nanmax(self.j_values))


def init_actor_params(
    model: ModelSpec, g: StateGraph, cfg: TrainerConfig, seed: int
) -> EnergyPolicyParams:
    d = window_input_dim(1, model.n_actions)
    nets = tuple(
        init_net(cfg.width, d, substream(seed, _ROLE_ACTOR_INIT, s), radius=cfg.radius)
        for s in range(g.n_states)
    )
    return EnergyPolicyParams(nets=nets, tau=cfg.tau)


def actor_train(
    model: ModelSpec,
    g: StateGraph,
    cfg: TrainerConfig,
    seed: int,
    p0: InitialDistribution,
    oracle=None,
) -> ActorResult:
    """Algorithm-2 actor-critic. Records J(theta(t)) for each iterate: exactly
    when an oracle is supplied, by Monte Carlo every `mc_j_every` iterations
    otherwise (missing entries are NaN)."""
    cfg.validate(g)
    k = cfg.resolved_k(g)
    gamma = model.gamma
    eta_actor = cfg.eta_actor or cfg.t_actor ** -0.5
    params = init_actor_params(model, g, cfg, seed)
    result = ActorResult(params=params, j_kind="exact" if oracle else "monte-carlo")
    for t in range(1, cfg.t_actor + 1):
        tic = time.perf_counter()
        policy = EnergyTeamPolicy(
            params, model.n_agents, model.n_actions, cap=cfg.candidate_cap
        )
        result.theta_snapshots.append(
            tuple(net.weights.copy() for net in params.nets)
        )
        if oracle is not None:
            result.j_values.append(oracle.exact_j(policy, p0))
        elif (t - 1) % cfg.mc_j_every == 0:
            j, _ = discounted_return_mc(
                model, g, policy, p0, substream(seed, _ROLE_MCJ, t),
                cfg.mc_j_rollouts, cfg.mc_j_horizon,
            )
            result.j_values.append(j)
        else:
            result.j_values.append(float("nan"))

        critic_seed = int(substream(seed, _ROLE_CRITIC_INIT, t).integers(2 ** 31))
        critic = critic_train(model, g, policy, cfg, critic_seed, p0)
        result.critic_residuals.append(critic.mean_sq_residual)
        sampler = VisitationSampler(
            model, g, policy, p0, substream(seed, _ROLE_VISITATION, t),
            warmup_restarts=cfg.restart_warmup,
        )
        batch = [sampler.next_pair() for _ in range(cfg.batch)]
        q_fns = {y: critic.q_fn(y) for y in range(g.n_states)}
        for s in range(g.n_states):
            grad = ghat_estimate(
                batch, q_fns, params, g, s, k, gamma, cap=cfg.candidate_cap
            )
            net = params.nets[s]
            net.weights += eta_actor * grad
            clamp_into_ball_(net)
        result.durations.append(time.perf_counter() - tic)
    return result
