"""Seeded chain samplers for the joint (mu, h) process.

The trainers draw from one persistent chain after a burn-in (stationary
tuples) or after a restart warm-up (discounted visitation pairs); this is the
rapidly-mixing relaxation of i.i.d. sampling, so consecutive draws are weakly
dependent and histograms carry an O(mixing error) bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import (
    EmpiricalStateDist,
    InitialDistribution,
    ModelSpec,
    TeamActionDist,
    kernel_pmf,
    local_rewards,
)
from .graph import StateGraph
from .policies import TeamPolicy


@dataclass(frozen=True)
class TransitionTuple:
    """One Algorithm-1 sample: (mu, h, per-state team rewards, mu', h')."""

    mu: EmpiricalStateDist
    h: TeamActionDist
    rewards: tuple
    mu_next: EmpiricalStateDist
    h_next: TeamActionDist


class TeamChain:
    """The joint chain mu -> h ~ Pi(.|mu) -> mu' ~ induced kernel -> h' ...

    Moves are realized agent by agent in canonical profile order (state, then
    action), consuming one uniform per agent, so a chain step is bit-coupled
    with env.team_sample_step under a shared generator. Kernel CDFs are cached
    per (state, action, mu restricted to the 1-hop window).
    """

    def __init__(
        self,
        model: ModelSpec,
        g: StateGraph,
        policy: TeamPolicy,
        p0: InitialDistribution,
        rng: np.random.Generator,
    ):
        self.model = model
        self.g = g
        self.policy = policy
        self.p0 = p0
        self.rng = rng
        self._kernel_cache: dict[tuple, tuple[list[int], np.ndarray]] = {}
        self._reward_cache: dict[tuple, tuple] = {}
        self._windows = [g.khop_members(s, 1) for s in range(g.n_states)]
        self.reset()

    def reset(self) -> None:
        self.mu = self.p0.sample(self.rng)
        self.h = self.policy.sample(self.mu, self.rng)

    def _kernel_cum(self, s: int, a: int, mu: EmpiricalStateDist):
        key = (s, a) if self.model.kernel_mu_independent else (
            s, a, tuple(mu.counts[t] for t in self._windows[s])
        )
        hit = self._kernel_cache.get(key)
        if hit is None:
            pmf = kernel_pmf(self.model, self.g, s, mu, a)
            dests = sorted(pmf)
            cum = np.cumsum([float(pmf[t]) for t in dests])
            hit = (dests, cum)
            self._kernel_cache[key] = hit
        return hit

    def _step_mu(self, mu: EmpiricalStateDist, h: TeamActionDist) -> EmpiricalStateDist:
        u = self.rng.random(mu.n_agents)
        counts = [0] * self.g.n_states
        i = 0
        for s, row in enumerate(h.counts):
            for a, c in enumerate(row):
                if c == 0:
                    continue
                dests, cum = self._kernel_cum(s, a, mu)
                last = len(dests) - 1
                for _ in range(c):
                    j = int(np.searchsorted(cum, u[i], side="right"))
                    counts[dests[min(j, last)]] += 1
                    i += 1
        return EmpiricalStateDist(counts=tuple(counts), n_agents=mu.n_agents)

    def step(self) -> None:
        self.mu = self._step_mu(self.mu, self.h)
        self.h = self.policy.sample(self.mu, self.rng)

    def rewards_at(self, mu: EmpiricalStateDist, h: TeamActionDist) -> tuple:
        key = (mu.counts, h.counts)
        hit = self._reward_cache.get(key)
        if hit is None:
            hit = local_rewards(self.model, self.g, mu, h)
            self._reward_cache[key] = hit
        return hit

    def emit_tuple(self) -> TransitionTuple:
        """Advance one step and return the transition that was just taken."""
        mu, h = self.mu, self.h
        rewards = self.rewards_at(mu, h)
        self.step()
        return TransitionTuple(
            mu=mu, h=h, rewards=rewards, mu_next=self.mu, h_next=self.h
        )


class StationaryTupleStream:
    """Burn the chain in once, then emit consecutive transition tuples."""

    def __init__(
        self,
        model: ModelSpec,
        g: StateGraph,
        policy: TeamPolicy,
        p0: InitialDistribution,
        burn_in: int,
        rng: np.random.Generator,
    ):
        if burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        self.chain = TeamChain(model, g, policy, p0, rng)
        for _ in range(burn_in):
            self.chain.step()

    def next_tuple(self) -> TransitionTuple:
        return self.chain.emit_tuple()


def sample_stationary_tuple(
    model: ModelSpec,
    g: StateGraph,
    policy: TeamPolicy,
    p0: InitialDistribution,
    burn_in: int,
    rng: np.random.Generator,
) -> TransitionTuple:
    """One-shot form: a fresh chain rolled burn_in steps, then one tuple."""
    return StationaryTupleStream(model, g, policy, p0, burn_in, rng).next_tuple()


class VisitationSampler:
    """Geometric-restart chain whose stationary law is the discounted
    visitation measure: step the dynamics with probability gamma, restart
    from P0 otherwise. Emissions start after `warmup_restarts` restarts."""

    def __init__(
        self,
        model: ModelSpec,
        g: StateGraph,
        policy: TeamPolicy,
        p0: InitialDistribution,
        rng: np.random.Generator,
        warmup_restarts: int = 10,
    ):
        self.chain = TeamChain(model, g, policy, p0, rng)
        self.rng = rng
        self.gamma = model.gamma
        restarts = 0
        while restarts < warmup_restarts:
            if self._advance():
                restarts += 1

    def _advance(self) -> bool:
        """One restart-chain step; returns True when a restart happened."""
        if self.rng.random() < self.gamma:
            self.chain.step()
            return False
        self.chain.reset()
        return True

    def next_pair(self) -> tuple[EmpiricalStateDist, TeamActionDist]:
        mu, h = self.chain.mu, self.chain.h
        self._advance()
        return mu, h


def sample_visitation_pair(
    model: ModelSpec,
    g: StateGraph,
    policy: TeamPolicy,
    p0: InitialDistribution,
    rng: np.random.Generator,
    warmup_restarts: int = 10,
) -> tuple[EmpiricalStateDist, TeamActionDist]:
    """One-shot form: fresh restart chain, warm up, emit one pair."""
    return VisitationSampler(
        model, g, policy, p0, rng, warmup_restarts=warmup_restarts
    ).next_pair()


def discounted_return_mc(
    model: ModelSpec,
    g: StateGraph,
    policy: TeamPolicy,
    p0: InitialDistribution,
    rng: np.random.Generator,
    n_rollouts: int,
    horizon: int,
) -> tuple[float, float]:
    """Monte Carlo estimate of J (mean, standard error) from team rollouts of
    the agent-average stage reward."""
    from .env import global_stage_reward

    totals = np.empty(n_rollouts)
    chain = TeamChain(model, g, policy, p0, rng)
    stage_cache: dict[tuple, float] = {}
    for r in range(n_rollouts):
        if r:
            chain.reset()
        total = 0.0
        coef = 1.0
        for _ in range(horizon):
            key = (chain.mu.counts, chain.h.counts)
            stage = stage_cache.get(key)
            if stage is None:
                stage = float(global_stage_reward(model, g, chain.mu, chain.h))
                stage_cache[key] = stage
            total += coef * stage
            coef *= model.gamma
            chain.step()
        totals[r] = total
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(n_rollouts))
