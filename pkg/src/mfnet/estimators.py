"""Sklearn-style estimator fronts for the two trainers.

Hyperparameters live in __init__ (so get_params/set_params and clone work),
fit consumes a ProblemInstance, and learned state lands in trailing-underscore
attributes. The functional core stays in mfnet.training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .env import EmpiricalStateDist, InitialDistribution, ModelSpec, TeamActionDist
from .graph import StateGraph
from .oracle import ExactOracle
from .policies import EnergyTeamPolicy, TeamPolicy
from .training import TrainerConfig, actor_train, critic_train


@dataclass(frozen=True)
class ProblemInstance:
    """A graph, a model over it, and the initial distribution P0."""

    graph: StateGraph
    model: ModelSpec
    p0: InitialDistribution


def _as_config(est, **extra) -> TrainerConfig:
    base = dict(
        width=est.width,
        radius=est.radius,
        k=est.k,
        burn_in=est.burn_in,
        eta_critic=est.eta_critic,
    )
    base.update(extra)
    return TrainerConfig(**base)


class NeuralTDCritic(BaseEstimator):
    """Localized neural TD evaluation of a fixed team policy.

    Parameters mirror the Algorithm-1 inputs: net width, projection radius,
    iteration count, learning rate (None uses min{(1-gamma)/8, T^-1/2}),
    localization radius k (None uses the graph diameter), and chain burn-in.
    """

    def __init__(
        self,
        width: int = 512,
        radius: float = 40.0,
        n_iters: int = 20_000,
        eta_critic: Optional[float] = None,
        k: Optional[int] = None,
        burn_in: int = 200,
        seed: int = 0,
    ):
        self.width = width
        self.radius = radius
        self.n_iters = n_iters
        self.eta_critic = eta_critic
        self.k = k
        self.burn_in = burn_in
        self.seed = seed

    def fit(self, instance: ProblemInstance, policy: TeamPolicy) -> "NeuralTDCritic":
        self.critic_ = critic_train(
            instance.model,
            instance.graph,
            policy,
            _as_config(self, t_critic=self.n_iters),
            seed=self.seed,
            p0=instance.p0,
        )
        self.k_ = self.critic_.k
        self.mean_sq_residual_ = self.critic_.mean_sq_residual
        return self

    def q_value(self, s: int, mu: EmpiricalStateDist, h: TeamActionDist) -> float:
        return self.critic_.q_value(s, mu, h)

    def predict(
        self, pairs: Sequence[tuple[EmpiricalStateDist, TeamActionDist]]
    ) -> np.ndarray:
        """Per-state critic values for each (mu, h) pair; shape (n, n_states)."""
        n_states = len(self.critic_.nets)
        out = np.empty((len(pairs), n_states))
        fns = [self.critic_.q_fn(s) for s in range(n_states)]
        for i, (mu, h) in enumerate(pairs):
            for s in range(n_states):
                out[i, s] = fns[s](mu, h)
        return out


class NeuralActorCritic(BaseEstimator):
    """Localized neural actor-critic over energy-based team policies."""

    def __init__(
        self,
        width: int = 64,
        radius: float = 40.0,
        tau: float = 1.0,
        k: Optional[int] = None,
        n_actor_iters: int = 50,
        n_critic_iters: int = 2_000,
        batch: int = 256,
        eta_actor: Optional[float] = None,
        eta_critic: Optional[float] = None,
        burn_in: int = 50,
        restart_warmup: int = 10,
        track_exact_j: bool = True,
        seed: int = 0,
    ):
        self.width = width
        self.radius = radius
        self.tau = tau
        self.k = k
        self.n_actor_iters = n_actor_iters
        self.n_critic_iters = n_critic_iters
        self.batch = batch
        self.eta_actor = eta_actor
        self.eta_critic = eta_critic
        self.burn_in = burn_in
        self.restart_warmup = restart_warmup
        self.track_exact_j = track_exact_j
        self.seed = seed

    def fit(self, instance: ProblemInstance) -> "NeuralActorCritic":
        cfg = _as_config(
            self,
            tau=self.tau,
            t_actor=self.n_actor_iters,
            t_critic=self.n_critic_iters,
            batch=self.batch,
            eta_actor=self.eta_actor,
            restart_warmup=self.restart_warmup,
        )
        oracle = ExactOracle(instance.model, instance.graph) if self.track_exact_j else None
        result = actor_train(
            instance.model, instance.graph, cfg, seed=self.seed, p0=instance.p0,
            oracle=oracle,
        )
        self.result_ = result
        self.params_ = result.params
        self.j_history_ = list(result.j_values)
        self.best_iteration_ = result.best_iteration
        self.n_actions_ = instance.model.n_actions
        self.n_agents_ = instance.model.n_agents
        return self

    def policy(self) -> EnergyTeamPolicy:
        """The final trained team policy."""
        return EnergyTeamPolicy(self.params_, self.n_agents_, self.n_actions_)

    def sample_actions(
        self, mu: EmpiricalStateDist, rng: np.random.Generator
    ) -> TeamActionDist:
        return self.policy().sample(mu, rng)
