"""Brute-force ground truth on enumerable instances.

Everything here is exact up to stated fixed-point tolerances: the lifted
state-action space, the induced team transition law (exact rationals), policy
and optimal Q tables, stationary and discounted visitation measures, policy
gradients, exponential-decay gaps, and truncated (windowed) Q tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import factorial
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .enumeration import compositions, n_compositions
from .env import (
    EmpiricalStateDist,
    InitialDistribution,
    ModelSpec,
    TeamActionDist,
    kernel_pmf,
    local_team_reward,
)
from .errors import CapExceededError, StationaryConvergenceError
from .graph import StateGraph, k_hop, restrict
from .policies import EnergyPolicyParams, TeamPolicy, centered_policy_feature

DEFAULT_XI_CAP = 200_000
DEFAULT_TOL = 1e-8


# ---------------------------------------------------------------------------
# The lifted state-action space
# ---------------------------------------------------------------------------


@dataclass
class XiSpace:
    """Dense enumeration of all (mu, h) pairs with index bijection."""

    n_agents: int
    n_states: int
    n_actions: int
    mus: tuple[tuple[int, ...], ...]
    h_blocks: tuple[tuple[tuple[tuple[int, ...], ...], ...], ...]
    offsets: np.ndarray  # offsets[i] = first xi id of mu block i; len n_mus + 1

    @property
    def n_xi(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_mus(self) -> int:
        return len(self.mus)

    def __post_init__(self):
        self._mu_index = {m: i for i, m in enumerate(self.mus)}
        self._h_index = [
            {h: j for j, h in enumerate(block)} for block in self.h_blocks
        ]
        mu_of = np.empty(self.n_xi, dtype=np.int64)
        for i in range(self.n_mus):
            mu_of[self.offsets[i]: self.offsets[i + 1]] = i
        self._mu_of_xi = mu_of

    @property
    def mu_of_xi(self) -> np.ndarray:
        return self._mu_of_xi

    def mu_index(self, counts: tuple[int, ...]) -> int:
        return self._mu_index[tuple(counts)]

    def index(self, mu_counts, h_counts) -> int:
        i = self.mu_index(mu_counts)
        j = self._h_index[i][tuple(tuple(r) for r in h_counts)]
        return int(self.offsets[i]) + j

    def pair(self, xi_id: int) -> tuple[EmpiricalStateDist, TeamActionDist]:
        i = int(self._mu_of_xi[xi_id])
        j = xi_id - int(self.offsets[i])
        mu = EmpiricalStateDist(counts=self.mus[i], n_agents=self.n_agents)
        return mu, TeamActionDist(counts=self.h_blocks[i][j])

    def block(self, mu_idx: int) -> slice:
        return slice(int(self.offsets[mu_idx]), int(self.offsets[mu_idx + 1]))


def enumerate_xi(
    g: StateGraph, n_agents: int, n_actions: int, cap: int = DEFAULT_XI_CAP
) -> XiSpace:
    """Enumerate P^N(S) and, per mu, the product of per-state count simplices."""
    mus = compositions(n_agents, g.n_states)
    total = 0
    blocks = []
    offsets = [0]
    for m in mus:
        size = 1
        for c in m:
            size *= n_compositions(c, n_actions)
        total += size
        if total > cap:
            raise CapExceededError(
                f"|Xi| exceeds the cap {cap} (at least {total} pairs)"
            )
        per_state = [compositions(c, n_actions) for c in m]
        block = []
        _product_rows(per_state, 0, [], block)
        blocks.append(tuple(block))
        offsets.append(total)
    return XiSpace(
        n_agents=n_agents,
        n_states=g.n_states,
        n_actions=n_actions,
        mus=mus,
        h_blocks=tuple(blocks),
        offsets=np.asarray(offsets, dtype=np.int64),
    )


def _product_rows(per_state, i, acc, out):
    if i == len(per_state):
        out.append(tuple(acc))
        return
    for row in per_state[i]:
        acc.append(row)
        _product_rows(per_state, i + 1, acc, out)
        acc.pop()


# ---------------------------------------------------------------------------
# Exact induced team kernel
# ---------------------------------------------------------------------------


def _multinomial_split(
    count: int, dests: Sequence[int], probs: Sequence[Fraction]
) -> list[tuple[tuple[int, ...], Fraction]]:
    """Law of destination counts when `count` agents move i.i.d. over dests."""
    out = []
    for split in compositions(count, len(dests)):
        coef = factorial(count)
        for c in split:
            coef //= factorial(c)
        p = Fraction(coef)
        for c, q in zip(split, probs):
            p *= Fraction(q) ** c
        if p != 0:
            out.append((split, p))
    return out


def exact_team_kernel(
    model: ModelSpec, g: StateGraph, mu: EmpiricalStateDist, h: TeamActionDist
) -> dict[tuple[int, ...], Fraction]:
    """Exact law of mu' given (mu, h): convolution of per-(state, action)
    multinomial destination counts. Rational-exact for rational kernels."""
    dist: dict[tuple[int, ...], Fraction] = {tuple([0] * g.n_states): Fraction(1)}
    for s, row in enumerate(h.counts):
        for a, count in enumerate(row):
            if count == 0:
                continue
            pmf = kernel_pmf(model, g, s, mu, a)
            dests = sorted(pmf)
            probs = [pmf[t] for t in dests]
            moves = _multinomial_split(count, dests, probs)
            new_dist: dict[tuple[int, ...], Fraction] = {}
            for occ, p_occ in dist.items():
                for split, p_move in moves:
                    nxt = list(occ)
                    for t, c in zip(dests, split):
                        nxt[t] += c
                    key = tuple(nxt)
                    new_dist[key] = new_dist.get(key, Fraction(0)) + p_occ * p_move
            dist = new_dist
    return dist


def mu_prime_marginal(
    model: ModelSpec, g: StateGraph, mu: EmpiricalStateDist, h: TeamActionDist, s: int
) -> dict[int, Fraction]:
    """Exact law of the next occupancy count at state s."""
    out: dict[int, Fraction] = {}
    for nxt, p in exact_team_kernel(model, g, mu, h).items():
        out[nxt[s]] = out.get(nxt[s], Fraction(0)) + p
    return out


# ---------------------------------------------------------------------------
# Window bookkeeping for localization
# ---------------------------------------------------------------------------


def window_key(
    xi: XiSpace, xi_id: int, members: tuple[int, ...]
) -> tuple[tuple[int, ...], tuple[tuple[int, ...], ...]]:
    """The (mu, h) content of a window, the localization equivalence key."""
    i = int(xi.mu_of_xi[xi_id])
    mu = xi.mus[i]
    h = xi.h_blocks[i][xi_id - int(xi.offsets[i])]
    return tuple(mu[t] for t in members), tuple(h[t] for t in members)


# ---------------------------------------------------------------------------
# The oracle
# ---------------------------------------------------------------------------


@dataclass
class ExactTables:
    """Dense ground-truth tables over Xi for one policy."""

    q_team: dict[int, np.ndarray]          # per state: unweighted r_s returns
    q_team_weighted: dict[int, np.ndarray]  # per state: mu(s)-weighted returns
    q_global: np.ndarray                   # return of the agent-average reward
    q_opt: np.ndarray                      # lifted centralized optimum
    v_weighted: np.ndarray                 # per mu: E_{h|mu} q_global
    stationary: np.ndarray                 # nu over Xi
    visitation: np.ndarray                 # sigma over Xi


class ExactOracle:
    """Caches the Xi enumeration, the exact kernel, and reward tables; all
    policy-dependent quantities are computed per call."""

    def __init__(self, model: ModelSpec, g: StateGraph, xi_cap: int = DEFAULT_XI_CAP):
        self.model = model
        self.g = g
        self.xi = enumerate_xi(g, model.n_agents, model.n_actions, cap=xi_cap)
        self._kernel_rows: Optional[list[dict[int, Fraction]]] = None
        self._kernel_csr: Optional[sp.csr_matrix] = None
        self._rs_tables: dict[int, np.ndarray] = {}

    # -- kernel ------------------------------------------------------------

    @property
    def kernel_rows(self) -> list[dict[int, Fraction]]:
        if self._kernel_rows is None:
            rows = []
            for xi_id in range(self.xi.n_xi):
                mu, h = self.xi.pair(xi_id)
                law = exact_team_kernel(self.model, self.g, mu, h)
                rows.append({self.xi.mu_index(m): p for m, p in law.items()})
            self._kernel_rows = rows
        return self._kernel_rows

    @property
    def kernel_csr(self) -> sp.csr_matrix:
        """Float kernel as a sparse (n_xi, n_mus) matrix."""
        if self._kernel_csr is None:
            rows, cols, vals = [], [], []
            for xi_id, law in enumerate(self.kernel_rows):
                for j, p in law.items():
                    rows.append(xi_id)
                    cols.append(j)
                    vals.append(float(p))
            self._kernel_csr = sp.csr_matrix(
                (vals, (rows, cols)), shape=(self.xi.n_xi, self.xi.n_mus)
            )
        return self._kernel_csr

    # -- stage rewards -----------------------------------------------------

    def rs_table(self, s: int) -> np.ndarray:
        """Unweighted localized team reward r_s over Xi."""
        if s not in self._rs_tables:
            window = k_hop(self.g, s, 1)
            vals = np.empty(self.xi.n_xi)
            for xi_id in range(self.xi.n_xi):
                mu, h = self.xi.pair(xi_id)
                vals[xi_id] = float(
                    local_team_reward(
                        self.model, window, restrict(mu.mu_vector(), window),
                        h.proportions(s),
                    )
                )
            self._rs_tables[s] = vals
        return self._rs_tables[s]

    def weighted_rs_table(self, s: int) -> np.ndarray:
        """mu(s) * r_s: the per-team share of the agent-average stage reward."""
        mu_frac = np.array(
            [self.xi.mus[i][s] / self.xi.n_agents for i in self.xi.mu_of_xi]
        )
        return mu_frac * self.rs_table(s)

    def global_reward_table(self) -> np.ndarray:
        out = np.zeros(self.xi.n_xi)
        for s in range(self.g.n_states):
            out += self.weighted_rs_table(s)
        return out

    # -- policy representation over Xi --------------------------------------

    def policy_block_probs(self, policy: TeamPolicy) -> np.ndarray:
        """Pi(h | mu) flattened over xi ids (blocks are contiguous per mu)."""
        out = np.empty(self.xi.n_xi)
        for i, mu_counts in enumerate(self.xi.mus):
            arrs = []
            for s, c in enumerate(mu_counts):
                _, probs = policy.state_pmf(s, c)
                arrs.append(np.asarray(probs, dtype=float))
            block = arrs[0]
            for arr in arrs[1:]:
                block = np.multiply.outer(block, arr)
            out[self.xi.block(i)] = block.ravel()
        return out

    def _expected_over_h(self, block_probs: np.ndarray, q: np.ndarray) -> np.ndarray:
        """v[mu] = E_{h ~ Pi(.|mu)} q(mu, h)."""
        v = np.empty(self.xi.n_mus)
        for i in range(self.xi.n_mus):
            b = self.xi.block(i)
            v[i] = block_probs[b] @ q[b]
        return v

    # -- Bellman machinery ---------------------------------------------------

    def bellman_apply(
        self, policy_or_probs, q: np.ndarray, stage: np.ndarray
    ) -> np.ndarray:
        """(T q)(mu, h) = stage(mu, h) + gamma E_{mu'}[ E_{h'~Pi(.|mu')} q(mu', h') ].

        The successor action distribution is drawn at the successor state mu'
        (the fixed point of this operator is the discounted return of `stage`).
        """
        probs = (
            policy_or_probs
            if isinstance(policy_or_probs, np.ndarray)
            else self.policy_block_probs(policy_or_probs)
        )
        v = self._expected_over_h(probs, q)
        return stage + self.model.gamma * (self.kernel_csr @ v)

    def policy_q(
        self, policy_or_probs, stage: np.ndarray, tol: float = DEFAULT_TOL
    ) -> np.ndarray:
        """Fixed point of the policy Bellman operator, sup-norm error <= tol."""
        probs = (
            policy_or_probs
            if isinstance(policy_or_probs, np.ndarray)
            else self.policy_block_probs(policy_or_probs)
        )
        gamma = self.model.gamma
        stop = tol * (1.0 - gamma) / gamma
        q = np.zeros(self.xi.n_xi)
        while True:
            nxt = self.bellman_apply(probs, q, stage)
            delta = float(np.max(np.abs(nxt - q)))
            q = nxt
            if delta <= stop:
                return q

    def exact_team_q(
        self, policy: TeamPolicy, s: int, tol: float = DEFAULT_TOL
    ) -> np.ndarray:
        """Q_s: discounted return of the unweighted r_s under the policy."""
        return self.policy_q(policy, self.rs_table(s), tol=tol)

    def exact_team_q_weighted(
        self, policy_or_probs, s: int, tol: float = DEFAULT_TOL
    ) -> np.ndarray:
        return self.policy_q(policy_or_probs, self.weighted_rs_table(s), tol=tol)

    def exact_global_q(self, policy_or_probs, tol: float = DEFAULT_TOL) -> np.ndarray:
        """Return of the agent-average stage reward; sums the weighted Q_s."""
        return self.policy_q(policy_or_probs, self.global_reward_table(), tol=tol)

    def exact_optimal_q(self, tol: float = DEFAULT_TOL) -> np.ndarray:
        """Lifted centralized optimum: sup over successor h' inside the backup."""
        gamma = self.model.gamma
        stage = self.global_reward_table()
        stop = tol * (1.0 - gamma) / gamma
        q = np.zeros(self.xi.n_xi)
        while True:
            m = np.empty(self.xi.n_mus)
            for i in range(self.xi.n_mus):
                b = self.xi.block(i)
                m[i] = np.max(q[b])
            nxt = stage + gamma * (self.kernel_csr @ m)
            delta = float(np.max(np.abs(nxt - q)))
            q = nxt
            if delta <= stop:
                return q

    # -- values over the mu space (independent recursion) --------------------

    def mu_chain(self, policy: TeamPolicy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Marginal mu -> mu' transition matrix plus expected stage rewards
        (unweighted and weighted), by averaging over h ~ Pi(.|mu)."""
        probs = self.policy_block_probs(policy)
        n_mu = self.xi.n_mus
        P = np.zeros((n_mu, n_mu))
        r_unw = np.zeros(n_mu)
        r_w = np.zeros(n_mu)
        stage_unw = np.zeros(self.xi.n_xi)
        for s in range(self.g.n_states):
            stage_unw += self.rs_table(s)
        stage_w = self.global_reward_table()
        K = self.kernel_csr
        for i in range(n_mu):
            b = self.xi.block(i)
            w = probs[b]
            P[i] = w @ K[b.start: b.stop].toarray()
            r_unw[i] = w @ stage_unw[b]
            r_w[i] = w @ stage_w[b]
        return P, r_unw, r_w

    def exact_value(
        self, policy: TeamPolicy, weighted: bool = True, tol: float = DEFAULT_TOL
    ) -> np.ndarray:
        """V(mu) by value iteration on the mu space alone.

        weighted=True uses the agent-average stage reward (the value that
        matches agent-level simulation); weighted=False uses sum_s r_s.
        """
        P, r_unw, r_w = self.mu_chain(policy)
        r = r_w if weighted else r_unw
        gamma = self.model.gamma
        stop = tol * (1.0 - gamma) / gamma
        v = np.zeros(self.xi.n_mus)
        while True:
            nxt = r + gamma * (P @ v)
            delta = float(np.max(np.abs(nxt - v)))
            v = nxt
            if delta <= stop:
                return v

    # -- measures ------------------------------------------------------------

    def p0_vector(self, p0: InitialDistribution) -> np.ndarray:
        vec = np.zeros(self.xi.n_mus)
        for counts, p in p0.support():
            vec[self.xi.mu_index(counts)] = float(p)
        return vec

    def rho0(self, policy: TeamPolicy, p0: InitialDistribution) -> np.ndarray:
        """Law of (mu_0, h_0): P0(mu) Pi(h | mu)."""
        probs = self.policy_block_probs(policy)
        p0v = self.p0_vector(p0)
        return p0v[self.xi.mu_of_xi] * probs

    def _chain_step(self, probs: np.ndarray, d: np.ndarray) -> np.ndarray:
        """One step of the joint (mu, h) chain: d K."""
        v = self.kernel_csr.T @ d
        return v[self.xi.mu_of_xi] * probs

    def exact_stationary(
        self,
        policy: TeamPolicy,
        p0: Optional[InitialDistribution] = None,
        tol: float = 1e-10,
        max_iter: int = 1_000_000,
    ) -> np.ndarray:
        """Stationary law of the joint chain by power iteration with Cesaro
        averaging; starts from the P0-induced law (uniform over mu if absent)."""
        probs = self.policy_block_probs(policy)
        if p0 is None:
            p0 = InitialDistribution(
                kind="uniform", n_agents=self.xi.n_agents, n_states=self.xi.n_states
            )
        d = self.rho0(policy, p0)
        # Lazy averaging (d + dK)/2 keeps the stationary law, breaks periodicity,
        # and converges geometrically where a plain Cesaro mean would need 1/tol steps.
        for _ in range(max_iter):
            stepped = self._chain_step(probs, d)
            resid = float(np.abs(stepped - d).sum())
            if resid <= tol:
                return d / d.sum()
            d = 0.5 * (d + stepped)
        raise StationaryConvergenceError(
            f"power iteration did not reach l1 residual {tol} in {max_iter} steps "
            "(chain may be periodic or reducible)"
        )

    def exact_visitation(
        self,
        policy: TeamPolicy,
        p0: InitialDistribution,
        series_tol: float = 1e-10,
    ) -> np.ndarray:
        """sigma = (1-gamma) sum_t gamma^t law(mu_t, h_t), truncated Neumann
        series normalized to total mass exactly 1."""
        probs = self.policy_block_probs(policy)
        gamma = self.model.gamma
        d = self.rho0(policy, p0)
        acc = d.copy()
        weight = 1.0
        coef = 1.0
        while coef * gamma / (1.0 - gamma) > series_tol / 2.0:
            d = self._chain_step(probs, d)
            coef *= gamma
            acc += coef * d
            weight += coef
        return acc / weight

    # -- scalar objective and gradients ---------------------------------------

    def exact_j(self, policy: TeamPolicy, p0: InitialDistribution,
                tol: float = DEFAULT_TOL) -> float:
        """J = E_{mu0 ~ P0} E_{h ~ Pi(.|mu0)} [ global return ]."""
        q = self.exact_global_q(policy, tol=tol)
        probs = self.policy_block_probs(policy)
        v = self._expected_over_h(probs, q)
        return float(self.p0_vector(p0) @ v)

    def feature_table(
        self, params: EnergyPolicyParams, s: int
    ) -> list[np.ndarray]:
        """Centered feature Phi(theta, s, mu, h) for every xi id."""
        out = []
        for xi_id in range(self.xi.n_xi):
            mu, h = self.xi.pair(xi_id)
            out.append(centered_policy_feature(params, s, mu, h))
        return out

    def exact_policy_grad(
        self,
        params: EnergyPolicyParams,
        policy: TeamPolicy,
        p0: InitialDistribution,
        s: int,
        tol: float = DEFAULT_TOL,
    ) -> np.ndarray:
        """Full gradient of J in theta_s:
        (tau/(1-gamma)) E_sigma[ Q(mu, h) Phi(theta, s, mu, h) ]."""
        sigma = self.exact_visitation(policy, p0)
        q = self.exact_global_q(policy, tol=tol)
        feats = self.feature_table(params, s)
        grad = np.zeros_like(feats[0])
        for xi_id in range(self.xi.n_xi):
            w = sigma[xi_id] * q[xi_id]
            if w != 0.0:
                grad += w * feats[xi_id]
        return params.tau / (1.0 - self.model.gamma) * grad

    def localized_policy_grad(
        self,
        params: EnergyPolicyParams,
        policy: TeamPolicy,
        p0: InitialDistribution,
        s: int,
        k: int,
        tol: float = DEFAULT_TOL,
    ) -> np.ndarray:
        """Localized gradient: the k-hop truncated, mu-weighted Q tables replace
        the global Q. Equals the full gradient when k reaches the diameter."""
        sigma = self.exact_visitation(policy, p0)
        probs = self.policy_block_probs(policy)
        members = k_hop(self.g, s, k).members
        local_sum = np.zeros(self.xi.n_xi)
        for y in members:
            q_y = self.exact_team_q_weighted(probs, y, tol=tol)
            qhat = self.truncated_q(q_y, y, k)
            local_sum += self.truncated_lookup(qhat, y, k)
        feats = self.feature_table(params, s)
        grad = np.zeros_like(feats[0])
        for xi_id in range(self.xi.n_xi):
            w = sigma[xi_id] * local_sum[xi_id]
            if w != 0.0:
                grad += w * feats[xi_id]
        return params.tau / (1.0 - self.model.gamma) * grad

    # -- exponential decay and truncation --------------------------------------

    def _window_groups(self, s: int, k: int) -> dict[tuple, list[int]]:
        members = k_hop(self.g, s, k).members
        groups: dict[tuple, list[int]] = {}
        for xi_id in range(self.xi.n_xi):
            groups.setdefault(window_key(self.xi, xi_id, members), []).append(xi_id)
        return groups

    def decay_gap(self, q_s: np.ndarray, s: int, k: int) -> float:
        """Largest |Q_s(xi) - Q_s(xi')| over pairs agreeing on the k-hop window."""
        gap = 0.0
        for ids in self._window_groups(s, k).values():
            vals = q_s[ids]
            gap = max(gap, float(vals.max() - vals.min()))
        return gap

    def truncated_q(
        self,
        q_s: np.ndarray,
        s: int,
        k: int,
        weights: str = "uniform",
        nu: Optional[np.ndarray] = None,
    ) -> dict[tuple, float]:
        """Windowed Q table: weighted average of Q_s over the completions of
        each k-hop window. `weights` is "uniform" or "nu-conditional" (needs
        nu; windows with zero nu mass fall back to uniform)."""
        if weights not in ("uniform", "nu-conditional"):
            raise ValueError(f"unknown weighting {weights!r}")
        if weights == "nu-conditional" and nu is None:
            raise ValueError("nu-conditional weighting needs nu")
        out: dict[tuple, float] = {}
        for key, ids in self._window_groups(s, k).items():
            if not ids:
                raise RuntimeError("empty completion set for a window")
            if weights == "uniform":
                out[key] = float(np.mean(q_s[ids]))
            else:
                mass = float(nu[ids].sum())
                if mass == 0.0:
                    out[key] = float(np.mean(q_s[ids]))
                else:
                    out[key] = float((nu[ids] / mass) @ q_s[ids])
        return out

    def truncated_lookup(
        self, qhat: dict[tuple, float], s: int, k: int
    ) -> np.ndarray:
        """Expand a windowed table back to a dense vector over Xi."""
        members = k_hop(self.g, s, k).members
        out = np.empty(self.xi.n_xi)
        for xi_id in range(self.xi.n_xi):
            out[xi_id] = qhat[window_key(self.xi, xi_id, members)]
        return out

    # -- bundles ---------------------------------------------------------------

    def compute_tables(
        self,
        policy: TeamPolicy,
        p0: InitialDistribution,
        tol: float = DEFAULT_TOL,
    ) -> ExactTables:
        probs = self.policy_block_probs(policy)
        q_team = {s: self.policy_q(probs, self.rs_table(s), tol) for s in range(self.g.n_states)}
        q_team_w = {
            s: self.policy_q(probs, self.weighted_rs_table(s), tol)
            for s in range(self.g.n_states)
        }
        return ExactTables(
            q_team=q_team,
            q_team_weighted=q_team_w,
            q_global=self.exact_global_q(probs, tol),
            q_opt=self.exact_optimal_q(tol),
            v_weighted=self.exact_value(policy, weighted=True, tol=tol),
            stationary=self.exact_stationary(policy, p0),
            visitation=self.exact_visitation(policy, p0),
        )
