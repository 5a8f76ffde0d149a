"""Exact ground truth at desk scale.

On a DAG the soft Bellman system is triangular, so a single reverse
topological sweep computes the optimal entropy-regularized values exactly;
no fixed-point iteration or convergence tolerance is involved. Forward
sweeps then give the exact terminating-state distribution of any policy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .envs import EnergyModel
from .graph import SINK, SoftMdpGraph, topological_order
from .params import ParamMode, TabularParams
from .rewards import RewardScheme

__all__ = [
    "SoftValues",
    "DistributionTable",
    "PolicyRows",
    "soft_value_iteration",
    "optimal_policy",
    "terminating_distribution",
    "gibbs_target",
    "oracle_params",
]

#: Per-state probability rows over the action layout (children, then sink).
PolicyRows = tuple[np.ndarray, ...]


@dataclass(frozen=True)
class SoftValues:
    """Optimal soft values: ``v`` per state, ``q`` per action (sink included).

    The sink value is fixed at 0, so ``q[s][a] = r(s, a) + v[target(a)]`` and
    ``v[s] = alpha * logsumexp(q[s] / alpha)``.
    """

    v: np.ndarray
    q: tuple[np.ndarray, ...]
    alpha: float


def soft_value_iteration(graph: SoftMdpGraph, scheme: RewardScheme) -> SoftValues:
    """One reverse-topological sweep of the soft Bellman backup."""
    if scheme.graph is not graph and scheme.graph != graph:
        raise ValueError("scheme is bound to a different graph")
    alpha = scheme.alpha
    reward_rows = scheme.reward_rows()
    v = np.zeros(graph.num_states)
    q: list[np.ndarray | None] = [None] * graph.num_states
    for s in reversed(topological_order(graph)):
        targets = graph.action_targets(s)
        q_row = reward_rows[s].copy()
        for i, t in enumerate(targets):
            if t != SINK:
                q_row[i] += v[t]
        q[s] = q_row
        v[s] = alpha * logsumexp(q_row / alpha)
    return SoftValues(v=v, q=tuple(q), alpha=alpha)


def optimal_policy(values: SoftValues, alpha: float | None = None) -> PolicyRows:
    """pi(a | s) = exp((q[s][a] - v[s]) / alpha); rows normalize exactly
    because v is the softmax of q."""
    a = values.alpha if alpha is None else alpha
    return tuple(
        np.exp((q_row - v_s) / a) for q_row, v_s in zip(values.q, values.v)
    )


@dataclass(frozen=True)
class DistributionTable:
    """Normalized probabilities over terminating states.

    ``log_z`` is the log normalizer when one exists for the construction
    (Gibbs target, or the optimal-policy partition value), else None.
    """

    states: tuple[int, ...]
    probs: np.ndarray
    log_z: float | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (len(self.states),):
            raise ValueError("probs must align with states")
        if np.any(p < -1e-15):
            raise ValueError("negative probability")
        if abs(p.sum() - 1.0) > 1e-10:
            raise ValueError(f"probabilities sum to {p.sum()}, not 1")
        object.__setattr__(self, "probs", p)

    def prob_of(self, x: int) -> float:
        return float(self.probs[self.states.index(x)])

    def as_dict(self) -> dict[int, float]:
        return {s: float(p) for s, p in zip(self.states, self.probs)}


def terminating_distribution(graph: SoftMdpGraph, policy: PolicyRows) -> DistributionTable:
    """Exact terminating-state marginal of a policy by forward DP.

    Visit mass m(s0) = 1 flows along interior actions; the probability of a
    terminating state is its visit mass times its termination probability.
    Equals the brute-force sum over all complete trajectories.
    """
    mass = np.zeros(graph.num_states)
    mass[graph.initial_state] = 1.0
    for s in topological_order(graph):
        row = policy[s]
        if abs(row.sum() - 1.0) > 1e-9:
            raise ValueError(f"policy row at state {s} is not normalized")
        for i, c in enumerate(graph.children[s]):
            mass[c] += mass[s] * row[i]
    xs = graph.terminating_states()
    probs = np.array([mass[x] * policy[x][-1] for x in xs])
    return DistributionTable(states=xs, probs=probs / probs.sum())


def oracle_params(
    graph: SoftMdpGraph, values: SoftValues, mode: ParamMode
) -> TabularParams:
    """Tabular parameters that realize the exact optimum: policy logits are
    the optimal log-policy, log-flows are v / alpha, Q-tables are the exact
    q rows. Every residual objective vanishes on such parameters."""
    a = values.alpha
    logits = [
        (q_row - values.v[s]) / a for s, q_row in enumerate(values.q)
    ]
    if mode is ParamMode.POLICY_FLOW:
        return TabularParams(
            graph=graph, mode=mode, policy_logits=logits, log_flow=values.v / a
        )
    if mode is ParamMode.POLICY_ONLY:
        return TabularParams(graph=graph, mode=mode, policy_logits=logits)
    if mode is ParamMode.Q_ONLY:
        return TabularParams(
            graph=graph, mode=mode, q_values=[q.copy() for q in values.q]
        )
    return TabularParams(
        graph=graph, mode=mode, policy_logits=logits,
        q_values=[q.copy() for q in values.q],
    )


def gibbs_target(energy: EnergyModel, alpha: float) -> DistributionTable:
    """P(x) proportional to exp(-E(x) / alpha) over terminating states."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    xs = energy.terminal_states
    logits = -energy.terminal_vector() / alpha
    log_z = float(logsumexp(logits))
    return DistributionTable(states=xs, probs=np.exp(logits - log_z), log_z=log_z)
