"""Backward transition policies and corrected reward schemes.

A backward policy is a distribution over the parents of every non-initial
state. Corrected schemes are constructed so that the return of any complete
trajectory equals ``-E(x) + alpha * sum(log P_B)``, which makes the optimal
entropy-regularized policy sample terminating states from the Gibbs
distribution regardless of how many trajectories reach each state.

All probabilities are kept in log domain alongside the raw rows.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .envs import EnergyModel
from .graph import SINK, SoftMdpGraph, Trajectory, count_trajectories

__all__ = [
    "BackwardPolicy",
    "RewardKind",
    "RewardScheme",
    "uniform_backward_policy",
    "counting_backward_policy",
    "reward",
    "trajectory_return",
    "verify_return_identity",
]


@dataclass(frozen=True)
class BackwardPolicy:
    """Per-state probability rows over parents (None for parentless states)."""

    rows: tuple[np.ndarray | None, ...]
    log_rows: tuple[np.ndarray | None, ...]
    parent_pos: tuple[dict[int, int] | None, ...]

    @classmethod
    def from_rows(cls, graph: SoftMdpGraph, rows: list[np.ndarray | None]) -> "BackwardPolicy":
        log_rows: list[np.ndarray | None] = []
        pos: list[dict[int, int] | None] = []
        for s, row in enumerate(rows):
            parents = graph.parents[s]
            if row is None:
                if parents:
                    raise ValueError(f"state {s} has parents but no backward row")
                log_rows.append(None)
                pos.append(None)
                continue
            row = np.asarray(row, dtype=float)
            if row.shape != (len(parents),):
                raise ValueError(f"backward row for state {s} has wrong length")
            if np.any(row < 0) or abs(row.sum() - 1.0) > 1e-12:
                raise ValueError(f"backward row for state {s} is not a distribution")
            log_rows.append(np.log(row))
            pos.append({p: i for i, p in enumerate(parents)})
        return cls(tuple(rows), tuple(log_rows), tuple(pos))

    def prob(self, s: int, s_next: int) -> float:
        """P_B(s | s_next), the backward probability of parent ``s``."""
        return float(self.rows[s_next][self.parent_pos[s_next][s]])

    def log_prob(self, s: int, s_next: int) -> float:
        return float(self.log_rows[s_next][self.parent_pos[s_next][s]])


def uniform_backward_policy(graph: SoftMdpGraph) -> BackwardPolicy:
    """P_B(s | s') = 1 / |parents(s')|."""
    rows: list[np.ndarray | None] = []
    for s in range(graph.num_states):
        k = len(graph.parents[s])
        rows.append(np.full(k, 1.0 / k) if k else None)
    return BackwardPolicy.from_rows(graph, rows)


def counting_backward_policy(graph: SoftMdpGraph) -> BackwardPolicy:
    """P_B(s | s') = n(s) / n(s') with n the partial-trajectory counts.

    Rows sum to one exactly by the counting recurrence n(s') = sum n(parent).
    """
    counts = count_trajectories(graph)
    rows: list[np.ndarray | None] = []
    for s in range(graph.num_states):
        parents = graph.parents[s]
        if not parents:
            rows.append(None)
            continue
        rows.append(np.array([counts[p] / counts[s] for p in parents]))
    return BackwardPolicy.from_rows(graph, rows)


class RewardKind(enum.Enum):
    UNCORRECTED = "uncorrected"
    TERMINAL = "terminal"
    DENSE = "dense"
    FORWARD_LOOKING = "fl"

    @property
    def corrected(self) -> bool:
        return self is not RewardKind.UNCORRECTED


@dataclass(frozen=True)
class RewardScheme:
    """A reward evaluator bound to a graph, an energy model, a backward
    policy and a temperature.

    Per-transition rewards, with x terminating and s -> s' interior:

    - uncorrected:      r(s, s') = 0,                          r(x, sink) = -E(x)
    - terminal:         r(s, s') = a log P_B(s|s'),            r(x, sink) = -E(x)
    - dense:            r(s, s') = E(s) - E(s') + a log P_B,   r(x, sink) = 0
    - fl:               r(s, s') = -E(s->s') + a log P_B,      r(x, sink) = 0
    """

    kind: RewardKind
    graph: SoftMdpGraph
    energy: EnergyModel
    alpha: float
    backward: BackwardPolicy | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.kind.corrected and self.backward is None:
            raise ValueError(f"{self.kind.value} reward requires a backward policy")
        if self.kind in (RewardKind.UNCORRECTED, RewardKind.TERMINAL):
            for x in self.graph.terminating_states():
                if np.isnan(self.energy.terminal[x]):
                    raise ValueError(f"missing terminal energy for state {x}")
        if self.kind is RewardKind.DENSE:
            if not self.energy.has_state_energy:
                raise ValueError("dense reward requires per-state energies")
            if not all(self.graph.terminating):
                raise ValueError("dense reward requires every state to terminate")
        if self.kind is RewardKind.FORWARD_LOOKING and not self.energy.has_edge_energy:
            raise ValueError("forward-looking reward requires per-edge energies")

    def reward_rows(self) -> tuple[np.ndarray, ...]:
        """Per-state reward over the action layout (children, then sink)."""
        rows = []
        for s in range(self.graph.num_states):
            targets = self.graph.action_targets(s)
            rows.append(np.array([reward(self, s, t) for t in targets]))
        return tuple(rows)


def reward(scheme: RewardScheme, s: int, s_next: int) -> float:
    """r(s, s') for an interior edge or ``(s, SINK)`` for a termination."""
    graph = scheme.graph
    if not graph.has_edge(s, s_next):
        raise ValueError(f"no such transition: {s} -> {s_next}")
    a = scheme.alpha
    kind = scheme.kind
    if s_next == SINK:
        if kind in (RewardKind.UNCORRECTED, RewardKind.TERMINAL):
            return -scheme.energy.terminal_energy(s)
        return 0.0
    if kind is RewardKind.UNCORRECTED:
        return 0.0
    log_pb = scheme.backward.log_prob(s, s_next)
    if kind is RewardKind.TERMINAL:
        return a * log_pb
    if kind is RewardKind.DENSE:
        e = scheme.energy.state
        return float(e[s] - e[s_next]) + a * log_pb
    # forward-looking
    return -scheme.energy.edge_energy(graph, s, s_next) + a * log_pb


def trajectory_return(scheme: RewardScheme, traj: Trajectory) -> float:
    return sum(reward(scheme, s, t) for s, t in traj.transitions())


def verify_return_identity(scheme: RewardScheme, traj: Trajectory) -> float:
    """Residual of the corrected-return identity on a complete trajectory.

    Returns ``sum(r) - (-E(x) + alpha * sum(log P_B))``; corrected schemes
    satisfy this identically, the uncorrected scheme misses by the backward
    log-probability of the trajectory.
    """
    if not traj.ends_at_sink or traj.states[0] != scheme.graph.initial_state:
        raise ValueError("return identity is defined on complete trajectories")
    if scheme.backward is None:
        raise ValueError("identity check needs a backward policy on the scheme")
    ret = trajectory_return(scheme, traj)
    log_pb = sum(
        scheme.backward.log_prob(s, t) for s, t in traj.interior_transitions()
    )
    target = -scheme.energy.terminal_energy(traj.last_state) + scheme.alpha * log_pb
    return ret - target
