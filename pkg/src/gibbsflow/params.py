"""Learnable tabular parameters and the parametrization correspondences.

Three ingredients, used in four combinations depending on the objective:
per-state policy logits over the action layout (children, then sink),
per-state log-flows (the entropy-regularized value is ``alpha * log_flow``),
and per-action Q-values with the same ragged layout as the logits.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .graph import SoftMdpGraph

__all__ = [
    "ParamMode",
    "TabularParams",
    "ParamGrads",
    "init_params",
    "apply_correspondence",
    "value_table_to_log_flow",
]


class ParamMode(enum.Enum):
    POLICY_FLOW = "policy_flow"   # policy logits + log-flow
    Q_ONLY = "q"                  # a single Q-table parametrizes everything
    POLICY_ONLY = "policy"        # policy logits alone
    POLICY_Q = "policy_q"         # separate actor logits and critic Q-table


def _zero_rows(graph: SoftMdpGraph) -> list[np.ndarray]:
    return [np.zeros(graph.num_actions(s)) for s in range(graph.num_states)]


def _lse(row: np.ndarray) -> float:
    # hand-rolled for speed: called per state in every residual evaluation
    m = float(row.max())
    return m + float(np.log(np.exp(row - m).sum()))


def _log_softmax(row: np.ndarray) -> np.ndarray:
    # shift first: subtracting the lse from huge-magnitude rows would lose
    # the normalizer to cancellation
    shifted = row - float(row.max())
    return shifted - float(np.log(np.exp(shifted).sum()))


@dataclass
class TabularParams:
    """Mutable parameter tables for one graph; exactly the fields required
    by ``mode`` are non-None."""

    graph: SoftMdpGraph
    mode: ParamMode
    policy_logits: list[np.ndarray] | None = None
    log_flow: np.ndarray | None = None
    q_values: list[np.ndarray] | None = None

    def __post_init__(self):
        need_policy = self.mode in (ParamMode.POLICY_FLOW, ParamMode.POLICY_ONLY, ParamMode.POLICY_Q)
        need_flow = self.mode is ParamMode.POLICY_FLOW
        need_q = self.mode in (ParamMode.Q_ONLY, ParamMode.POLICY_Q)
        if need_policy != (self.policy_logits is not None):
            raise ValueError(f"mode {self.mode.value}: policy_logits presence mismatch")
        if need_flow != (self.log_flow is not None):
            raise ValueError(f"mode {self.mode.value}: log_flow presence mismatch")
        if need_q != (self.q_values is not None):
            raise ValueError(f"mode {self.mode.value}: q_values presence mismatch")
        for rows in (self.policy_logits, self.q_values):
            if rows is None:
                continue
            if len(rows) != self.graph.num_states:
                raise ValueError("one row per state required")
            for s, row in enumerate(rows):
                if row.shape != (self.graph.num_actions(s),):
                    raise ValueError(f"row at state {s} has wrong length")

    # -- derived policy ---------------------------------------------------

    def log_policy_row(self, s: int, alpha: float | None = None) -> np.ndarray:
        """Log-softmax policy over the action layout of ``s``.

        Q-parametrized modes derive the policy as softmax(Q / alpha) and
        therefore need ``alpha``.
        """
        if self.mode is ParamMode.Q_ONLY:
            if alpha is None:
                raise ValueError("alpha required to derive a policy from Q-values")
            return _log_softmax(self.q_values[s] / alpha)
        return _log_softmax(self.policy_logits[s])

    def policy_rows(self, alpha: float | None = None) -> tuple[np.ndarray, ...]:
        return tuple(
            np.exp(self.log_policy_row(s, alpha)) for s in range(self.graph.num_states)
        )

    def soft_value(self, s: int, alpha: float) -> float:
        """alpha * logsumexp(Q(s, .) / alpha) for Q-parametrized modes."""
        return alpha * _lse(self.q_values[s] / alpha)

    # -- bookkeeping -------------------------------------------------------

    def copy(self) -> "TabularParams":
        return TabularParams(
            graph=self.graph,
            mode=self.mode,
            policy_logits=None if self.policy_logits is None else [r.copy() for r in self.policy_logits],
            log_flow=None if self.log_flow is None else self.log_flow.copy(),
            q_values=None if self.q_values is None else [r.copy() for r in self.q_values],
        )

    def to_vector(self) -> np.ndarray:
        parts = []
        if self.policy_logits is not None:
            parts += list(self.policy_logits)
        if self.log_flow is not None:
            parts.append(self.log_flow)
        if self.q_values is not None:
            parts += list(self.q_values)
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_from_vector(self, vec: np.ndarray) -> None:
        if vec.size != self.num_parameters():
            raise ValueError("vector length does not match parameter count")
        i = 0
        if self.policy_logits is not None:
            for s, row in enumerate(self.policy_logits):
                self.policy_logits[s] = vec[i : i + row.size].copy()
                i += row.size
        if self.log_flow is not None:
            size = self.log_flow.size
            self.log_flow = vec[i : i + size].copy()
            i += size
        if self.q_values is not None:
            for s, row in enumerate(self.q_values):
                self.q_values[s] = vec[i : i + row.size].copy()
                i += row.size

    def num_parameters(self) -> int:
        return self.to_vector().size

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.to_vector()).all())

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "policy_logits": None if self.policy_logits is None else [r.tolist() for r in self.policy_logits],
            "log_flow": None if self.log_flow is None else self.log_flow.tolist(),
            "q_values": None if self.q_values is None else [r.tolist() for r in self.q_values],
        }


@dataclass
class ParamGrads:
    """Gradient tables with the same ragged shape as the parameters.

    Entries for parameters untouched by a batch stay exactly zero.
    """

    policy_logits: list[np.ndarray] | None
    log_flow: np.ndarray | None
    q_values: list[np.ndarray] | None

    @classmethod
    def zeros_like(cls, params: TabularParams) -> "ParamGrads":
        g = ParamGrads(
            policy_logits=None, log_flow=None, q_values=None
        )
        if params.policy_logits is not None:
            g.policy_logits = [np.zeros_like(r) for r in params.policy_logits]
        if params.log_flow is not None:
            g.log_flow = np.zeros_like(params.log_flow)
        if params.q_values is not None:
            g.q_values = [np.zeros_like(r) for r in params.q_values]
        return g

    def to_vector(self) -> np.ndarray:
        parts = []
        if self.policy_logits is not None:
            parts += list(self.policy_logits)
        if self.log_flow is not None:
            parts.append(self.log_flow)
        if self.q_values is not None:
            parts += list(self.q_values)
        return np.concatenate(parts) if parts else np.zeros(0)

    def scaled(self, factor: float) -> "ParamGrads":
        return ParamGrads(
            policy_logits=None if self.policy_logits is None else [factor * r for r in self.policy_logits],
            log_flow=None if self.log_flow is None else factor * self.log_flow,
            q_values=None if self.q_values is None else [factor * r for r in self.q_values],
        )

    def max_abs(self) -> float:
        vec = self.to_vector()
        return float(np.abs(vec).max()) if vec.size else 0.0

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.to_vector()).all())


def init_params(
    graph: SoftMdpGraph,
    mode: ParamMode,
    init: str = "zeros",
    sigma: float = 0.1,
    seed: int = 0,
) -> TabularParams:
    """Fresh parameters: ``zeros`` gives uniform policies, unit flows and
    zero Q-values; ``normal`` draws every entry i.i.d. N(0, sigma^2)."""
    if init not in ("zeros", "normal"):
        raise ValueError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)

    def rows() -> list[np.ndarray]:
        out = _zero_rows(graph)
        if init == "normal":
            out = [rng.normal(0.0, sigma, size=r.shape) for r in out]
        return out

    policy = rows() if mode in (ParamMode.POLICY_FLOW, ParamMode.POLICY_ONLY, ParamMode.POLICY_Q) else None
    flow = None
    if mode is ParamMode.POLICY_FLOW:
        flow = np.zeros(graph.num_states)
        if init == "normal":
            flow = rng.normal(0.0, sigma, size=graph.num_states)
    q = rows() if mode in (ParamMode.Q_ONLY, ParamMode.POLICY_Q) else None
    return TabularParams(graph=graph, mode=mode, policy_logits=policy, log_flow=flow, q_values=q)


def value_table_to_log_flow(values: np.ndarray, alpha: float) -> np.ndarray:
    """Convert a raw soft-value table into a log-flow table (divide by alpha)."""
    return np.asarray(values, dtype=float) / alpha


def apply_correspondence(kind: str, params: TabularParams, alpha: float) -> TabularParams:
    """Map between parametrizations.

    - ``pcl_to_subtb``: reinterpret ``log_flow`` entries holding raw soft
      values as log-flows (divide by alpha); the policy is shared.
    - ``q_to_pf_flow``: derive policy logits Q/alpha and log-flows
      logsumexp(Q/alpha) from a Q-table.
    - ``pf_flow_to_q``: rebuild the Q-table alpha * (log_flow + log pi);
      round-tripping through ``q_to_pf_flow`` reproduces policy and flow.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    graph = params.graph
    if kind == "pcl_to_subtb":
        if params.log_flow is None:
            raise ValueError("pcl_to_subtb needs log_flow holding soft values")
        return TabularParams(
            graph=graph,
            mode=ParamMode.POLICY_FLOW,
            policy_logits=[r.copy() for r in params.policy_logits],
            log_flow=value_table_to_log_flow(params.log_flow, alpha),
        )
    if kind == "q_to_pf_flow":
        if params.q_values is None:
            raise ValueError("q_to_pf_flow needs q_values")
        logits = [row / alpha for row in params.q_values]
        flow = np.array([_lse(row / alpha) for row in params.q_values])
        return TabularParams(
            graph=graph, mode=ParamMode.POLICY_FLOW, policy_logits=logits, log_flow=flow
        )
    if kind == "pf_flow_to_q":
        if params.policy_logits is None or params.log_flow is None:
            raise ValueError("pf_flow_to_q needs policy_logits and log_flow")
        q = [
            alpha * (params.log_flow[s] + _log_softmax(params.policy_logits[s]))
            for s in range(graph.num_states)
        ]
        return TabularParams(graph=graph, mode=ParamMode.Q_ONLY, q_values=q)
    raise ValueError(f"unknown correspondence {kind!r}")
