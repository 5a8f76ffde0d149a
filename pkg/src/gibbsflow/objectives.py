"""Residuals for the eight squared-residual objectives plus discrete SAC.

Every objective is the expected half-squared residual over some behavior
distribution of units (subtrajectories or transitions). Residual functions
return the signed residual; the ``*_terms`` twins additionally describe how
the residual depends on the live parameters, which the gradient module
consumes. Term kinds:

- ``("logit", s, a, coef)``: coef * log pi(a | s) from live policy logits
- ``("flow", s, coef)``:     coef * log_flow[s]
- ``("q", s, a, coef)``:     coef * q[s][a]
- ``("lse_q", s, coef)``:    coef * alpha * logsumexp(q[s] / alpha)
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .envs import EnergyModel
from .graph import SINK, SoftMdpGraph, Trajectory
from .params import ParamMode, TabularParams, apply_correspondence, init_params
from .rewards import BackwardPolicy, RewardKind, RewardScheme, reward

__all__ = [
    "ObjectiveKind",
    "EquivalencePair",
    "EquivalenceReport",
    "residual_pcl",
    "residual_subtb",
    "residual_tb",
    "residual_db",
    "residual_sql",
    "residual_fldb",
    "residual_mdb",
    "residual_pisql",
    "sac_step_losses",
    "check_equivalence",
    "all_transitions",
    "subtrajectories",
]

Term = tuple
Transition = tuple[int, int]


class ObjectiveKind(enum.Enum):
    PCL = "pcl"
    SUBTB = "subtb"
    TB = "tb"
    DB = "db"
    SQL = "sql"
    FLDB = "fldb"
    MDB = "mdb"
    PISQL = "pisql"
    SAC = "sac"

    @property
    def unit(self) -> str:
        """Trajectory-level objectives consume complete trajectories; the
        rest consume transitions."""
        if self in (ObjectiveKind.PCL, ObjectiveKind.SUBTB, ObjectiveKind.TB):
            return "trajectory"
        return "transition"

    @property
    def param_mode(self) -> ParamMode:
        if self in (ObjectiveKind.PCL, ObjectiveKind.SUBTB, ObjectiveKind.TB,
                    ObjectiveKind.DB, ObjectiveKind.FLDB):
            return ParamMode.POLICY_FLOW
        if self is ObjectiveKind.SQL:
            return ParamMode.Q_ONLY
        if self in (ObjectiveKind.MDB, ObjectiveKind.PISQL):
            return ParamMode.POLICY_ONLY
        return ParamMode.POLICY_Q

    @property
    def uses_target(self) -> bool:
        """Transition-level objectives bootstrap their value-side terms from
        a periodically frozen snapshot; trajectory-level ones do not."""
        return self.unit == "transition"

    @property
    def interior_only(self) -> bool:
        """Whether the objective's units exclude the sink transition."""
        return self in (ObjectiveKind.MDB, ObjectiveKind.PISQL)


def _check_edge(graph: SoftMdpGraph, s: int, s_next: int) -> None:
    if not graph.has_edge(s, s_next):
        raise ValueError(f"no such transition: {s} -> {s_next}")


def _require_subtrajectory(traj: Trajectory) -> None:
    if traj.num_edges < 1:
        raise ValueError("subtrajectory needs at least one transition")


# ---------------------------------------------------------------------------
# Trajectory-level residuals
# ---------------------------------------------------------------------------

def _pcl_terms(traj: Trajectory, params: TabularParams, scheme: RewardScheme):
    """Consistency of a policy with a soft value function along a
    subtrajectory; the value is alpha * log_flow. Value at the sink is 0."""
    _require_subtrajectory(traj)
    if params.log_flow is None or params.policy_logits is None:
        raise ValueError("pcl needs policy logits and log-flow parameters")
    a = scheme.alpha
    graph = params.graph
    terms: list[Term] = [("flow", traj.states[0], -a)]
    delta = -a * params.log_flow[traj.states[0]]
    if not traj.ends_at_sink:
        terms.append(("flow", traj.last_state, a))
        delta += a * params.log_flow[traj.last_state]
    for s, t in traj.transitions():
        delta += reward(scheme, s, t)
        idx = graph.child_index(s, t)
        log_pi = params.log_policy_row(s)[idx]
        delta -= a * log_pi
        terms.append(("logit", s, idx, -a))
    return delta, terms


def residual_pcl(traj: Trajectory, params: TabularParams, scheme: RewardScheme) -> float:
    return _pcl_terms(traj, params, scheme)[0]


def _subtb_terms(
    traj: Trajectory,
    params: TabularParams,
    backward: BackwardPolicy,
    energy: EnergyModel,
    alpha: float,
):
    """Flow/policy consistency along a subtrajectory. A sink-ending piece
    replaces the endpoint flow with the boundary value exp(-E/alpha)."""
    _require_subtrajectory(traj)
    if params.log_flow is None or params.policy_logits is None:
        raise ValueError("subtb needs policy logits and log-flow parameters")
    graph = params.graph
    terms: list[Term] = [("flow", traj.states[0], -1.0)]
    delta = -float(params.log_flow[traj.states[0]])
    if traj.ends_at_sink:
        delta += -energy.terminal_energy(traj.last_state) / alpha
    else:
        terms.append(("flow", traj.last_state, 1.0))
        delta += float(params.log_flow[traj.last_state])
    for s, t in traj.transitions():
        idx = graph.child_index(s, t)
        delta -= float(params.log_policy_row(s)[idx])
        terms.append(("logit", s, idx, -1.0))
        if t != SINK:
            delta += backward.log_prob(s, t)
    return delta, terms


def residual_subtb(
    traj: Trajectory,
    params: TabularParams,
    backward: BackwardPolicy,
    energy: EnergyModel,
    alpha: float,
) -> float:
    return _subtb_terms(traj, params, backward, energy, alpha)[0]


def residual_tb(
    traj: Trajectory,
    params: TabularParams,
    backward: BackwardPolicy,
    energy: EnergyModel,
    alpha: float,
) -> float:
    """Complete-trajectory special case; log_flow at the initial state plays
    the role of the learned log-partition value."""
    if not traj.ends_at_sink or traj.states[0] != params.graph.initial_state:
        raise ValueError("tb residual is defined on complete trajectories")
    return residual_subtb(traj, params, backward, energy, alpha)


# ---------------------------------------------------------------------------
# Transition-level residuals
# ---------------------------------------------------------------------------

def _db_terms(
    transition: Transition,
    params: TabularParams,
    backward: BackwardPolicy,
    energy: EnergyModel,
    alpha: float,
    target_params: TabularParams | None = None,
):
    s, t = transition
    graph = params.graph
    _check_edge(graph, s, t)
    if params.log_flow is None or params.policy_logits is None:
        raise ValueError("db needs policy logits and log-flow parameters")
    idx = graph.child_index(s, t)
    terms: list[Term] = [("flow", s, 1.0), ("logit", s, idx, 1.0)]
    delta = float(params.log_flow[s]) + float(params.log_policy_row(s)[idx])
    if t == SINK:
        delta += energy.terminal_energy(s) / alpha
    else:
        if target_params is not None:
            delta -= float(target_params.log_flow[t])
        else:
            delta -= float(params.log_flow[t])
            terms.append(("flow", t, -1.0))
        delta -= backward.log_prob(s, t)
    return delta, terms


def residual_db(
    transition: Transition,
    params: TabularParams,
    backward: BackwardPolicy,
    energy: EnergyModel,
    alpha: float,
    target_params: TabularParams | None = None,
) -> float:
    return _db_terms(transition, params, backward, energy, alpha, target_params)[0]


def _sql_terms(
    transition: Transition,
    params: TabularParams,
    scheme: RewardScheme,
    target_params: TabularParams | None = None,
):
    """Soft Bellman residual of a Q-table: Q(s, s') - (r + V(s')) with
    V(s') = alpha * logsumexp(Q(s', .) / alpha) and V(sink) = 0."""
    s, t = transition
    graph = params.graph
    _check_edge(graph, s, t)
    if params.q_values is None:
        raise ValueError("sql needs q-value parameters")
    a = scheme.alpha
    idx = graph.child_index(s, t)
    terms: list[Term] = [("q", s, idx, 1.0)]
    delta = float(params.q_values[s][idx]) - reward(scheme, s, t)
    if t != SINK:
        if target_params is not None:
            delta -= target_params.soft_value(t, a)
        else:
            delta -= params.soft_value(t, a)
            terms.append(("lse_q", t, -1.0))
    return delta, terms


def residual_sql(
    transition: Transition,
    params: TabularParams,
    scheme: RewardScheme,
    target_params: TabularParams | None = None,
) -> float:
    return _sql_terms(transition, params, scheme, target_params)[0]


def _fldb_terms(
    transition: Transition,
    params: TabularParams,
    backward: BackwardPolicy,
    energy: EnergyModel,
    alpha: float,
    target_params: TabularParams | None = None,
):
    """Detailed balance on the offset flow, charging the per-edge energy
    increment; interior transitions only."""
    s, t = transition
    graph = params.graph
    if t == SINK:
        raise ValueError("forward-looking residual is undefined on sink transitions")
    _check_edge(graph, s, t)
    if params.log_flow is None or params.policy_logits is None:
        raise ValueError("fldb needs policy logits and log-flow parameters")
    idx = graph.child_index(s, t)
    terms: list[Term] = [("flow", s, -1.0), ("logit", s, idx, -1.0)]
    delta = -float(params.log_flow[s]) - float(params.log_policy_row(s)[idx])
    if target_params is not None:
        delta += float(target_params.log_flow[t])
    else:
        delta += float(params.log_flow[t])
        terms.append(("flow", t, 1.0))
    delta += backward.log_prob(s, t)
    delta -= energy.edge_energy(graph, s, t) / alpha
    return delta, terms


def residual_fldb(
    transition: Transition,
    params: TabularParams,
    backward: BackwardPolicy,
    energy: EnergyModel,
    alpha: float,
    target_params: TabularParams | None = None,
) -> float:
    return _fldb_terms(transition, params, backward, energy, alpha, target_params)[0]


def _fldb_boundary_terms(state: int, params: TabularParams):
    """Sink-transition flow consistency used during training: the offset
    flow times the termination probability must be one, i.e.
    log F(x) + log pi(sink | x) = 0."""
    graph = params.graph
    if not graph.terminating[state]:
        raise ValueError(f"state {state} has no sink transition")
    idx = graph.child_index(state, SINK)
    delta = float(params.log_flow[state]) + float(params.log_policy_row(state)[idx])
    return delta, [("flow", state, 1.0), ("logit", state, idx, 1.0)]


def _mdb_terms(
    transition: Transition,
    params: TabularParams,
    backward: BackwardPolicy,
    energy: EnergyModel,
    alpha: float,
    target_params: TabularParams | None = None,
):
    """All-states-terminating detailed balance written purely in terms of a
    policy and per-state energies."""
    s, t = transition
    graph = params.graph
    if t == SINK:
        raise ValueError("modified-db residual is undefined on sink transitions")
    _check_edge(graph, s, t)
    if not all(graph.terminating):
        raise ValueError("modified-db requires every state to terminate")
    if not energy.has_state_energy:
        raise ValueError("modified-db requires per-state energies")
    if params.policy_logits is None:
        raise ValueError("modified-db needs policy logits")
    e = energy.state
    idx_t = graph.child_index(s, t)
    idx_sink_s = graph.child_index(s, SINK)
    idx_sink_t = graph.child_index(t, SINK)
    log_row_s = params.log_policy_row(s)
    delta = (
        (float(e[s]) - float(e[t])) / alpha
        + backward.log_prob(s, t)
        + float(log_row_s[idx_sink_s])
        - float(log_row_s[idx_t])
    )
    terms: list[Term] = [
        ("logit", s, idx_sink_s, 1.0),
        ("logit", s, idx_t, -1.0),
    ]
    if target_params is not None:
        delta -= float(target_params.log_policy_row(t)[idx_sink_t])
    else:
        delta -= float(params.log_policy_row(t)[idx_sink_t])
        terms.append(("logit", t, idx_sink_t, -1.0))
    return delta, terms


def residual_mdb(
    transition: Transition,
    params: TabularParams,
    backward: BackwardPolicy,
    energy: EnergyModel,
    alpha: float,
    target_params: TabularParams | None = None,
) -> float:
    return _mdb_terms(transition, params, backward, energy, alpha, target_params)[0]


def _pisql_terms(
    transition: Transition,
    params: TabularParams,
    scheme: RewardScheme,
    target_params: TabularParams | None = None,
):
    """Soft Bellman residual rewritten in terms of a policy alone; valid when
    every state terminates and the termination reward is zero."""
    s, t = transition
    graph = params.graph
    if t == SINK:
        raise ValueError("policy-parametrized residual is undefined on sink transitions")
    _check_edge(graph, s, t)
    if scheme.kind is not RewardKind.DENSE:
        raise ValueError("policy-parametrized soft Q-learning needs the dense scheme")
    if params.policy_logits is None:
        raise ValueError("pisql needs policy logits")
    a = scheme.alpha
    idx_t = graph.child_index(s, t)
    idx_sink_s = graph.child_index(s, SINK)
    idx_sink_t = graph.child_index(t, SINK)
    log_row_s = params.log_policy_row(s)
    delta = a * (float(log_row_s[idx_t]) - float(log_row_s[idx_sink_s]))
    terms: list[Term] = [
        ("logit", s, idx_t, a),
        ("logit", s, idx_sink_s, -a),
    ]
    if target_params is not None:
        delta += a * float(target_params.log_policy_row(t)[idx_sink_t])
    else:
        delta += a * float(params.log_policy_row(t)[idx_sink_t])
        terms.append(("logit", t, idx_sink_t, a))
    delta -= reward(scheme, s, t)
    return delta, terms


def residual_pisql(
    transition: Transition,
    params: TabularParams,
    scheme: RewardScheme,
    target_params: TabularParams | None = None,
) -> float:
    return _pisql_terms(transition, params, scheme, target_params)[0]


# ---------------------------------------------------------------------------
# Discrete soft actor-critic
# ---------------------------------------------------------------------------

def _sac_components(
    batch: list[Transition],
    params: TabularParams,
    scheme: RewardScheme,
    target_params: TabularParams | None,
    frozen: TabularParams,
):
    """Per-transition critic residuals and per-transition actor KL pieces.

    The critic bootstraps V(s') as the expectation, under the frozen copy of
    the current policy, of (Q_target - alpha log pi); the actor matches the
    policy to softmax(Q / alpha) of the frozen critic. Cross-terms are
    constants, matching the usual stop-gradients.
    """
    if params.mode is not ParamMode.POLICY_Q:
        raise ValueError("sac needs separate policy logits and q-values")
    a = scheme.alpha
    graph = params.graph
    q_source = target_params if target_params is not None else frozen
    critic: list[tuple[float, int, int]] = []  # (delta, s, action index)
    actor: list[tuple[float, int, np.ndarray, np.ndarray]] = []  # (kl, s, log_pi, log_ref)
    for s, t in batch:
        _check_edge(graph, s, t)
        idx = graph.child_index(s, t)
        delta = float(params.q_values[s][idx]) - reward(scheme, s, t)
        if t != SINK:
            log_pi_next = frozen.log_policy_row(t)
            q_next = q_source.q_values[t]
            pi_next = np.exp(log_pi_next)
            v_next = float(np.dot(pi_next, q_next - a * log_pi_next))
            delta -= v_next
        critic.append((delta, s, idx))

        log_pi = params.log_policy_row(s)
        ref = frozen.q_values[s] / a
        shifted = ref - float(ref.max())
        log_ref = shifted - float(np.log(np.exp(shifted).sum()))
        kl = float(np.dot(np.exp(log_pi), log_pi - log_ref))
        actor.append((kl, s, log_pi, log_ref))
    return critic, actor


def sac_step_losses(
    batch: list[Transition],
    params: TabularParams,
    target_q: TabularParams | None,
    scheme: RewardScheme,
    frozen: TabularParams | None = None,
) -> tuple[float, float]:
    """(critic, actor) losses for one batch: half mean squared soft-Bellman
    residual, and mean KL from the policy to the critic's softmax."""
    frozen = frozen if frozen is not None else params.copy()
    critic, actor = _sac_components(batch, params, scheme, target_q, frozen)
    critic_loss = 0.5 * float(np.mean([d * d for d, _, _ in critic])) if critic else 0.0
    actor_loss = float(np.mean([k for k, _, _, _ in actor])) if actor else 0.0
    return critic_loss, actor_loss


# ---------------------------------------------------------------------------
# Unit pools and equivalence certification
# ---------------------------------------------------------------------------

def all_transitions(graph: SoftMdpGraph, include_sink: bool = True) -> list[Transition]:
    pool: list[Transition] = list(graph.edges())
    if include_sink:
        pool += [(x, SINK) for x in graph.terminating_states()]
    return pool


def subtrajectories(traj: Trajectory) -> list[Trajectory]:
    """All contiguous subtrajectories of a complete trajectory, with and
    without the final sink hop, each with at least one transition."""
    if not traj.ends_at_sink:
        raise ValueError("expected a complete trajectory")
    states = traj.states
    n = len(states)
    out: list[Trajectory] = []
    for m in range(n):
        for end in range(m + 1, n):
            out.append(Trajectory(states[m : end + 1], ends_at_sink=False))
        out.append(Trajectory(states[m:], ends_at_sink=True))
    return out


@dataclass(frozen=True)
class EquivalencePair:
    name: str
    rl: ObjectiveKind
    gfn: ObjectiveKind
    sign: float            # delta_rl = sign * alpha * delta_gfn
    required_kind: RewardKind

    @classmethod
    def by_name(cls, name: str) -> "EquivalencePair":
        try:
            return _PAIRS[name]
        except KeyError:
            raise ValueError(
                f"unknown pair {name!r}; expected one of {sorted(_PAIRS)}"
            ) from None


_PAIRS = {
    "pcl_subtb": EquivalencePair("pcl_subtb", ObjectiveKind.PCL, ObjectiveKind.SUBTB, +1.0, RewardKind.TERMINAL),
    "sql_db": EquivalencePair("sql_db", ObjectiveKind.SQL, ObjectiveKind.DB, +1.0, RewardKind.TERMINAL),
    "pisql_mdb": EquivalencePair("pisql_mdb", ObjectiveKind.PISQL, ObjectiveKind.MDB, -1.0, RewardKind.DENSE),
    "sql_fldb": EquivalencePair("sql_fldb", ObjectiveKind.SQL, ObjectiveKind.FLDB, -1.0, RewardKind.FORWARD_LOOKING),
}


@dataclass
class EquivalenceReport:
    pair: str
    alpha: float
    trials: int
    tol: float
    max_residual_gap: float = 0.0
    max_loss_ratio_error: float = 0.0
    failures: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json_dict(self) -> dict:
        return {
            "pair": self.pair,
            "alpha": self.alpha,
            "trials": self.trials,
            "tol": self.tol,
            "passed": self.passed,
            "max_residual_gap": self.max_residual_gap,
            "max_loss_ratio_error": self.max_loss_ratio_error,
            "failures": self.failures[:10],
        }


def _random_walk(graph: SoftMdpGraph, rng: np.random.Generator) -> Trajectory:
    states = [graph.initial_state]
    while True:
        s = states[-1]
        targets = graph.action_targets(s)
        t = targets[rng.integers(len(targets))]
        if t == SINK:
            return Trajectory(tuple(states), ends_at_sink=True)
        states.append(t)


def _random_params(
    graph: SoftMdpGraph, mode: ParamMode, rng: np.random.Generator
) -> TabularParams:
    return init_params(graph, mode, init="normal", sigma=1.0, seed=int(rng.integers(2**63)))


def check_equivalence(
    pair: str | EquivalencePair,
    graph: SoftMdpGraph,
    scheme: RewardScheme,
    trials: int = 100,
    tol: float = 1e-9,
    seed: int = 0,
    units_per_trial: int = 8,
) -> EquivalenceReport:
    """Certify the residual identity delta_RL = sign * alpha * delta_GFN and
    the loss ratio alpha^2 over random parameter draws and random units.

    Structural impossibilities (e.g. a policy-only pair on a graph that is
    not all-terminating) raise; a scheme whose reward does not match the
    pair's required form runs and is reported as a violation.
    """
    pair = EquivalencePair.by_name(pair) if isinstance(pair, str) else pair
    if scheme.backward is None:
        raise ValueError("equivalence checks need a scheme with a backward policy")
    if pair.name == "pisql_mdb":
        if not all(graph.terminating):
            raise ValueError("pisql_mdb requires every state to terminate")
        if not scheme.energy.has_state_energy:
            raise ValueError("pisql_mdb requires per-state energies")
        if scheme.kind is not RewardKind.DENSE:
            raise ValueError("pisql_mdb requires the dense reward scheme")
    if pair.name == "sql_fldb" and not scheme.energy.has_edge_energy:
        raise ValueError("sql_fldb requires per-edge energies")

    rng = np.random.default_rng(seed)
    alpha = scheme.alpha
    backward, energy = scheme.backward, scheme.energy
    report = EquivalenceReport(pair=pair.name, alpha=alpha, trials=trials, tol=tol)

    interior_only = pair.name in ("pisql_mdb", "sql_fldb")
    pool = all_transitions(graph, include_sink=not interior_only)

    for trial in range(trials):
        params = _random_params(graph, pair.rl.param_mode, rng)
        if pair.rl.param_mode is ParamMode.Q_ONLY:
            gfn_params = apply_correspondence("q_to_pf_flow", params, alpha)
        else:
            gfn_params = params

        if pair.name == "pcl_subtb":
            units = []
            for _ in range(units_per_trial):
                walk = _random_walk(graph, rng)
                subs = subtrajectories(walk)
                units.append(subs[rng.integers(len(subs))])
            deltas_rl = [residual_pcl(u, params, scheme) for u in units]
            deltas_gfn = [
                residual_subtb(u, gfn_params, backward, energy, alpha) for u in units
            ]
        else:
            units = [pool[rng.integers(len(pool))] for _ in range(units_per_trial)]
            if pair.name == "sql_db":
                deltas_rl = [residual_sql(u, params, scheme) for u in units]
                deltas_gfn = [
                    residual_db(u, gfn_params, backward, energy, alpha) for u in units
                ]
            elif pair.name == "sql_fldb":
                deltas_rl = [residual_sql(u, params, scheme) for u in units]
                deltas_gfn = [
                    residual_fldb(u, gfn_params, backward, energy, alpha) for u in units
                ]
            else:  # pisql_mdb
                deltas_rl = [residual_pisql(u, params, scheme) for u in units]
                deltas_gfn = [
                    residual_mdb(u, gfn_params, backward, energy, alpha) for u in units
                ]

        for unit, d_rl, d_gfn in zip(units, deltas_rl, deltas_gfn):
            gap = abs(d_rl - pair.sign * alpha * d_gfn)
            report.max_residual_gap = max(report.max_residual_gap, gap)
            if gap > tol:
                report.failures.append(
                    {
                        "trial": trial,
                        "unit": _unit_json(unit),
                        "delta_rl": d_rl,
                        "delta_gfn": d_gfn,
                        "gap": gap,
                    }
                )

        loss_rl = 0.5 * float(np.mean(np.square(deltas_rl)))
        loss_gfn = 0.5 * float(np.mean(np.square(deltas_gfn)))
        if loss_gfn > 0:
            ratio_err = abs(loss_rl / loss_gfn - alpha**2)
            report.max_loss_ratio_error = max(report.max_loss_ratio_error, ratio_err)
            if ratio_err > max(tol, 1e-8):
                report.failures.append(
                    {"trial": trial, "loss_rl": loss_rl, "loss_gfn": loss_gfn,
                     "ratio_error": ratio_err}
                )
    return report


def _unit_json(unit) -> object:
    if isinstance(unit, Trajectory):
        return {"states": list(unit.states), "ends_at_sink": unit.ends_at_sink}
    return list(unit)
