"""DAG-structured soft MDP with an implicit terminal sink.

States are dense integer indices. The sink is never stored: a state with
``terminating[s] = True`` owns one extra action (index ``len(children[s])``)
that moves to the sink. Graphs are immutable after construction and all
operations here are pure functions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

#: Pseudo-index used for the implicit sink in (state, successor) pairs.
SINK = -1

#: Trajectory counts beyond this bound abort counting instead of silently
#: degrading float-backed ratios downstream (counts grow factorially).
MAX_TRAJECTORY_COUNT = 2**127 - 1


class GraphError(ValueError):
    """Structural problem with a graph or trajectory."""


class CycleError(GraphError):
    """A topological sort found a cycle."""

    def __init__(self, states_in_cycles: Sequence[int]):
        self.states_in_cycles = tuple(states_in_cycles)
        super().__init__(f"cycle detected involving states {self.states_in_cycles}")


class TrajectoryCountOverflowError(GraphError):
    """A partial-trajectory count exceeded MAX_TRAJECTORY_COUNT."""

    def __init__(self, state: int):
        self.state = state
        super().__init__(
            f"trajectory count at state {state} exceeds {MAX_TRAJECTORY_COUNT}"
        )


class EnumerationCapError(GraphError):
    """Complete-trajectory enumeration would exceed the caller's cap."""

    def __init__(self, total: int, cap: int):
        self.total = total
        self.cap = cap
        super().__init__(f"graph has {total} complete trajectories, cap is {cap}")


@dataclass(frozen=True)
class SoftMdpGraph:
    """Immutable DAG over states, rooted at ``initial_state``.

    ``children[s]`` lists the successor states of ``s`` in action order;
    ``terminating[s]`` marks states with an edge to the implicit sink.
    ``parents`` is derived and cached at construction. ``labels`` is an
    optional human-readable decoder, one string per state.
    """

    num_states: int
    initial_state: int
    children: tuple[tuple[int, ...], ...]
    terminating: tuple[bool, ...]
    labels: tuple[str, ...] | None = None
    parents: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        n = self.num_states
        if n <= 0:
            raise GraphError("graph needs at least one state")
        if not (0 <= self.initial_state < n):
            raise GraphError(f"initial_state {self.initial_state} out of range")
        if len(self.children) != n or len(self.terminating) != n:
            raise GraphError("children/terminating must have one entry per state")
        if self.labels is not None and len(self.labels) != n:
            raise GraphError("labels must have one entry per state")
        object.__setattr__(self, "children", tuple(tuple(cs) for cs in self.children))
        object.__setattr__(self, "terminating", tuple(bool(t) for t in self.terminating))
        parents: list[list[int]] = [[] for _ in range(n)]
        for s, cs in enumerate(self.children):
            seen = set()
            for c in cs:
                if not (0 <= c < n):
                    raise GraphError(f"edge {s}->{c} out of range")
                if c in seen:
                    raise GraphError(f"duplicate edge {s}->{c}")
                seen.add(c)
                parents[c].append(s)
        object.__setattr__(self, "parents", tuple(tuple(ps) for ps in parents))

    # -- basic accessors -------------------------------------------------

    def label(self, s: int) -> str:
        return self.labels[s] if self.labels is not None else str(s)

    def num_actions(self, s: int) -> int:
        """Children plus the terminate action when ``s`` is terminating."""
        return len(self.children[s]) + (1 if self.terminating[s] else 0)

    def action_targets(self, s: int) -> tuple[int, ...]:
        """Successor of each action at ``s``; the sink appears as SINK, last."""
        if self.terminating[s]:
            return self.children[s] + (SINK,)
        return self.children[s]

    def edges(self) -> Iterator[tuple[int, int]]:
        """All interior edges (no sink edges)."""
        for s, cs in enumerate(self.children):
            for c in cs:
                yield (s, c)

    def terminating_states(self) -> tuple[int, ...]:
        return tuple(s for s in range(self.num_states) if self.terminating[s])

    def has_edge(self, s: int, s_next: int) -> bool:
        if s_next == SINK:
            return self.terminating[s]
        return s_next in self.children[s]

    def child_index(self, s: int, s_next: int) -> int:
        """Action index of the transition ``s -> s_next`` (SINK allowed)."""
        if s_next == SINK:
            if not self.terminating[s]:
                raise GraphError(f"state {s} has no sink edge")
            return len(self.children[s])
        try:
            return self.children[s].index(s_next)
        except ValueError:
            raise GraphError(f"no edge {s}->{s_next}") from None

    # -- serialization ---------------------------------------------------

    def to_json_dict(self) -> dict:
        out = {
            "num_states": self.num_states,
            "initial_state": self.initial_state,
            "edges": [[s, c] for s, c in self.edges()],
            "terminating": list(self.terminating),
        }
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out

    @classmethod
    def from_json_dict(cls, d: dict) -> "SoftMdpGraph":
        n = int(d["num_states"])
        children: list[list[int]] = [[] for _ in range(n)]
        for s, c in d["edges"]:
            if not (0 <= int(s) < n):
                raise GraphError(f"edge source {s} out of range")
            children[int(s)].append(int(c))
        return cls(
            num_states=n,
            initial_state=int(d["initial_state"]),
            children=tuple(tuple(cs) for cs in children),
            terminating=tuple(bool(t) for t in d["terminating"]),
            labels=tuple(d["labels"]) if "labels" in d else None,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, text: str) -> "SoftMdpGraph":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class Trajectory:
    """Ordered state sequence; ``ends_at_sink`` marks a final hop to the sink.

    ``states`` lists only real states. A complete trajectory starts at the
    graph's initial state and has ``ends_at_sink = True``.
    """

    states: tuple[int, ...]
    ends_at_sink: bool = False

    def __post_init__(self):
        if len(self.states) == 0:
            raise GraphError("trajectory needs at least one state")
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))

    @property
    def num_edges(self) -> int:
        return len(self.states) - 1 + (1 if self.ends_at_sink else 0)

    @property
    def last_state(self) -> int:
        return self.states[-1]

    def transitions(self) -> Iterator[tuple[int, int]]:
        """(s, s') pairs in order; the sink hop appears as (s_T, SINK)."""
        for a, b in zip(self.states, self.states[1:]):
            yield (a, b)
        if self.ends_at_sink:
            yield (self.states[-1], SINK)

    def interior_transitions(self) -> Iterator[tuple[int, int]]:
        yield from zip(self.states, self.states[1:])


def is_valid_trajectory(graph: SoftMdpGraph, traj: Trajectory) -> bool:
    """Consecutive states must be edges; a sink hop needs a terminating state."""
    for a, b in traj.interior_transitions():
        if not graph.has_edge(a, b):
            return False
    if traj.ends_at_sink and not graph.terminating[traj.last_state]:
        return False
    return True


def is_complete_trajectory(graph: SoftMdpGraph, traj: Trajectory) -> bool:
    return (
        traj.states[0] == graph.initial_state
        and traj.ends_at_sink
        and is_valid_trajectory(graph, traj)
    )


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: object = None


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def validate_dag(graph: SoftMdpGraph) -> ValidationReport:
    """Check acyclicity, reachability, co-reachability and derived-parent
    consistency. Violations are data, not exceptions."""
    violations: list[Violation] = []
    n = graph.num_states

    # Acyclicity via Kahn's algorithm; leftovers sit on or behind a cycle.
    indeg = [len(graph.parents[s]) for s in range(n)]
    queue = [s for s in range(n) if indeg[s] == 0]
    seen = 0
    head = 0
    indeg_work = list(indeg)
    while head < len(queue):
        s = queue[head]
        head += 1
        seen += 1
        for c in graph.children[s]:
            indeg_work[c] -= 1
            if indeg_work[c] == 0:
                queue.append(c)
    if seen != n:
        cyc = tuple(s for s in range(n) if indeg_work[s] > 0)
        violations.append(Violation("cycle", cyc))

    if graph.parents[graph.initial_state]:
        violations.append(Violation("initial_state_has_parents", graph.initial_state))

    # Parent lists are derived at construction; re-derive and compare anyway.
    derived: list[list[int]] = [[] for _ in range(n)]
    for s, c in graph.edges():
        derived[c].append(s)
    for s in range(n):
        if tuple(derived[s]) != graph.parents[s]:
            violations.append(Violation("parent_child_mismatch", s))

    if not any(graph.terminating):
        violations.append(Violation("no_terminating_state", None))

    # Reachability from the initial state (only meaningful without cycles,
    # but BFS is safe either way).
    reach = [False] * n
    stack = [graph.initial_state]
    reach[graph.initial_state] = True
    while stack:
        s = stack.pop()
        for c in graph.children[s]:
            if not reach[c]:
                reach[c] = True
                stack.append(c)
    for s in range(n):
        if not reach[s]:
            violations.append(Violation("unreachable", s))

    # Co-reachability: every state must reach some terminating state.
    coreach = [graph.terminating[s] for s in range(n)]
    stack = [s for s in range(n) if coreach[s]]
    while stack:
        s = stack.pop()
        for p in graph.parents[s]:
            if not coreach[p]:
                coreach[p] = True
                stack.append(p)
    for s in range(n):
        if not coreach[s]:
            violations.append(Violation("dead_end", s))

    return ValidationReport(tuple(violations))


def topological_order(graph: SoftMdpGraph) -> list[int]:
    """Kahn order (FIFO, index-seeded, deterministic); initial state first."""
    n = graph.num_states
    indeg = [len(graph.parents[s]) for s in range(n)]
    queue = [graph.initial_state] if indeg[graph.initial_state] == 0 else []
    queue += [s for s in range(n) if indeg[s] == 0 and s != graph.initial_state]
    order: list[int] = []
    head = 0
    while head < len(queue):
        s = queue[head]
        head += 1
        order.append(s)
        for c in graph.children[s]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if len(order) != n:
        raise CycleError([s for s in range(n) if indeg[s] > 0])
    return order


def count_trajectories(graph: SoftMdpGraph) -> list[int]:
    """n(s): number of distinct partial trajectories from the initial state.

    Exact integer forward DP: n(s0) = 1, n(s') = sum over parents of n(s).
    Counts above MAX_TRAJECTORY_COUNT raise instead of propagating values
    that float conversion downstream could not represent faithfully.
    """
    order = topological_order(graph)
    n = [0] * graph.num_states
    n[graph.initial_state] = 1
    for s in order:
        for c in graph.children[s]:
            n[c] += n[s]
            if n[c] > MAX_TRAJECTORY_COUNT:
                raise TrajectoryCountOverflowError(c)
    return n


def total_complete_trajectories(graph: SoftMdpGraph) -> int:
    counts = count_trajectories(graph)
    return sum(counts[x] for x in graph.terminating_states())


def enumerate_complete_trajectories(
    graph: SoftMdpGraph, cap: int = 1_000_000
) -> list[Trajectory]:
    """Every complete trajectory s0 ~> x -> sink, exactly once, DFS order.

    Fails up front (naming the count) when the graph holds more than ``cap``
    trajectories.
    """
    total = total_complete_trajectories(graph)
    if total > cap:
        raise EnumerationCapError(total, cap)
    out: list[Trajectory] = []
    path: list[int] = [graph.initial_state]

    def walk(s: int):
        if graph.terminating[s]:
            out.append(Trajectory(tuple(path), ends_at_sink=True))
        for c in graph.children[s]:
            path.append(c)
            walk(c)
            path.pop()

    walk(graph.initial_state)
    return out
