"""Concrete soft MDPs and their energy functions.

Four builders: a 6-state two-branch toy DAG, any-order factor-graph
assignment, an all-states-terminating subset lattice, and phylogenetic
tree assembly scored by parsimony. Each returns ``(SoftMdpGraph,
EnergyModel)``; constructed environments are immutable.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .graph import SoftMdpGraph

__all__ = [
    "EnergyModel",
    "EnvLimitError",
    "FactorGraphSpec",
    "PhyloSpec",
    "build_toy_dag",
    "build_factor_graph_env",
    "build_subset_env",
    "build_phylo_env",
    "fitch_root_mutations",
]


class EnvLimitError(ValueError):
    """An environment would exceed a configured size limit."""


@dataclass(frozen=True)
class EnergyModel:
    """Energies attached to a graph, in nats.

    ``terminal`` holds the energy of each terminating state (NaN elsewhere);
    ``edge`` optionally decomposes the terminal energy into per-edge
    increments (rows aligned with ``graph.children``); ``state`` optionally
    assigns an energy to every state when all states terminate, normalized
    so the initial state has energy 0.
    """

    terminal: np.ndarray
    terminal_states: tuple[int, ...]
    edge: tuple[np.ndarray, ...] | None = None
    state: np.ndarray | None = None

    @property
    def has_edge_energy(self) -> bool:
        return self.edge is not None

    @property
    def has_state_energy(self) -> bool:
        return self.state is not None

    def terminal_energy(self, x: int) -> float:
        e = self.terminal[x]
        if np.isnan(e):
            raise ValueError(f"state {x} is not terminating, it has no terminal energy")
        return float(e)

    def edge_energy(self, graph: SoftMdpGraph, s: int, s_next: int) -> float:
        if self.edge is None:
            raise ValueError("this energy model has no edge decomposition")
        return float(self.edge[s][graph.child_index(s, s_next)])

    def terminal_vector(self) -> np.ndarray:
        """Energies over ``terminal_states``, in that order."""
        return self.terminal[list(self.terminal_states)].astype(float)


def _terminal_array(graph: SoftMdpGraph, energies: Mapping[int, float]) -> np.ndarray:
    arr = np.full(graph.num_states, np.nan)
    for x in graph.terminating_states():
        arr[x] = float(energies[x])
    return arr


# ---------------------------------------------------------------------------
# Two-branch toy DAG
# ---------------------------------------------------------------------------

def build_toy_dag(
    energies: Sequence[float] = (0.0, 0.0, 0.0),
) -> tuple[SoftMdpGraph, EnergyModel]:
    """Six-state DAG where one leaf is reachable along two paths.

    States: s0 -> {s1, s2}; s1 -> {x3, x4}; s2 -> {x4, x5}; exactly
    x3, x4, x5 terminate. ``energies`` are the terminal energies of
    (x3, x4, x5). The edge decomposition charges each terminal energy on
    the final interior edge, so the branch edges from s0 cost 0.
    """
    e3, e4, e5 = (float(e) for e in energies)
    graph = SoftMdpGraph(
        num_states=6,
        initial_state=0,
        children=((1, 2), (3, 4), (4, 5), (), (), ()),
        terminating=(False, False, False, True, True, True),
        labels=("s0", "s1", "s2", "x3", "x4", "x5"),
    )
    terminal = _terminal_array(graph, {3: e3, 4: e4, 5: e5})
    edge = (
        np.array([0.0, 0.0]),
        np.array([e3, e4]),
        np.array([e4, e5]),
        np.array([]),
        np.array([]),
        np.array([]),
    )
    return graph, EnergyModel(terminal=terminal, terminal_states=(3, 4, 5), edge=edge)


# ---------------------------------------------------------------------------
# Any-order factor-graph assignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FactorGraphSpec:
    """``d`` discrete variables with ``K`` values each and a list of factors.

    Each factor is ``(scope, table)`` with ``scope`` a tuple of variable
    indices and ``table`` a potential array of shape ``(K,) * len(scope)``.
    The energy of a complete assignment v is minus the sum of the factor
    potentials evaluated on v.
    """

    d: int
    K: int
    factors: tuple[tuple[tuple[int, ...], np.ndarray], ...]

    def __post_init__(self):
        if self.d < 1 or self.K < 1:
            raise ValueError("need d >= 1 and K >= 1")
        factors = []
        for scope, table in self.factors:
            scope = tuple(int(i) for i in scope)
            if not scope or len(set(scope)) != len(scope):
                raise ValueError(f"bad factor scope {scope}")
            if any(not (0 <= i < self.d) for i in scope):
                raise ValueError(f"factor scope {scope} out of range")
            table = np.asarray(table, dtype=float)
            if table.shape != (self.K,) * len(scope):
                raise ValueError(
                    f"factor table for scope {scope} must have shape "
                    f"{(self.K,) * len(scope)}, got {table.shape}"
                )
            factors.append((scope, table))
        object.__setattr__(self, "factors", tuple(factors))

    @classmethod
    def random_chain(cls, d: int, K: int, seed: int) -> "FactorGraphSpec":
        """Pairwise chain factors (i, i+1) with i.i.d. standard normal tables."""
        rng = np.random.default_rng(seed)
        factors = tuple(
            ((i, i + 1), rng.standard_normal((K, K))) for i in range(d - 1)
        )
        return cls(d=d, K=K, factors=factors)


def _assignment_energy(spec: FactorGraphSpec, values: tuple[int, ...]) -> float:
    total = 0.0
    for scope, table in spec.factors:
        total -= float(table[tuple(values[i] for i in scope)])
    return total


def build_factor_graph_env(
    spec: FactorGraphSpec, max_states: int = 200_000
) -> tuple[SoftMdpGraph, EnergyModel]:
    """States are partial assignments; actions set any unset variable.

    A factor's potential is charged on the transition that assigns the last
    unset variable of its scope, so the per-edge increments along every
    complete trajectory sum to the terminal energy.
    """
    d, K = spec.d, spec.K
    num_states = (K + 1) ** d
    if num_states > max_states:
        raise EnvLimitError(
            f"(K+1)^d = {num_states} states exceeds max_states = {max_states}"
        )

    # Mixed-radix encoding: digit 0 = unset, digit v+1 = value v.
    weights = [(K + 1) ** i for i in range(d)]

    def index_of(digits: tuple[int, ...]) -> int:
        return sum(dig * w for dig, w in zip(digits, weights))

    children: list[tuple[int, ...]] = []
    terminating: list[bool] = []
    labels: list[str] = []
    edge_rows: list[np.ndarray] = []
    terminal: dict[int, float] = {}

    for idx in range(num_states):
        digits = tuple((idx // w) % (K + 1) for w in weights)
        kids: list[int] = []
        costs: list[float] = []
        unset = [i for i in range(d) if digits[i] == 0]
        for i in unset:
            for v in range(K):
                nxt = list(digits)
                nxt[i] = v + 1
                kids.append(index_of(tuple(nxt)))
                costs.append(_partial_energy(spec, tuple(nxt), i))
        complete = not unset
        children.append(tuple(kids))
        terminating.append(complete)
        labels.append("".join("_" if g == 0 else str(g - 1) for g in digits))
        edge_rows.append(np.asarray(costs, dtype=float))
        if complete:
            terminal[idx] = _assignment_energy(
                spec, tuple(g - 1 for g in digits)
            )

    graph = SoftMdpGraph(
        num_states=num_states,
        initial_state=0,
        children=tuple(children),
        terminating=tuple(terminating),
        labels=tuple(labels),
    )
    energy = EnergyModel(
        terminal=_terminal_array(graph, terminal),
        terminal_states=graph.terminating_states(),
        edge=tuple(edge_rows),
    )
    return graph, energy


def _partial_energy(spec: FactorGraphSpec, digits_after: tuple[int, ...], var: int) -> float:
    """Energy increment for the assignment of ``var``: minus the potentials of
    every factor containing ``var`` whose scope is fully set afterwards."""
    total = 0.0
    for scope, table in spec.factors:
        if var not in scope:
            continue
        if any(digits_after[i] == 0 for i in scope):
            continue
        total -= float(table[tuple(digits_after[i] - 1 for i in scope)])
    return total


# ---------------------------------------------------------------------------
# Subset lattice (every state terminates)
# ---------------------------------------------------------------------------

def build_subset_env(
    n: int,
    state_energy: Sequence[float] | Mapping[frozenset, float] | Callable[[frozenset], float],
    max_states: int = 200_000,
) -> tuple[SoftMdpGraph, EnergyModel]:
    """Subsets of {1..n} under one-element insertions; all states terminate.

    ``state_energy`` may be an array indexed by bitmask, a mapping keyed by
    frozenset of elements, or a callable on frozensets. Energies are shifted
    so the empty set costs 0; edges carry the energy difference, which
    telescopes to the terminal energy along every trajectory.
    """
    num_states = 1 << n
    if num_states > max_states:
        raise EnvLimitError(f"2^n = {num_states} states exceeds max_states = {max_states}")

    def members(mask: int) -> frozenset:
        return frozenset(i + 1 for i in range(n) if mask >> i & 1)

    if callable(state_energy):
        energies = np.array([float(state_energy(members(m))) for m in range(num_states)])
    elif isinstance(state_energy, Mapping):
        energies = np.array([float(state_energy[members(m)]) for m in range(num_states)])
    else:
        energies = np.asarray(state_energy, dtype=float)
        if energies.shape != (num_states,):
            raise ValueError(f"state_energy must have {num_states} entries")
        energies = energies.copy()
    energies -= energies[0]  # offset invariance: pin the empty set at 0

    children = tuple(
        tuple(mask | (1 << i) for i in range(n) if not mask >> i & 1)
        for mask in range(num_states)
    )
    labels = tuple(
        "{" + ",".join(str(i + 1) for i in range(n) if mask >> i & 1) + "}"
        for mask in range(num_states)
    )
    graph = SoftMdpGraph(
        num_states=num_states,
        initial_state=0,
        children=children,
        terminating=(True,) * num_states,
        labels=labels,
    )
    edge_rows = tuple(
        np.array([energies[c] - energies[mask] for c in children[mask]])
        for mask in range(num_states)
    )
    energy = EnergyModel(
        terminal=energies.copy(),
        terminal_states=tuple(range(num_states)),
        edge=edge_rows,
        state=energies,
    )
    return graph, energy


# ---------------------------------------------------------------------------
# Phylogenetic tree assembly with parsimony scoring
# ---------------------------------------------------------------------------

_BASE_BITS = {"A": 1, "C": 2, "G": 4, "T": 8}
_BITS_BASE = {v: k for k, v in _BASE_BITS.items()}


@dataclass(frozen=True)
class PhyloSpec:
    """Species sequences over {A, C, G, T} plus the energy divisor ``scale``."""

    sequences: tuple[str, ...]
    scale: float = 4.0

    def __post_init__(self):
        seqs = tuple(str(s).upper() for s in self.sequences)
        if len(seqs) < 2:
            raise ValueError("need at least 2 species")
        length = len(seqs[0])
        if any(len(s) != length for s in seqs):
            raise ValueError("all sequences must have the same length")
        for s in seqs:
            bad = set(s) - set(_BASE_BITS)
            if bad:
                raise ValueError(f"sequence has characters outside ACGT: {sorted(bad)}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "sequences", seqs)

    @property
    def d(self) -> int:
        return len(self.sequences)

    @classmethod
    def random(cls, d: int, length: int, seed: int, scale: float = 4.0) -> "PhyloSpec":
        rng = np.random.default_rng(seed)
        bases = np.array(list("ACGT"))
        seqs = tuple("".join(rng.choice(bases, size=length)) for _ in range(d))
        return cls(sequences=seqs, scale=scale)


def _sets_to_masks(sets: Sequence) -> np.ndarray:
    masks = []
    for site in sets:
        m = 0
        for ch in site:
            try:
                m |= _BASE_BITS[str(ch).upper()]
            except KeyError:
                raise ValueError(f"unknown character {ch!r}") from None
        if m == 0:
            raise ValueError("empty per-site character set")
        masks.append(m)
    return np.asarray(masks, dtype=np.uint8)


def _masks_to_sets(masks: np.ndarray) -> tuple[frozenset, ...]:
    return tuple(
        frozenset(b for bit, b in _BITS_BASE.items() if m & bit) for m in masks
    )


def _fitch_merge(left: np.ndarray, right: np.ndarray) -> tuple[int, np.ndarray]:
    inter = left & right
    union = left | right
    empty = inter == 0
    return int(empty.sum()), np.where(empty, union, inter).astype(np.uint8)


def fitch_root_mutations(left: Sequence, right: Sequence) -> tuple[int, tuple[frozenset, ...]]:
    """Small-parsimony merge of two per-site character-set sequences.

    Per site: intersection if nonempty at cost 0, else union at cost 1.
    Returns the added mutation count and the root's per-site sets.
    """
    lm, rm = _sets_to_masks(left), _sets_to_masks(right)
    if lm.shape != rm.shape:
        raise ValueError(f"length mismatch: {lm.shape[0]} vs {rm.shape[0]}")
    cost, root = _fitch_merge(lm, rm)
    return cost, _masks_to_sets(root)


def double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def build_phylo_env(
    spec: PhyloSpec,
    max_states: int = 200_000,
    max_trees: int = 20_000,
) -> tuple[SoftMdpGraph, EnergyModel]:
    """Bottom-up rooted binary tree assembly over ``spec.d`` species.

    A state is a forest (partition of the species into rooted binary trees,
    canonically ordered); an action merges two trees under a new root. Only
    single full trees terminate. Edges cost the Fitch mutations introduced
    at the new root divided by ``scale``; the terminal energy is the tree's
    total parsimony score divided by ``scale``.
    """
    d = spec.d
    n_trees = double_factorial(2 * d - 3)
    if n_trees > max_trees:
        raise EnvLimitError(
            f"(2d-3)!! = {n_trees} complete trees exceeds max_trees = {max_trees}"
        )

    # Per-tree cache: canonical key -> (per-site root masks, subtree mutations).
    tree_info: dict[str, tuple[np.ndarray, int]] = {}
    for i, seq in enumerate(spec.sequences):
        tree_info[f"L{i}"] = (
            np.array([_BASE_BITS[c] for c in seq], dtype=np.uint8),
            0,
        )

    def merge_trees(a: str, b: str) -> tuple[str, int]:
        """Canonical merged key and the mutations added at the new root."""
        if b < a:
            a, b = b, a
        key = f"({a},{b})"
        if key in tree_info:
            return key, tree_info[key][1] - tree_info[a][1] - tree_info[b][1]
        cost, root = _fitch_merge(tree_info[a][0], tree_info[b][0])
        tree_info[key] = (root, tree_info[a][1] + tree_info[b][1] + cost)
        return key, cost

    initial = tuple(sorted(f"L{i}" for i in range(d)))
    state_index: dict[tuple[str, ...], int] = {initial: 0}
    states: list[tuple[str, ...]] = [initial]
    children: list[tuple[int, ...]] = []
    edge_rows: list[np.ndarray] = []

    head = 0
    while head < len(states):
        forest = states[head]
        head += 1
        kids: list[int] = []
        costs: list[float] = []
        for i, j in itertools.combinations(range(len(forest)), 2):
            merged, cost = merge_trees(forest[i], forest[j])
            rest = [t for k, t in enumerate(forest) if k not in (i, j)]
            nxt = tuple(sorted(rest + [merged]))
            if nxt not in state_index:
                state_index[nxt] = len(states)
                states.append(nxt)
                if len(states) > max_states:
                    raise EnvLimitError(
                        f"forest count exceeds max_states = {max_states}"
                    )
            kids.append(state_index[nxt])
            costs.append(cost / spec.scale)
        children.append(tuple(kids))
        edge_rows.append(np.asarray(costs, dtype=float))

    terminating = tuple(len(f) == 1 for f in states)
    labels = tuple("|".join(f) for f in states)
    graph = SoftMdpGraph(
        num_states=len(states),
        initial_state=0,
        children=tuple(children),
        terminating=terminating,
        labels=labels,
    )
    terminal = {
        s: tree_info[states[s][0]][1] / spec.scale
        for s in range(len(states))
        if terminating[s]
    }
    energy = EnergyModel(
        terminal=_terminal_array(graph, terminal),
        terminal_states=graph.terminating_states(),
        edge=tuple(edge_rows),
    )
    return graph, energy
