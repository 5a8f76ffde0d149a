"""Shared fixtures and independent brute-force oracles.

The brute-force helpers here deliberately re-derive quantities by direct
enumeration so the dynamic-programming implementations are checked against
something that does not share their code path.
"""
from __future__ import annotations

import numpy as np
import pytest

from gibbsflow import (
    FactorGraphSpec,
    PhyloSpec,
    SoftMdpGraph,
    build_factor_graph_env,
    build_phylo_env,
    build_subset_env,
    build_toy_dag,
    enumerate_complete_trajectories,
)


@pytest.fixture(scope="session")
def toy_env():
    return build_toy_dag((0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def toy_env_generic():
    return build_toy_dag((0.3, -0.4, 1.1))


@pytest.fixture(scope="session")
def factor_env():
    return build_factor_graph_env(FactorGraphSpec.random_chain(3, 3, seed=7))


@pytest.fixture(scope="session")
def factor_env_small():
    spec = FactorGraphSpec(d=2, K=2, factors=(((0, 1), np.array([[0.0, 1.0], [1.0, 0.0]])),))
    return build_factor_graph_env(spec)


@pytest.fixture(scope="session")
def subset_env():
    rng = np.random.default_rng(5)
    return build_subset_env(3, rng.normal(0.0, 1.0, size=8))


@pytest.fixture(scope="session")
def subset_env4():
    rng = np.random.default_rng(13)
    return build_subset_env(4, rng.normal(0.0, 1.0, size=16))


@pytest.fixture(scope="session")
def phylo_env4():
    return build_phylo_env(PhyloSpec.random(d=4, length=12, seed=3))


@pytest.fixture(scope="session")
def phylo_env5():
    return build_phylo_env(PhyloSpec.random(d=5, length=20, seed=11))


def chain_graph() -> SoftMdpGraph:
    """s0 -> x1 with only x1 terminating."""
    return SoftMdpGraph(
        num_states=2,
        initial_state=0,
        children=((1,), ()),
        terminating=(False, True),
        labels=("s0", "x1"),
    )


def random_layered_dag(seed: int) -> SoftMdpGraph:
    """Random valid DAG: layered edges, childless states terminate, plus a
    few random extra terminating states."""
    rng = np.random.default_rng(seed)
    widths = [1] + [int(rng.integers(1, 4)) for _ in range(int(rng.integers(1, 4)))]
    layers: list[list[int]] = []
    n = 0
    for w in widths:
        layers.append(list(range(n, n + w)))
        n += w
    children: list[list[int]] = [[] for _ in range(n)]
    for upper, lower in zip(layers, layers[1:]):
        for c in lower:  # every state gets at least one parent
            p = int(rng.choice(upper))
            children[p].append(c)
        for p in upper:
            for c in lower:
                if c not in children[p] and rng.random() < 0.4:
                    children[p].append(c)
    terminating = [not children[s] for s in range(n)]
    for s in range(1, n):
        if rng.random() < 0.25:
            terminating[s] = True
    return SoftMdpGraph(
        num_states=n,
        initial_state=0,
        children=tuple(tuple(c) for c in children),
        terminating=tuple(terminating),
    )


# -- independent oracles -----------------------------------------------------

def brute_force_distribution(graph: SoftMdpGraph, policy) -> dict[int, float]:
    """Terminating-state marginal by direct summation over every complete
    trajectory of the product of policy probabilities."""
    out: dict[int, float] = {x: 0.0 for x in graph.terminating_states()}
    for traj in enumerate_complete_trajectories(graph):
        p = 1.0
        for s, t in traj.transitions():
            idx = graph.child_index(s, t)
            p *= float(policy[s][idx])
        out[traj.last_state] += p
    return out


def brute_force_backward_measure(graph: SoftMdpGraph, backward) -> dict[int, float]:
    """For each terminating state, the total backward probability of all
    trajectories reaching it (should be exactly 1)."""
    out: dict[int, float] = {x: 0.0 for x in graph.terminating_states()}
    for traj in enumerate_complete_trajectories(graph):
        p = 1.0
        for s, t in traj.interior_transitions():
            p *= backward.prob(s, t)
        out[traj.last_state] += p
    return out


def paths_to_sink(graph: SoftMdpGraph) -> list[int]:
    """Number of complete suffix paths from each state (memoized recursion,
    independent of the forward counting DP)."""
    memo: dict[int, int] = {}

    def count(s: int) -> int:
        if s in memo:
            return memo[s]
        total = 1 if graph.terminating[s] else 0
        total += sum(count(c) for c in graph.children[s])
        memo[s] = total
        return total

    return [count(s) for s in range(graph.num_states)]
