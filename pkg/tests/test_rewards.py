"""Backward policies, corrected rewards and the return identity."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsflow import (
    RewardKind,
    RewardScheme,
    Trajectory,
    counting_backward_policy,
    enumerate_complete_trajectories,
    reward,
    uniform_backward_policy,
    verify_return_identity,
)
from gibbsflow.graph import SINK

from conftest import (
    brute_force_backward_measure,
    chain_graph,
    random_layered_dag,
)


def scheme_for(env, kind, alpha=1.0, backward="uniform"):
    graph, energy = env
    pb = uniform_backward_policy(graph) if backward == "uniform" else counting_backward_policy(graph)
    return RewardScheme(kind=kind, graph=graph, energy=energy, alpha=alpha, backward=pb)


# -- backward policies ---------------------------------------------------------

def test_uniform_rows_toy(toy_env):
    graph, _ = toy_env
    pb = uniform_backward_policy(graph)
    np.testing.assert_allclose(pb.rows[4], [0.5, 0.5])
    np.testing.assert_allclose(pb.rows[3], [1.0])
    assert pb.rows[0] is None


def test_uniform_rows_on_tree_are_degenerate():
    pb = uniform_backward_policy(chain_graph())
    np.testing.assert_allclose(pb.rows[1], [1.0])


def test_counting_rows_toy(toy_env):
    graph, _ = toy_env
    pb = counting_backward_policy(graph)
    np.testing.assert_allclose(pb.rows[4], [0.5, 0.5])


def test_counting_rows_tree_all_one():
    tree = chain_graph()
    pb = counting_backward_policy(tree)
    np.testing.assert_allclose(pb.rows[1], [1.0])


def test_counting_rows_subset(subset_env):
    graph, _ = subset_env
    pb = counting_backward_policy(graph)
    np.testing.assert_allclose(pb.rows[0b011], [0.5, 0.5])
    np.testing.assert_allclose(pb.rows[0b111], [1 / 3, 1 / 3, 1 / 3])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_backward_rows_sum_to_one(seed, use_counting):
    graph = random_layered_dag(seed)
    pb = counting_backward_policy(graph) if use_counting else uniform_backward_policy(graph)
    for s in range(graph.num_states):
        if graph.parents[s]:
            assert abs(pb.rows[s].sum() - 1.0) < 1e-12
            assert np.all(pb.rows[s] >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_backward_measure_lemma_random_graphs(seed, use_counting):
    graph = random_layered_dag(seed)
    pb = counting_backward_policy(graph) if use_counting else uniform_backward_policy(graph)
    measure = brute_force_backward_measure(graph, pb)
    for x, total in measure.items():
        assert abs(total - 1.0) < 1e-10


# -- rewards ---------------------------------------------------------------------

def test_terminal_reward_values(toy_env):
    graph, energy = toy_env
    sch = scheme_for(toy_env, RewardKind.TERMINAL)
    assert reward(sch, 1, 4) == pytest.approx(math.log(0.5), abs=1e-12)
    g2, e2 = __import__("gibbsflow").build_toy_dag((0.0, 2.0, 0.0))
    sch2 = RewardScheme(kind=RewardKind.TERMINAL, graph=g2, energy=e2, alpha=1.0,
                        backward=uniform_backward_policy(g2))
    assert reward(sch2, 4, SINK) == -2.0


def test_dense_reward_sink_is_zero(subset_env):
    sch = scheme_for(subset_env, RewardKind.DENSE)
    for x in sch.graph.terminating_states():
        assert reward(sch, x, SINK) == 0.0


def test_uncorrected_reward(toy_env_generic):
    sch = scheme_for(toy_env_generic, RewardKind.UNCORRECTED)
    assert reward(sch, 0, 1) == 0.0
    assert reward(sch, 5, SINK) == pytest.approx(-1.1)


def test_forward_looking_reward(toy_env_generic):
    sch = scheme_for(toy_env_generic, RewardKind.FORWARD_LOOKING, alpha=2.0)
    # edge s1 -> x4 carries the full energy of x4; P_B(s1 | x4) = 1/2
    assert reward(sch, 1, 4) == pytest.approx(0.4 + 2.0 * math.log(0.5))
    assert reward(sch, 4, SINK) == 0.0


def test_reward_rejects_absent_edges(toy_env):
    sch = scheme_for(toy_env, RewardKind.TERMINAL)
    with pytest.raises(ValueError):
        reward(sch, 0, 4)
    with pytest.raises(ValueError):
        reward(sch, 0, SINK)  # s0 is not terminating


def test_scheme_energy_mismatch_raises(toy_env):
    graph, energy = toy_env
    with pytest.raises(ValueError):
        RewardScheme(kind=RewardKind.DENSE, graph=graph, energy=energy, alpha=1.0,
                     backward=uniform_backward_policy(graph))
    with pytest.raises(ValueError):
        RewardScheme(kind=RewardKind.TERMINAL, graph=graph, energy=energy, alpha=1.0)
    with pytest.raises(ValueError):
        RewardScheme(kind=RewardKind.TERMINAL, graph=graph, energy=energy, alpha=-1.0,
                     backward=uniform_backward_policy(graph))


# -- return identity ---------------------------------------------------------------

@pytest.mark.parametrize("kind", [RewardKind.TERMINAL, RewardKind.FORWARD_LOOKING])
@pytest.mark.parametrize("backward", ["uniform", "counting"])
def test_return_identity_corrected_toy(toy_env_generic, kind, backward):
    graph, _ = toy_env_generic
    sch = scheme_for(toy_env_generic, kind, alpha=1.7, backward=backward)
    for traj in enumerate_complete_trajectories(graph):
        assert abs(verify_return_identity(sch, traj)) < 1e-10


@pytest.mark.parametrize("kind", [RewardKind.TERMINAL, RewardKind.DENSE, RewardKind.FORWARD_LOOKING])
def test_return_identity_corrected_subset(subset_env, kind):
    graph, _ = subset_env
    sch = scheme_for(subset_env, kind, alpha=0.6, backward="counting")
    for traj in enumerate_complete_trajectories(graph):
        assert abs(verify_return_identity(sch, traj)) < 1e-10


def test_return_identity_uncorrected_tree_is_zero():
    graph = chain_graph()
    energy = __import__("gibbsflow").EnergyModel(
        terminal=np.array([np.nan, 0.7]), terminal_states=(1,)
    )
    sch = RewardScheme(kind=RewardKind.UNCORRECTED, graph=graph, energy=energy,
                       alpha=1.0, backward=uniform_backward_policy(graph))
    traj = Trajectory((0, 1), ends_at_sink=True)
    assert verify_return_identity(sch, traj) == pytest.approx(0.0, abs=1e-12)


def test_return_identity_uncorrected_gap_through_merged_state(toy_env):
    graph, _ = toy_env
    alpha = 1.3
    sch = scheme_for(toy_env, RewardKind.UNCORRECTED, alpha=alpha)
    through_x4 = Trajectory((0, 1, 4), ends_at_sink=True)
    assert verify_return_identity(sch, through_x4) == pytest.approx(-alpha * math.log(0.5))
    around = Trajectory((0, 1, 3), ends_at_sink=True)
    assert verify_return_identity(sch, around) == pytest.approx(0.0, abs=1e-12)


def test_dense_and_forward_looking_agree_on_subset_env(subset_env):
    dense = scheme_for(subset_env, RewardKind.DENSE, alpha=1.4)
    fl = scheme_for(subset_env, RewardKind.FORWARD_LOOKING, alpha=1.4)
    graph, _ = subset_env
    for s, t in graph.edges():
        assert reward(dense, s, t) == pytest.approx(reward(fl, s, t), abs=1e-12)
    for x in graph.terminating_states():
        assert reward(dense, x, SINK) == reward(fl, x, SINK) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.5, 1.0, 2.0]))
def test_return_identity_random_graphs(seed, alpha):
    graph = random_layered_dag(seed)
    rng = np.random.default_rng(seed + 1)
    terminal = np.full(graph.num_states, np.nan)
    xs = graph.terminating_states()
    terminal[list(xs)] = rng.normal(size=len(xs))
    energy = __import__("gibbsflow").EnergyModel(terminal=terminal, terminal_states=xs)
    sch = RewardScheme(kind=RewardKind.TERMINAL, graph=graph, energy=energy,
                       alpha=alpha, backward=counting_backward_policy(graph))
    for traj in enumerate_complete_trajectories(graph, cap=50_000)[:50]:
        assert abs(verify_return_identity(sch, traj)) < 1e-10


def test_backward_measure_lemma_all_desk_envs(
    toy_env_generic, factor_env, subset_env4, phylo_env4
):
    for graph, _ in (toy_env_generic, factor_env, subset_env4, phylo_env4):
        for pb in (uniform_backward_policy(graph), counting_backward_policy(graph)):
            for x, total in brute_force_backward_measure(graph, pb).items():
                assert abs(total - 1.0) < 1e-10
