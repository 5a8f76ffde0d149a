"""Exact value iteration, distributions and metrics against brute force."""
import math

import numpy as np
import pytest

from gibbsflow import (
    DistributionTable,
    EnergyModel,
    RewardKind,
    RewardScheme,
    SoftMdpGraph,
    counting_backward_policy,
    gibbs_target,
    jsd,
    optimal_policy,
    pearson_logprob_return,
    soft_value_iteration,
    terminating_distribution,
    uniform_backward_policy,
)
from gibbsflow.graph import SINK

from conftest import brute_force_distribution, chain_graph, paths_to_sink


def scheme_for(env, kind, alpha=1.0, backward="uniform"):
    graph, energy = env
    pb = uniform_backward_policy(graph) if backward == "uniform" else counting_backward_policy(graph)
    return RewardScheme(kind=kind, graph=graph, energy=energy, alpha=alpha, backward=pb)


def chain_env(e=0.8):
    graph = chain_graph()
    energy = EnergyModel(
        terminal=np.array([np.nan, e]), terminal_states=(1,)
    )
    return graph, energy


# -- soft value iteration -------------------------------------------------------

def test_chain_values():
    env = chain_env(e=0.8)
    sch = RewardScheme(kind=RewardKind.TERMINAL, graph=env[0], energy=env[1],
                       alpha=1.0, backward=uniform_backward_policy(env[0]))
    values = soft_value_iteration(env[0], sch)
    assert values.v[1] == pytest.approx(-0.8)
    assert values.v[0] == pytest.approx(-0.8)


def test_toy_partition_value(toy_env):
    graph, _ = toy_env
    sch = scheme_for(toy_env, RewardKind.TERMINAL)
    values = soft_value_iteration(graph, sch)
    assert values.v[0] == pytest.approx(math.log(3.0), abs=1e-12)


def test_zero_reward_values_count_paths(toy_env):
    # with all rewards zero the value at s is the log number of suffix paths
    graph, energy = toy_env  # energies are all zero: uncorrected rewards vanish
    sch = scheme_for(toy_env, RewardKind.UNCORRECTED)
    values = soft_value_iteration(graph, sch)
    for s, k in enumerate(paths_to_sink(graph)):
        assert values.v[s] == pytest.approx(math.log(k), abs=1e-10)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_soft_values_invariants(factor_env, alpha):
    graph, _ = factor_env
    sch = scheme_for(factor_env, RewardKind.TERMINAL, alpha=alpha)
    values = soft_value_iteration(graph, sch)
    rows = sch.reward_rows()
    for s in range(graph.num_states):
        targets = graph.action_targets(s)
        for i, t in enumerate(targets):
            v_next = 0.0 if t == SINK else values.v[t]
            assert values.q[s][i] == pytest.approx(rows[s][i] + v_next, abs=1e-12)
        lse = alpha * np.log(np.exp(values.q[s] / alpha).sum())
        assert values.v[s] == pytest.approx(lse, abs=1e-10)


def test_partition_identity_all_corrected(subset_env):
    graph, energy = subset_env
    for kind in (RewardKind.TERMINAL, RewardKind.DENSE, RewardKind.FORWARD_LOOKING):
        for alpha in (0.5, 1.0, 2.0):
            sch = scheme_for(subset_env, kind, alpha=alpha)
            values = soft_value_iteration(graph, sch)
            z = float(np.exp(gibbs_target(energy, alpha).log_z))
            assert math.exp(values.v[0] / alpha) == pytest.approx(z, rel=1e-8)


# -- optimal policy --------------------------------------------------------------

def test_optimal_policy_chain_deterministic():
    env = chain_env()
    sch = RewardScheme(kind=RewardKind.TERMINAL, graph=env[0], energy=env[1],
                       alpha=1.0, backward=uniform_backward_policy(env[0]))
    policy = optimal_policy(soft_value_iteration(env[0], sch))
    np.testing.assert_allclose(policy[0], [1.0])
    np.testing.assert_allclose(policy[1], [1.0])


def test_optimal_policy_toy_uncorrected_symmetric(toy_env):
    graph, _ = toy_env
    sch = scheme_for(toy_env, RewardKind.UNCORRECTED)
    policy = optimal_policy(soft_value_iteration(graph, sch))
    assert policy[0][0] == pytest.approx(0.5, abs=1e-12)
    assert policy[1][graph.child_index(1, 4)] == pytest.approx(0.5, abs=1e-12)


def test_low_temperature_concentrates_on_low_energy_arm():
    graph = SoftMdpGraph(
        num_states=3, initial_state=0, children=((1, 2), (), ()),
        terminating=(False, True, True),
    )
    energy = EnergyModel(
        terminal=np.array([np.nan, 0.0, 1.0]), terminal_states=(1, 2)
    )
    probs = []
    for alpha in (1.0, 0.1):
        sch = RewardScheme(kind=RewardKind.UNCORRECTED, graph=graph, energy=energy,
                           alpha=alpha, backward=uniform_backward_policy(graph))
        policy = optimal_policy(soft_value_iteration(graph, sch))
        probs.append(policy[0][0])
    assert probs[1] > probs[0] > 0.5


def test_optimal_policy_rows_normalized(factor_env):
    graph, _ = factor_env
    sch = scheme_for(factor_env, RewardKind.TERMINAL, alpha=2.0)
    policy = optimal_policy(soft_value_iteration(graph, sch))
    for row in policy:
        assert abs(row.sum() - 1.0) < 1e-12


# -- terminating distribution ------------------------------------------------------

def test_toy_uncorrected_distribution_matches_caption(toy_env):
    graph, _ = toy_env
    sch = scheme_for(toy_env, RewardKind.UNCORRECTED)
    dist = terminating_distribution(graph, optimal_policy(soft_value_iteration(graph, sch)))
    np.testing.assert_allclose(dist.probs, [0.25, 0.5, 0.25], atol=1e-15)


def test_toy_corrected_distribution_uniform(toy_env):
    graph, _ = toy_env
    sch = scheme_for(toy_env, RewardKind.TERMINAL)
    dist = terminating_distribution(graph, optimal_policy(soft_value_iteration(graph, sch)))
    np.testing.assert_allclose(dist.probs, [1 / 3] * 3, atol=1e-12)


def test_uniform_policy_subset_by_hand_and_brute_force():
    graph, _ = __import__("gibbsflow").build_subset_env(2, np.zeros(4))
    policy = tuple(
        np.full(graph.num_actions(s), 1.0 / graph.num_actions(s))
        for s in range(graph.num_states)
    )
    dist = terminating_distribution(graph, policy)
    expected = {0b00: 1 / 3, 0b01: 1 / 6, 0b10: 1 / 6, 0b11: 1 / 3}
    for x, p in dist.as_dict().items():
        assert p == pytest.approx(expected[x], abs=1e-12)
    brute = brute_force_distribution(graph, policy)
    for x, p in brute.items():
        assert dist.prob_of(x) == pytest.approx(p, abs=1e-12)


@pytest.mark.parametrize("kind,alpha", [
    (RewardKind.TERMINAL, 1.0), (RewardKind.FORWARD_LOOKING, 0.5),
])
def test_dp_distribution_equals_brute_force(factor_env_small, kind, alpha):
    graph, _ = factor_env_small
    sch = scheme_for(factor_env_small, kind, alpha=alpha)
    policy = optimal_policy(soft_value_iteration(graph, sch))
    dist = terminating_distribution(graph, policy)
    brute = brute_force_distribution(graph, policy)
    total = sum(brute.values())
    for x, p in brute.items():
        assert dist.prob_of(x) == pytest.approx(p / total, abs=1e-12)


def test_corrected_schemes_hit_gibbs_everywhere(
    toy_env_generic, factor_env, subset_env, phylo_env4
):
    cases = {
        "toy": (toy_env_generic, (RewardKind.TERMINAL, RewardKind.FORWARD_LOOKING)),
        "factor": (factor_env, (RewardKind.TERMINAL, RewardKind.FORWARD_LOOKING)),
        "subset": (subset_env, (RewardKind.TERMINAL, RewardKind.DENSE, RewardKind.FORWARD_LOOKING)),
        "phylo": (phylo_env4, (RewardKind.TERMINAL, RewardKind.FORWARD_LOOKING)),
    }
    for name, (env, kinds) in cases.items():
        graph, energy = env
        for kind in kinds:
            for backward in ("uniform", "counting"):
                for alpha in (0.5, 1.0, 2.0):
                    sch = scheme_for(env, kind, alpha=alpha, backward=backward)
                    dist = terminating_distribution(
                        graph, optimal_policy(soft_value_iteration(graph, sch))
                    )
                    target = gibbs_target(energy, alpha)
                    assert jsd(dist, target) < 1e-10, (name, kind, backward, alpha)


# -- gibbs target -----------------------------------------------------------------

def test_gibbs_uniform():
    energy = EnergyModel(terminal=np.zeros(5), terminal_states=(0, 1, 2, 3, 4))
    target = gibbs_target(energy, 1.0)
    np.testing.assert_allclose(target.probs, 0.2)
    assert target.log_z == pytest.approx(math.log(5))


def test_gibbs_hand_value():
    energy = EnergyModel(terminal=np.array([0.0, math.log(3.0)]), terminal_states=(0, 1))
    target = gibbs_target(energy, 1.0)
    np.testing.assert_allclose(target.probs, [0.75, 0.25], atol=1e-15)


def test_gibbs_flattens_with_temperature():
    energy = EnergyModel(terminal=np.array([0.0, 1.0, 2.0]), terminal_states=(0, 1, 2))
    cold = gibbs_target(energy, 1.0)
    warm = gibbs_target(energy, 2.0)
    assert warm.probs[0] < cold.probs[0]
    assert warm.probs[2] > cold.probs[2]
    assert np.all(np.diff(warm.probs) < 0)  # order preserved


# -- metrics ----------------------------------------------------------------------

def test_jsd_zero_on_identical():
    p = DistributionTable(states=(0, 1), probs=np.array([0.3, 0.7]))
    assert jsd(p, p) == 0.0


def test_jsd_hand_value():
    assert jsd(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == pytest.approx(0.2158, abs=1e-3)


def test_jsd_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.dirichlet(np.ones(6))
        q = rng.dirichlet(np.ones(6))
        assert jsd(p, q) == pytest.approx(jsd(q, p), abs=1e-14)
        assert 0.0 <= jsd(p, q) <= math.log(2) + 1e-12


def test_jsd_support_mismatch():
    p = DistributionTable(states=(0, 1), probs=np.array([0.5, 0.5]))
    q = DistributionTable(states=(0, 2), probs=np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        jsd(p, q)


def test_pearson_perfect_on_exact_gibbs_logprobs():
    rng = np.random.default_rng(3)
    energies = rng.normal(size=40)
    log_z = math.log(np.exp(-energies).sum())
    log_probs = -energies - log_z
    assert pearson_logprob_return(log_probs, -energies) == pytest.approx(1.0, abs=1e-12)


def test_pearson_errors():
    with pytest.raises(ValueError):
        pearson_logprob_return([1.0, 2.0], [3.0, 3.0])
    with pytest.raises(ValueError):
        pearson_logprob_return([1.0], [2.0])


def test_pearson_antilinear():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    assert pearson_logprob_return(x, -2.0 * x + 1.0) == pytest.approx(-1.0)


def test_distribution_table_validation():
    with pytest.raises(ValueError):
        DistributionTable(states=(0, 1), probs=np.array([0.9, 0.3]))
    with pytest.raises(ValueError):
        DistributionTable(states=(0, 1), probs=np.array([1.2, -0.2]))
