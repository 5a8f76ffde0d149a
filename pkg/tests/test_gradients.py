"""Analytic gradients audited against central finite differences."""
import numpy as np
import pytest

from gibbsflow import (
    ObjectiveKind,
    RewardKind,
    RewardScheme,
    analytic_gradient,
    enumerate_complete_trajectories,
    finite_diff_gradient,
    init_params,
    objective_loss,
    oracle_params,
    residual_tb,
    soft_value_iteration,
    uniform_backward_policy,
)
from gibbsflow.gradients import loss_and_gradient
from gibbsflow.objectives import all_transitions
from gibbsflow.params import ParamMode


def scheme_for(env, kind, alpha=1.0):
    graph, energy = env
    return RewardScheme(kind=kind, graph=graph, energy=energy, alpha=alpha,
                        backward=uniform_backward_policy(graph))


def reward_kind_for(kind: ObjectiveKind) -> RewardKind:
    if kind in (ObjectiveKind.MDB, ObjectiveKind.PISQL):
        return RewardKind.DENSE
    if kind is ObjectiveKind.FLDB:
        return RewardKind.FORWARD_LOOKING
    return RewardKind.TERMINAL


def random_batch(kind: ObjectiveKind, graph, rng, size=4):
    if kind.unit == "trajectory":
        trajs = enumerate_complete_trajectories(graph)
        return [trajs[i] for i in rng.integers(len(trajs), size=size)]
    pool = all_transitions(graph, include_sink=not kind.interior_only)
    return [pool[i] for i in rng.integers(len(pool), size=size)]


def max_rel_err(analytic, fd) -> float:
    a, f = analytic.to_vector(), fd.to_vector()
    return float(np.max(np.abs(a - f) / np.maximum(1.0, np.abs(f))))


def env_for(kind: ObjectiveKind, toy_env_generic, subset_env):
    if kind in (ObjectiveKind.MDB, ObjectiveKind.PISQL):
        return subset_env
    return toy_env_generic


@pytest.mark.parametrize("kind", list(ObjectiveKind))
@pytest.mark.parametrize("use_target", [False, True])
def test_gradient_matches_finite_differences(kind, use_target, toy_env_generic, subset_env):
    if use_target and not kind.uses_target:
        pytest.skip("trajectory-level objectives have no target parameters")
    env = env_for(kind, toy_env_generic, subset_env)
    sch = scheme_for(env, reward_kind_for(kind), alpha=1.6)
    rng = np.random.default_rng(hash(kind.value) % 1000)
    for trial in range(10):
        params = init_params(env[0], kind.param_mode, init="normal", sigma=0.9,
                             seed=1000 + trial)
        target = (
            init_params(env[0], kind.param_mode, init="normal", sigma=0.9, seed=trial)
            if use_target else None
        )
        batch = random_batch(kind, env[0], rng)
        got = analytic_gradient(kind, batch, params, sch, target, frozen=params.copy())
        want = finite_diff_gradient(kind, batch, params, sch, step=1e-5, target_params=target)
        assert max_rel_err(got, want) < 1e-6, (kind, trial)


def test_zero_residual_batch_gives_zero_gradient(subset_env):
    graph, _ = subset_env
    sch = scheme_for(subset_env, RewardKind.TERMINAL)
    params = oracle_params(graph, soft_value_iteration(graph, sch), ParamMode.POLICY_FLOW)
    batch = all_transitions(graph)
    grads = analytic_gradient(ObjectiveKind.DB, batch, params, sch)
    assert grads.max_abs() < 1e-10


def test_tb_log_partition_gradient(toy_env_generic):
    # log_flow at the initial state enters the residual linearly with
    # coefficient -1, so d(loss)/d(logF(s0)) = -delta
    graph, energy = toy_env_generic
    sch = scheme_for(toy_env_generic, RewardKind.TERMINAL)
    params = init_params(graph, ParamMode.POLICY_FLOW, init="normal", sigma=0.7, seed=5)
    traj = enumerate_complete_trajectories(graph)[1]
    delta = residual_tb(traj, params, sch.backward, energy, sch.alpha)
    loss, grads = loss_and_gradient(ObjectiveKind.TB, [traj], params, sch)
    assert grads.log_flow[graph.initial_state] == pytest.approx(-delta, abs=1e-12)
    assert loss == pytest.approx(0.5 * delta**2, abs=1e-12)


def test_finite_diff_exact_on_quadratic(toy_env):
    # the DB loss is exactly quadratic in log_flow at fixed policy, so the
    # central difference is exact up to O(step^2)
    graph, _ = toy_env
    sch = scheme_for(toy_env, RewardKind.TERMINAL)
    params = init_params(graph, ParamMode.POLICY_FLOW, init="normal", seed=6)
    batch = all_transitions(graph)
    fd_small = finite_diff_gradient(ObjectiveKind.DB, batch, params, sch, step=1e-4)
    fd_tiny = finite_diff_gradient(ObjectiveKind.DB, batch, params, sch, step=1e-6)
    assert np.allclose(fd_small.log_flow, fd_tiny.log_flow, atol=1e-7)
    with pytest.raises(ValueError):
        finite_diff_gradient(ObjectiveKind.DB, batch, params, sch, step=0.0)


def test_objective_loss_agrees_with_gradient_path(toy_env_generic):
    graph, _ = toy_env_generic
    sch = scheme_for(toy_env_generic, RewardKind.TERMINAL)
    params = init_params(graph, ParamMode.POLICY_FLOW, init="normal", seed=7)
    batch = all_transitions(graph)
    loss, _ = loss_and_gradient(ObjectiveKind.DB, batch, params, sch)
    assert loss == pytest.approx(objective_loss(ObjectiveKind.DB, batch, params, sch))


def test_untouched_parameters_stay_zero(toy_env_generic):
    graph, _ = toy_env_generic
    sch = scheme_for(toy_env_generic, RewardKind.TERMINAL)
    params = init_params(graph, ParamMode.POLICY_FLOW, init="normal", seed=8)
    batch = [(0, 1)]  # touches states 0 and 1 only
    grads = analytic_gradient(ObjectiveKind.DB, batch, params, sch)
    for s in (2, 3, 4, 5):
        assert np.all(grads.policy_logits[s] == 0.0)
    assert grads.log_flow[5] == 0.0
