"""Batch losses and their gradients over tabular parameters.

Every objective is evaluated as half the mean squared residual over the
units of a batch (SAC adds the actor KL). Gradients are assembled exactly
from the residual term descriptions, with softmax Jacobians in closed form;
``finite_diff_gradient`` is the independent central-difference oracle used
to audit them. Target parameters and the frozen snapshot used by SAC's
cross-terms are constants in both.
"""
from __future__ import annotations

import numpy as np

from .graph import SINK, Trajectory
from .objectives import (
    ObjectiveKind,
    _db_terms,
    _fldb_boundary_terms,
    _fldb_terms,
    _mdb_terms,
    _pcl_terms,
    _pisql_terms,
    _sac_components,
    _sql_terms,
    _subtb_terms,
    subtrajectories,
)
from .params import ParamGrads, TabularParams
from .rewards import RewardScheme

__all__ = [
    "batch_residuals",
    "objective_loss",
    "analytic_gradient",
    "loss_and_gradient",
    "finite_diff_gradient",
]


def batch_residuals(
    kind: ObjectiveKind,
    batch: list,
    params: TabularParams,
    scheme: RewardScheme,
    target_params: TabularParams | None = None,
):
    """(delta, terms) for every residual unit induced by the batch."""
    backward, energy, alpha = scheme.backward, scheme.energy, scheme.alpha
    pairs = []
    if kind.unit == "trajectory":
        for traj in batch:
            if not isinstance(traj, Trajectory):
                raise TypeError(f"{kind.value} expects trajectory units")
            if kind is ObjectiveKind.PCL:
                pairs.append(_pcl_terms(traj, params, scheme))
            elif kind is ObjectiveKind.TB:
                if not traj.ends_at_sink or traj.states[0] != params.graph.initial_state:
                    raise ValueError("tb expects complete trajectories")
                pairs.append(_subtb_terms(traj, params, backward, energy, alpha))
            else:  # SUBTB: every contiguous piece, equal weight
                for sub in subtrajectories(traj):
                    pairs.append(_subtb_terms(sub, params, backward, energy, alpha))
        return pairs

    for transition in batch:
        s, t = transition
        if kind is ObjectiveKind.DB:
            pairs.append(_db_terms((s, t), params, backward, energy, alpha, target_params))
        elif kind is ObjectiveKind.SQL:
            pairs.append(_sql_terms((s, t), params, scheme, target_params))
        elif kind is ObjectiveKind.FLDB:
            if t == SINK:
                pairs.append(_fldb_boundary_terms(s, params))
            else:
                pairs.append(_fldb_terms((s, t), params, backward, energy, alpha, target_params))
        elif kind is ObjectiveKind.MDB:
            pairs.append(_mdb_terms((s, t), params, backward, energy, alpha, target_params))
        elif kind is ObjectiveKind.PISQL:
            pairs.append(_pisql_terms((s, t), params, scheme, target_params))
        else:
            raise ValueError(f"unsupported objective {kind}")
    return pairs


def objective_loss(
    kind: ObjectiveKind,
    batch: list,
    params: TabularParams,
    scheme: RewardScheme,
    target_params: TabularParams | None = None,
    frozen: TabularParams | None = None,
) -> float:
    """Scalar training loss of one batch (critic + actor for SAC)."""
    if kind is ObjectiveKind.SAC:
        frozen = frozen if frozen is not None else params.copy()
        critic, actor = _sac_components(batch, params, scheme, target_params, frozen)
        loss = 0.5 * float(np.mean([d * d for d, _, _ in critic]))
        loss += float(np.mean([k for k, _, _, _ in actor]))
        return loss
    pairs = batch_residuals(kind, batch, params, scheme, target_params)
    if not pairs:
        raise ValueError("batch produced no residual units")
    return 0.5 * float(np.mean([d * d for d, _ in pairs]))


def analytic_gradient(
    kind: ObjectiveKind,
    batch: list,
    params: TabularParams,
    scheme: RewardScheme,
    target_params: TabularParams | None = None,
    frozen: TabularParams | None = None,
) -> ParamGrads:
    return loss_and_gradient(kind, batch, params, scheme, target_params, frozen)[1]


def loss_and_gradient(
    kind: ObjectiveKind,
    batch: list,
    params: TabularParams,
    scheme: RewardScheme,
    target_params: TabularParams | None = None,
    frozen: TabularParams | None = None,
) -> tuple[float, ParamGrads]:
    grads = ParamGrads.zeros_like(params)
    alpha = scheme.alpha

    if kind is ObjectiveKind.SAC:
        frozen = frozen if frozen is not None else params
        critic, actor = _sac_components(batch, params, scheme, target_params, frozen)
        n = len(critic)
        loss = 0.0
        for delta, s, idx in critic:
            grads.q_values[s][idx] += delta / n
            loss += 0.5 * delta * delta / n
        for kl, s, log_pi, log_ref in actor:
            pi = np.exp(log_pi)
            grads.policy_logits[s] += pi * ((log_pi - log_ref) - kl) / n
            loss += kl / n
        return loss, grads

    pairs = batch_residuals(kind, batch, params, scheme, target_params)
    if not pairs:
        raise ValueError("batch produced no residual units")
    n = len(pairs)
    pi_cache: dict[int, np.ndarray] = {}
    piq_cache: dict[int, np.ndarray] = {}
    loss = 0.0
    for delta, terms in pairs:
        w = delta / n
        loss += 0.5 * delta * delta / n
        for term in terms:
            tag = term[0]
            if tag == "logit":
                _, s, a, coef = term
                if s not in pi_cache:
                    pi_cache[s] = np.exp(params.log_policy_row(s))
                grads.policy_logits[s] -= (w * coef) * pi_cache[s]
                grads.policy_logits[s][a] += w * coef
            elif tag == "flow":
                _, s, coef = term
                grads.log_flow[s] += w * coef
            elif tag == "q":
                _, s, a, coef = term
                grads.q_values[s][a] += w * coef
            elif tag == "lse_q":
                _, s, coef = term
                if s not in piq_cache:
                    row = params.q_values[s] / alpha
                    piq_cache[s] = np.exp(row - _stable_lse(row))
                grads.q_values[s] += (w * coef) * piq_cache[s]
            else:
                raise AssertionError(f"unknown term {tag}")
    return loss, grads


def _stable_lse(row: np.ndarray) -> float:
    m = float(row.max())
    return m + float(np.log(np.exp(row - m).sum()))


def finite_diff_gradient(
    kind: ObjectiveKind,
    batch: list,
    params: TabularParams,
    scheme: RewardScheme,
    step: float = 1e-5,
    target_params: TabularParams | None = None,
) -> ParamGrads:
    """Central differences of the scalar loss, one parameter at a time.

    The SAC cross-terms are held at a snapshot taken before perturbation,
    matching the stop-gradient semantics of the analytic gradient.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    frozen = params.copy()
    work = params.copy()
    base = work.to_vector()
    grad_vec = np.zeros_like(base)
    for i in range(base.size):
        for sgn in (+1.0, -1.0):
            vec = base.copy()
            vec[i] += sgn * step
            work.set_from_vector(vec)
            loss = objective_loss(kind, batch, work, scheme, target_params, frozen)
            grad_vec[i] += sgn * loss
    grad_vec /= 2.0 * step

    grads = ParamGrads.zeros_like(params)
    i = 0
    if grads.policy_logits is not None:
        for s, row in enumerate(grads.policy_logits):
            grads.policy_logits[s] = grad_vec[i : i + row.size].copy()
            i += row.size
    if grads.log_flow is not None:
        grads.log_flow = grad_vec[i : i + grads.log_flow.size].copy()
        i += grads.log_flow.size
    if grads.q_values is not None:
        for s, row in enumerate(grads.q_values):
            grads.q_values[s] = grad_vec[i : i + row.size].copy()
            i += row.size
    return grads
