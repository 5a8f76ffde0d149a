"""Stochastic-gradient training of tabular parameters.

Protocol: epsilon-mixed on-policy rollouts feed a circular FIFO replay
buffer; each iteration trains on a half-fresh half-replayed batch with
plain SGD (Adam available behind a config switch, excluded from the
lockstep guarantees); transition-level objectives bootstrap their value
terms from a periodically frozen target snapshot; evaluation rows carry
the exact divergence to the Gibbs target computed by the oracles.

Runs are single-threaded and bit-deterministic given their config.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .graph import SINK, SoftMdpGraph, Trajectory
from .gradients import loss_and_gradient
from .metrics import jsd, pearson_logprob_return
from .objectives import ObjectiveKind
from .oracles import gibbs_target, terminating_distribution
from .params import ParamGrads, TabularParams, init_params
from .rewards import RewardScheme

__all__ = [
    "TrainConfig",
    "ReplayBuffer",
    "MetricsRow",
    "TrainResult",
    "epsilon_at",
    "sample_trajectory",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    objective: ObjectiveKind
    iterations: int = 20_000
    batch_size: int = 8
    learning_rate: float = 0.1
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_fraction: float = 0.5
    target_update_period: int = 1_000
    buffer_capacity: int = 100_000
    seed: int = 0
    alpha: float = 1.0
    eval_interval: int = 100
    fresh_fraction: float = 0.5
    optimizer: str = "sgd"
    init: str = "zeros"
    init_sigma: float = 0.1

    def __post_init__(self):
        if isinstance(self.objective, str):
            object.__setattr__(self, "objective", ObjectiveKind(self.objective))
        for name in ("iterations", "batch_size", "target_update_period",
                     "buffer_capacity", "eval_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.alpha <= 0:
            raise ValueError("learning_rate and alpha must be positive")
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not (0.0 < self.epsilon_decay_fraction <= 1.0):
            raise ValueError("epsilon_decay_fraction must be in (0, 1]")
        if not (0.0 <= self.fresh_fraction <= 1.0):
            raise ValueError("fresh_fraction must be in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.init not in ("zeros", "normal"):
            raise ValueError("init must be 'zeros' or 'normal'")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["objective"] = self.objective.value
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["objective"] = ObjectiveKind(d["objective"])
        return cls(**d)


class ReplayBuffer:
    """Circular FIFO buffer; uniform sampling with replacement."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._storage: list = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._storage)

    def push(self, item) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(item)
        else:
            self._storage[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def extend(self, items) -> None:
        for item in items:
            self.push(item)

    def sample(self, k: int, rng: np.random.Generator) -> list:
        if not self._storage or k <= 0:
            return []
        idx = rng.integers(len(self._storage), size=k)
        return [self._storage[i] for i in idx]

    def items(self) -> list:
        return list(self._storage)


@dataclass(frozen=True)
class MetricsRow:
    iteration: int
    loss: float
    jsd: float
    pearson: float
    epsilon: float


@dataclass
class TrainResult:
    metrics: list[MetricsRow]
    params: TabularParams
    aborted: bool = False
    abort_reason: str | None = None


def epsilon_at(config: TrainConfig, iteration: int) -> float:
    """Linear decay from epsilon_start to epsilon_end over the first
    ``epsilon_decay_fraction`` of the run, flat afterwards."""
    decay_steps = max(1, int(round(config.iterations * config.epsilon_decay_fraction)))
    frac = min(1.0, iteration / decay_steps)
    return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac


def _draw(row: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(row):
        acc += p
        if u < acc:
            return i
    return len(row) - 1


def sample_trajectory(
    graph: SoftMdpGraph,
    params: TabularParams,
    epsilon: float,
    rng: np.random.Generator,
    alpha: float | None = None,
    policy_cache: dict[int, np.ndarray] | None = None,
) -> Trajectory:
    """Roll out from the initial state to the sink. Each step follows the
    parametrized policy with probability 1 - epsilon and is uniform over the
    legal actions otherwise."""
    states = [graph.initial_state]
    while True:
        s = states[-1]
        if policy_cache is not None and s in policy_cache:
            row = policy_cache[s]
        else:
            row = np.exp(params.log_policy_row(s, alpha))
            if policy_cache is not None:
                policy_cache[s] = row
        if rng.random() < epsilon:
            a = int(rng.integers(len(row)))
        else:
            a = _draw(row, rng)
        target = graph.action_targets(s)[a]
        if target == SINK:
            return Trajectory(tuple(states), ends_at_sink=True)
        states.append(target)


def _units_from(objective: ObjectiveKind, traj: Trajectory) -> list:
    if objective.unit == "trajectory":
        return [traj]
    units = list(traj.transitions())
    if objective.interior_only:
        units = [(s, t) for s, t in units if t != SINK]
    return units


def _apply_sgd(params: TabularParams, grads: ParamGrads, lr: float) -> None:
    if params.policy_logits is not None:
        for s, g in enumerate(grads.policy_logits):
            params.policy_logits[s] -= lr * g
    if params.log_flow is not None:
        params.log_flow -= lr * grads.log_flow
    if params.q_values is not None:
        for s, g in enumerate(grads.q_values):
            params.q_values[s] -= lr * g


class _Adam:
    """Per-parameter adaptive steps; breaks the exact objective-pair
    lockstep, so it is opt-in."""

    def __init__(self, params: TabularParams, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = ParamGrads.zeros_like(params)
        self.v = ParamGrads.zeros_like(params)

    def step(self, params: TabularParams, grads: ParamGrads) -> None:
        self.t += 1
        bias1 = 1.0 - self.b1**self.t
        bias2 = 1.0 - self.b2**self.t

        def upd(p, g, m, v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

        if params.policy_logits is not None:
            for s in range(len(params.policy_logits)):
                upd(params.policy_logits[s], grads.policy_logits[s],
                    self.m.policy_logits[s], self.v.policy_logits[s])
        if params.log_flow is not None:
            upd(params.log_flow, grads.log_flow, self.m.log_flow, self.v.log_flow)
        if params.q_values is not None:
            for s in range(len(params.q_values)):
                upd(params.q_values[s], grads.q_values[s],
                    self.m.q_values[s], self.v.q_values[s])


def evaluate_params(
    params: TabularParams, scheme: RewardScheme
) -> tuple[float, float]:
    """Exact (jsd, pearson) of the parametrized policy against the Gibbs
    target over the full terminating support."""
    alpha = scheme.alpha
    policy = params.policy_rows(alpha)
    dist = terminating_distribution(params.graph, policy)
    target = gibbs_target(scheme.energy, alpha)
    div = jsd(dist, target)
    returns = -scheme.energy.terminal_vector()
    try:
        rho = pearson_logprob_return(np.log(np.maximum(dist.probs, 1e-300)), returns)
    except ValueError:
        rho = float("nan")
    return div, rho


def train(graph: SoftMdpGraph, scheme: RewardScheme, config: TrainConfig) -> TrainResult:
    """Run the full training protocol; returns metric rows and final params.

    Identical configs produce bit-identical metric sequences. A non-finite
    loss or gradient aborts with a diagnostic row instead of training on.
    """
    if config.alpha != scheme.alpha:
        raise ValueError("config.alpha must match the reward scheme's alpha")
    objective = config.objective
    rng = np.random.default_rng(config.seed)
    params = init_params(
        graph, objective.param_mode, init=config.init,
        sigma=config.init_sigma, seed=config.seed,
    )
    target = params.copy() if objective.uses_target else None
    buffer = ReplayBuffer(config.buffer_capacity)
    adam = _Adam(params, config.learning_rate) if config.optimizer == "adam" else None

    metrics: list[MetricsRow] = []
    fresh_target = max(1, math.ceil(config.batch_size * config.fresh_fraction))

    for it in range(config.iterations):
        eps = epsilon_at(config, it)

        policy_cache: dict[int, np.ndarray] = {}
        fresh: list = []
        rollouts = 0
        while len(fresh) < fresh_target and rollouts < 50 * fresh_target:
            traj = sample_trajectory(
                graph, params, eps, rng, alpha=scheme.alpha, policy_cache=policy_cache
            )
            rollouts += 1
            fresh.extend(_units_from(objective, traj))
        buffer.extend(fresh)
        batch = fresh + buffer.sample(config.batch_size - len(fresh), rng)
        if not batch:
            continue

        loss, grads = loss_and_gradient(
            objective, batch, params, scheme, target_params=target, frozen=params
        )
        if not np.isfinite(loss) or not grads.is_finite():
            metrics.append(MetricsRow(it, float("nan"), float("nan"), float("nan"), eps))
            return TrainResult(metrics, params, aborted=True,
                               abort_reason=f"non-finite loss/gradient at iteration {it}")
        if adam is not None:
            adam.step(params, grads)
        else:
            _apply_sgd(params, grads, config.learning_rate)
        if not params.is_finite():
            metrics.append(MetricsRow(it, float("nan"), float("nan"), float("nan"), eps))
            return TrainResult(metrics, params, aborted=True,
                               abort_reason=f"non-finite parameters at iteration {it}")
        if target is not None and (it + 1) % config.target_update_period == 0:
            target = params.copy()

        if it % config.eval_interval == 0 or it == config.iterations - 1:
            div, rho = evaluate_params(params, scheme)
            metrics.append(MetricsRow(it, loss, div, rho, eps))

    return TrainResult(metrics, params)
