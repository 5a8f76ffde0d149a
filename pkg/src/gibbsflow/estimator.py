"""Scikit-learn style estimator wrapping the training loop.

``fit`` takes an environment (a ``(SoftMdpGraph, EnergyModel)`` pair as
returned by the builders in :mod:`gibbsflow.envs`) and learns a sampling
policy whose terminating-state distribution approximates the Gibbs target
``exp(-E(x) / alpha) / Z``. The fitted estimator exposes the exact
distribution of its policy, log-probabilities, sampling, and a score
(negative divergence to the target), and composes with scikit-learn
tooling through ``get_params`` / ``set_params``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import make_scheme
from .envs import EnergyModel
from .graph import SoftMdpGraph, validate_dag
from .metrics import jsd
from .oracles import gibbs_target, terminating_distribution
from .training import TrainConfig, sample_trajectory, train

__all__ = ["GibbsPolicyEstimator"]


class GibbsPolicyEstimator(BaseEstimator):
    """Learn a policy that samples terminating states from a Gibbs target.

    Parameters mirror the training configuration; ``objective`` selects the
    residual ('tb', 'pcl', 'subtb', 'db', 'sql', 'fldb', 'mdb', 'pisql',
    'sac'), ``reward`` the correction scheme ('uncorrected', 'terminal',
    'dense', 'fl') and ``backward`` the backward policy ('uniform',
    'counting').
    """

    def __init__(
        self,
        objective: str = "tb",
        reward: str = "terminal",
        backward: str = "uniform",
        alpha: float = 1.0,
        iterations: int = 20_000,
        batch_size: int = 8,
        learning_rate: float = 0.1,
        epsilon_start: float = 1.0,
        epsilon_end: float = 0.1,
        epsilon_decay_fraction: float = 0.5,
        target_update_period: int = 1_000,
        buffer_capacity: int = 100_000,
        eval_interval: int = 100,
        optimizer: str = "sgd",
        seed: int = 0,
    ):
        self.objective = objective
        self.reward = reward
        self.backward = backward
        self.alpha = alpha
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_fraction = epsilon_decay_fraction
        self.target_update_period = target_update_period
        self.buffer_capacity = buffer_capacity
        self.eval_interval = eval_interval
        self.optimizer = optimizer
        self.seed = seed

    # -- validation helpers -------------------------------------------------

    @staticmethod
    def _validate_env(env) -> tuple[SoftMdpGraph, EnergyModel]:
        try:
            graph, energy = env
        except (TypeError, ValueError):
            raise TypeError(
                "env must be a (SoftMdpGraph, EnergyModel) pair, as returned "
                "by the environment builders"
            ) from None
        if not isinstance(graph, SoftMdpGraph) or not isinstance(energy, EnergyModel):
            raise TypeError("env must be a (SoftMdpGraph, EnergyModel) pair")
        report = validate_dag(graph)
        if not report.is_valid:
            raise ValueError(f"invalid graph: {sorted(report.kinds())}")
        return graph, energy

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise NotFittedError("this estimator is not fitted yet; call fit(env)")

    # -- estimator API -------------------------------------------------------

    def fit(self, env, y=None) -> "GibbsPolicyEstimator":
        """Train on an environment; ``y`` is ignored (present for API
        compatibility)."""
        graph, energy = self._validate_env(env)
        config = TrainConfig(
            objective=self.objective,
            iterations=self.iterations,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end,
            epsilon_decay_fraction=self.epsilon_decay_fraction,
            target_update_period=self.target_update_period,
            buffer_capacity=self.buffer_capacity,
            seed=self.seed,
            alpha=self.alpha,
            eval_interval=self.eval_interval,
            optimizer=self.optimizer,
        )
        scheme = make_scheme(graph, energy, self.reward, self.backward, self.alpha)
        result = train(graph, scheme, config)
        if result.aborted:
            raise RuntimeError(f"training aborted: {result.abort_reason}")
        self.graph_ = graph
        self.energy_ = energy
        self.scheme_ = scheme
        self.params_ = result.params
        self.metrics_ = result.metrics
        self.distribution_ = terminating_distribution(
            graph, result.params.policy_rows(self.alpha)
        )
        self.jsd_ = jsd(self.distribution_, gibbs_target(energy, self.alpha))
        return self

    def predict_proba(self) -> np.ndarray:
        """Exact terminating-state probabilities of the learned policy,
        aligned with ``terminating_states_``."""
        self._check_fitted()
        return self.distribution_.probs.copy()

    @property
    def terminating_states_(self) -> tuple[int, ...]:
        self._check_fitted()
        return self.distribution_.states

    def log_prob(self, states) -> np.ndarray:
        """Log-probability of each given terminating state under the
        learned policy's exact marginal."""
        self._check_fitted()
        table = self.distribution_.as_dict()
        return np.array([np.log(table[int(s)]) for s in np.atleast_1d(states)])

    def sample(self, n_samples: int = 1, random_state: int | None = None) -> np.ndarray:
        """Sample terminating states by rolling out the learned policy."""
        self._check_fitted()
        rng = np.random.default_rng(self.seed if random_state is None else random_state)
        out = np.empty(n_samples, dtype=int)
        for i in range(n_samples):
            traj = sample_trajectory(
                self.graph_, self.params_, 0.0, rng, alpha=self.alpha
            )
            out[i] = traj.last_state
        return out

    def score(self, env=None, y=None) -> float:
        """Negative Jensen-Shannon divergence to the Gibbs target (higher is
        better, 0 is exact)."""
        self._check_fitted()
        return -float(self.jsd_)
