"""Distribution and diagnostic metrics."""
from __future__ import annotations

import numpy as np

from .oracles import DistributionTable

__all__ = ["jsd", "pearson_logprob_return"]


def _as_aligned_arrays(p, q) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, DistributionTable) and isinstance(q, DistributionTable):
        if p.states != q.states:
            raise ValueError("distributions have different supports")
        return p.probs, q.probs
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions have different supports")
    return p, q


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats, with the 0 log 0 = 0 convention.

    Symmetric, zero iff p = q, bounded by log 2.
    """
    p, q = _as_aligned_arrays(p, q)
    m = 0.5 * (p + q)

    def kl(a: np.ndarray) -> float:
        mask = a > 0
        return float(np.sum(a[mask] * (np.log(a[mask]) - np.log(m[mask]))))

    # identical inputs can land a rounding hair below zero
    return max(0.0, 0.5 * kl(p) + 0.5 * kl(q))


def pearson_logprob_return(log_probs, returns) -> float:
    """Pearson correlation between terminating-state log-probabilities and
    returns. Raises on fewer than two samples or zero variance."""
    x = np.asarray(log_probs, dtype=float)
    y = np.asarray(returns, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("log_probs and returns must be 1-d and aligned")
    if x.size < 2:
        raise ValueError("need at least two samples")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        raise ValueError("zero variance, correlation undefined")
    return float(np.clip((xc * yc).sum() / denom, -1.0, 1.0))
