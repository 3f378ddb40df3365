"""Loss stack: feature-consistency loss between a sample and its
clothes-swapped twin, cross-entropy and batch-hard triplet over the
concatenated initial+generated batch, and their unweighted sum.

Every loss returns its scalar value together with analytic gradients with
respect to its inputs, so the trainer can push them through the network's
backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError

_NORM_EPS = 1e-12  # subgradient guard at zero-norm singularities


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.3
    mse_mode: str = "l2_norm"  # "l2_norm" (mean of unsquared norms) or "squared_l2"

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.mse_mode not in ("l2_norm", "squared_l2"):
            raise ConfigError(f"unknown mse_mode {self.mse_mode!r}")


@dataclass
class LossReport:
    mse: float
    ce: float
    triplet: float
    total: float
    hardest_positive: list = field(default_factory=list)
    hardest_negative: list = field(default_factory=list)


def mse_consistency(f: np.ndarray, f_prime: np.ndarray, cfg: LossConfig):
    """Consistency penalty between initial and generated embeddings.

    l2_norm mode: (1/B) * sum_i ||f_i - f'_i||_2 (unsquared norms).
    squared_l2 mode: mean squared difference over all B*D entries.
    Returns (value, grad_f, grad_f_prime); gradients flow to both branches.
    """
    if f.shape != f_prime.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {f_prime.shape}")
    b = f.shape[0]
    diff = f - f_prime
    if cfg.mse_mode == "squared_l2":
        value = float(np.mean(diff**2))
        grad = 2.0 * diff / diff.size
    else:
        norms = np.linalg.norm(diff, axis=1)
        value = float(norms.sum() / b)
        safe = np.where(norms > _NORM_EPS, norms, 1.0)
        grad = diff / safe[:, None] / b
        grad[norms <= _NORM_EPS] = 0.0
    return value, grad, -grad


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-softmax of the true class, log-sum-exp stabilized.

    Returns (value, grad_logits)."""
    n, num_classes = logits.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must index [0, {num_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    value = float(-log_p[np.arange(n), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return value, grad / n


def _pairwise_distances(f):
    sq = np.sum(f**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (f @ f.T)
    return np.sqrt(np.maximum(d2, 0.0))


def batch_hard_triplet(f: np.ndarray, labels: np.ndarray, cfg: LossConfig):
    """Batch-hard triplet: per anchor, hinge on margin + hardest-positive
    distance - hardest-negative distance, averaged over the batch.

    Euclidean distances; ties broken by lowest index. Returns
    (value, grad_f, hardest_positive_idx, hardest_negative_idx)."""
    n = f.shape[0]
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    if not pos_mask.any(axis=1).all():
        bad = int(np.argmin(pos_mask.any(axis=1)))
        raise ValueError(f"anchor {bad} has no positive in the batch")
    if not neg_mask.any(axis=1).all():
        bad = int(np.argmin(neg_mask.any(axis=1)))
        raise ValueError(f"anchor {bad} has no negative in the batch")

    dist = _pairwise_distances(f)
    pos_d = np.where(pos_mask, dist, -np.inf)
    neg_d = np.where(neg_mask, dist, np.inf)
    hardest_pos = np.argmax(pos_d, axis=1)  # argmax takes the first maximum
    hardest_neg = np.argmin(neg_d, axis=1)
    anchors = np.arange(n)
    hinge = cfg.margin + dist[anchors, hardest_pos] - dist[anchors, hardest_neg]
    active = hinge > 0
    value = float(np.maximum(hinge, 0.0).mean())

    grad = np.zeros_like(f)
    for i in np.flatnonzero(active):
        p, q = hardest_pos[i], hardest_neg[i]
        dp, dn = dist[i, p], dist[i, q]
        if dp > _NORM_EPS:
            u = (f[i] - f[p]) / dp / n
            grad[i] += u
            grad[p] -= u
        if dn > _NORM_EPS:
            v = (f[i] - f[q]) / dn / n
            grad[i] -= v
            grad[q] += v
    return value, grad, hardest_pos.tolist(), hardest_neg.tolist()


def total_loss(mse_value: float, ce_value: float, triplet_value: float,
               hardest_positive=None, hardest_negative=None) -> LossReport:
    """Unweighted sum of the three components."""
    return LossReport(
        mse=mse_value,
        ce=ce_value,
        triplet=triplet_value,
        total=mse_value + ce_value + triplet_value,
        hardest_positive=hardest_positive or [],
        hardest_negative=hardest_negative or [],
    )
