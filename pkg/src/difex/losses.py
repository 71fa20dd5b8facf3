"""Objective terms: distillation, cross-domain alignment, exploration.

The combined objective is

    cls + lambda1 * distill + lambda2 * align + lambda3 * explore

where terms with a zero weight are skipped outright, so the degenerate
setting builds exactly the same graph as a plain cross-entropy baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    softmax_cross_entropy,
    sum_all,
    sum_rows,
    rowwise_div,
    take_rows,
)

__all__ = [
    "LossWeights",
    "DomainBatch",
    "mse_distill",
    "covariance",
    "coral_loss",
    "exploration_l2",
    "exploration_norm_l1",
    "total_objective",
]

VARIANTS = ("l2", "norm_l1")


@dataclass
class LossWeights:
    """Non-negative weights for the three auxiliary terms.

    lambda1 scales distillation, lambda2 alignment, lambda3 exploration;
    variant picks the exploration distance.
    """

    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1
    variant: str = "l2"

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
            setattr(self, name, v)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass
class DomainBatch:
    """A feature matrix with per-row labels and domain ids."""

    features: Tensor
    labels: np.ndarray
    domain_ids: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        self.domain_ids = np.asarray(self.domain_ids, dtype=np.intp)
        b = self.features.data.shape[0]
        if self.labels.shape != (b,) or self.domain_ids.shape != (b,):
            raise ValueError("labels/domain_ids must match the batch dimension")


def mse_distill(student_feat: Tensor, teacher_feat) -> Tensor:
    """Mean squared gap to the teacher's features; teacher is a constant."""
    target = teacher_feat.data if isinstance(teacher_feat, Tensor) else np.asarray(teacher_feat)
    if student_feat.data.shape != target.shape:
        raise ValueError(
            f"feature shapes differ: {student_feat.data.shape} vs {target.shape}"
        )
    diff = student_feat - Tensor(target)
    return sum_all(diff * diff).scale(1.0 / diff.data.size)


def covariance(X: Tensor) -> Tensor:
    """Unbiased covariance 1/(n−1)·(XᵀX − (1/n)(1ᵀX)ᵀ(1ᵀX)) of row samples."""
    n = X.data.shape[0]
    if X.data.ndim != 2 or n < 2:
        raise ValueError("covariance needs a matrix with at least 2 rows")
    ones = Tensor(np.ones((1, n)))
    colsum = ones @ X  # 1×d
    gram = X.T @ X
    return (gram - (colsum.T @ colsum).scale(1.0 / n)).scale(1.0 / (n - 1))


def coral_loss(batch: DomainBatch) -> Tensor:
    """Mean squared Frobenius distance between per-domain covariances,
    over unordered domain pairs."""
    present = np.unique(batch.domain_ids)
    if present.size < 2:
        raise ValueError("alignment needs at least 2 domains in the batch")
    covs = []
    for d in present:
        rows = np.flatnonzero(batch.domain_ids == d)
        if rows.size < 2:
            raise ValueError(f"domain {d} has {rows.size} sample(s); need >= 2")
        covs.append(covariance(take_rows(batch.features, rows)))
    total = None
    for i in range(len(covs)):
        for j in range(i + 1, len(covs)):
            diff = covs[i] - covs[j]
            term = sum_all(diff * diff)
            total = term if total is None else total + term
    npairs = len(covs) * (len(covs) - 1) // 2
    return total.scale(1.0 / npairs)


def exploration_l2(z1: Tensor, z2: Tensor) -> Tensor:
    """Negative mean squared distance between paired rows (push apart)."""
    if z1.data.shape != z2.data.shape:
        raise ValueError(f"shapes differ: {z1.data.shape} vs {z2.data.shape}")
    diff = z1 - z2
    return sum_all(diff * diff).scale(-1.0 / z1.data.shape[0])


def exploration_norm_l1(z1: Tensor, z2: Tensor) -> Tensor:
    """Negative mean L1 distance between L2-normalized rows.

    Bounded in [−2·sqrt(d), 0], which keeps the term from dominating
    late in training the way the unbounded squared distance can.
    """
    if z1.data.shape != z2.data.shape:
        raise ValueError(f"shapes differ: {z1.data.shape} vs {z2.data.shape}")
    normed = []
    for z in (z1, z2):
        norms = sum_rows(z * z).sqrt()
        if np.any(norms.data <= 1e-12):
            raise ValueError("zero-norm row; cannot normalize")
        normed.append(rowwise_div(z, norms))
    diff = normed[0] - normed[1]
    return sum_all(diff.abs()).scale(-1.0 / z1.data.shape[0])


def total_objective(batch: DomainBatch, teacher_feat, outputs, w: LossWeights):
    """Weighted sum of the active terms, plus their values for logging.

    ``outputs`` carries .logits, .z1 (distilled half), .z2 (aligned half).
    Zero-weight terms are not evaluated at all, so their graph nodes never
    exist. Returns (total: Tensor, parts: dict of floats).
    """
    cls = softmax_cross_entropy(outputs.logits, batch.labels)
    total = cls
    parts = {"cls": float(cls.data)}
    if w.lambda1 > 0:
        if teacher_feat is None:
            raise ValueError("distillation weight set but no teacher features given")
        mse = mse_distill(outputs.z1, teacher_feat)
        parts["mse"] = float(mse.data)
        total = total + mse.scale(w.lambda1)
    if w.lambda2 > 0:
        align = coral_loss(DomainBatch(outputs.z2, batch.labels, batch.domain_ids))
        parts["align"] = float(align.data)
        total = total + align.scale(w.lambda2)
    if w.lambda3 > 0:
        explore = (
            exploration_l2(outputs.z1, outputs.z2)
            if w.variant == "l2"
            else exploration_norm_l1(outputs.z1, outputs.z2)
        )
        parts["exp"] = float(explore.data)
        total = total + explore.scale(w.lambda3)
    parts["total"] = float(total.data)
    return total, parts
