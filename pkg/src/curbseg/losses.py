"""Cross-entropy, focal, adaptive cross-entropy and Lovasz-softmax losses.

The adaptive variant counters class imbalance two ways at once: the focusing
exponent grows for rare classes (base exponent plus a scaled rarity term)
and a log-frequency weight boosts their per-point contribution.  The
Lovasz-softmax term is a convex surrogate of the per-class Jaccard loss,
computed by sorting error margins and accumulating Jaccard-gradient weights.
Class frequencies are a dataset-level statistic, computed once over the
training split, not per batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError
from .lidar_io import N_CLASSES

P_CLAMP = 1e-12


@dataclass(frozen=True)
class ClassHistogram:
    """Per-class point counts and frequencies over a training split."""

    counts: np.ndarray  # (n_classes,) int64
    total: int

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if counts.sum() != self.total:
            raise ValueError("class counts do not sum to the total")

    @classmethod
    def from_classes(cls, classes: np.ndarray, n_classes: int = N_CLASSES) -> "ClassHistogram":
        classes = np.asarray(classes, dtype=np.int64)
        counts = np.bincount(classes, minlength=n_classes)
        return cls(counts=counts, total=int(classes.size))

    @property
    def frequencies(self) -> np.ndarray:
        """eta per class: count_i / total (zeros for an empty histogram)."""
        if self.total == 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return self.counts / self.total


@dataclass(frozen=True)
class LossConfig:
    """Hyperparameters of the loss group.

    alpha_t: balancing factor; gamma_a: base focusing exponent; s: scale of
    the rarity-dependent exponent; delta_log: additive constant inside the
    log of the class weight; lambda_iou: weight of the Lovasz term.
    """

    alpha_t: float = 1.0
    gamma_a: float = 2.0
    s: float = 2.0
    delta_log: float = 1.02
    lambda_iou: float = 1.0

    def __post_init__(self) -> None:
        if self.gamma_a < 0 or self.s < 0 or self.lambda_iou < 0:
            raise ConfigurationError("gamma_a, s and lambda_iou must be non-negative")

    def validate_for(self, hist: ClassHistogram) -> None:
        eta = hist.frequencies
        if np.min(self.delta_log + eta) <= 1e-12:
            raise ConfigurationError(
                f"delta_log={self.delta_log} drives the log argument non-positive"
            )


def class_factors(hist: ClassHistogram, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray]:
    """(omega, gamma) per class: the frequency weight 1/log(delta + eta) and
    the focusing exponent gamma_a + s * (1 - eta).

    Raises:
        ConfigurationError: delta_log + eta is non-positive for some class,
            or makes the log vanish (weight would divide by zero).
    """
    eta = hist.frequencies
    arg = cfg.delta_log + eta
    if np.min(arg) <= 0:
        raise ConfigurationError(f"non-positive log argument {np.min(arg)}")
    logs = np.log(arg)
    if np.any(logs == 0):
        raise ConfigurationError("delta_log + eta hits 1 exactly; weight undefined")
    omega = 1.0 / logs
    gamma = cfg.gamma_a + cfg.s * (1.0 - eta)
    return omega, gamma


def ce_loss(p_t: np.ndarray | float) -> float:
    """Mean negative log-likelihood of the true class, clamped below."""
    p = np.maximum(np.asarray(p_t, dtype=np.float64), P_CLAMP)
    return float(np.mean(-np.log(p)))


def focal_loss(p_t: np.ndarray | float, alpha_t: float = 1.0, gamma: float = 2.0) -> float:
    """Mean of -alpha * (1 - p)^gamma * log(p)."""
    if gamma < 0:
        raise ConfigurationError("gamma must be non-negative")
    p = np.maximum(np.asarray(p_t, dtype=np.float64), P_CLAMP)
    return float(np.mean(-alpha_t * (1.0 - p) ** gamma * np.log(p)))


def ace_loss(
    p_t: np.ndarray,
    class_ids: np.ndarray,
    hist: ClassHistogram,
    cfg: LossConfig,
    class_weights: np.ndarray | None = None,
) -> float:
    """Adaptive cross-entropy: focal terms with class-specific exponent and
    weight, averaged over points.

    ``class_weights`` overrides the computed frequency weights (useful to
    force unit weights, which reduces the loss to a plain focal loss).
    """
    p = np.maximum(np.asarray(p_t, dtype=np.float64), P_CLAMP)
    ids = np.asarray(class_ids, dtype=np.int64)
    if p.shape != ids.shape:
        raise ValueError("p_t and class_ids must align")
    omega, gamma = class_factors(hist, cfg)
    if class_weights is not None:
        omega = np.asarray(class_weights, dtype=np.float64)
    terms = -cfg.alpha_t * omega[ids] * (1.0 - p) ** gamma[ids] * np.log(p)
    return float(np.mean(terms)) if p.size else 0.0


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Jaccard loss along the sorted-error path."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if gt_sorted.size > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def _lovasz_tensor(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Lovasz-softmax over classes present in the labels (mean across them)."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if n == 0:
        return Tensor(0.0)
    present = np.unique(labels)
    terms = []
    for c in present:
        fg = (labels == c).astype(np.float64)
        p_c = probs[(slice(None), int(c))]
        # error margin: 1 - p for the class's own points, p elsewhere
        signs = 1.0 - 2.0 * fg
        errors = ad.add(ad.mul(p_c, signs), fg)
        order = np.argsort(-errors.data, kind="stable")
        g = lovasz_grad(fg[order])
        terms.append(ad.dot_const(errors[order], g))
    stacked = ad.concat([ad.reshape(t, (1,)) for t in terms], axis=0)
    return ad.tmean(stacked)


def lovasz_softmax_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Value form: rows of ``probs`` are per-point class distributions."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probs must be (n_points, n_classes)")
    return float(_lovasz_tensor(Tensor(probs), labels).data)


def loss_group(
    logits: Tensor | np.ndarray,
    labels: np.ndarray,
    hist: ClassHistogram,
    cfg: LossConfig,
) -> tuple[Tensor, Tensor, Tensor]:
    """Combined training loss: (total, adaptive-CE term, Lovasz term).

    ``logits`` is (n_points, n_classes); the total is
    ``ace + lambda_iou * lovasz`` and stays differentiable when the logits
    tensor requires gradients.
    """
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.shape[0] != labels.shape[0]:
        raise ValueError("logits and labels must align")
    n = labels.shape[0]
    if n == 0:
        zero = Tensor(0.0)
        return zero, zero, zero

    probs = ad.softmax(logits, axis=1)
    p_t = ad.clamp_min(probs[(np.arange(n), labels)], P_CLAMP)
    omega, gamma = class_factors(hist, cfg)
    ace = ad.tmean(
        ad.mul(
            ad.mul(ad.pow_const(1.0 - p_t, gamma[labels]), -ad.log(p_t)),
            cfg.alpha_t * omega[labels],
        )
    )
    iou = _lovasz_tensor(probs, labels)
    total = ad.add(ace, ad.mul(iou, cfg.lambda_iou))
    return total, ace, iou
