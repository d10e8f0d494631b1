"""Point-level curb metrics, tolerance-band matching, and stage timing.

Tolerance matching is many-to-one nearest-within-tau: a prediction is a true
positive when any true curb point lies within tau in the ground plane, and a
true point left unmatched by every prediction counts as a false negative.
This is the simplest protocol that is monotone in tau.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError
from .lidar_io import CLASS_CURB


@dataclass(frozen=True)
class EvalReport:
    """TP/FP/FN tallies with the derived precision/recall/F1."""

    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 1.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0

    def __add__(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class ToleranceSpec:
    """Matching radii in meters, strictly increasing."""

    taus: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20)

    def __post_init__(self) -> None:
        taus = tuple(float(t) for t in self.taus)
        object.__setattr__(self, "taus", taus)
        if not taus or any(t <= 0 for t in taus):
            raise ConfigurationError("tolerances must be positive")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ConfigurationError("tolerances must be strictly increasing")


def strict_metrics(pred: np.ndarray, truth: np.ndarray, positive: int = CLASS_CURB) -> EvalReport:
    """Exact per-point tallies for one class (curb by default)."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    p = pred == positive
    t = truth == positive
    return EvalReport(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)),
    )


def tolerance_metrics(
    pred_points: np.ndarray,
    true_points: np.ndarray,
    spec: ToleranceSpec | None = None,
) -> dict[float, EvalReport]:
    """Tolerance-band report per tau; distances are 2-D (ground plane)."""
    spec = spec or ToleranceSpec()
    pred = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)[:, :2]
    true = np.asarray(true_points, dtype=np.float64).reshape(-1, 3)[:, :2]

    if len(pred) and len(true):
        d_pred = cKDTree(true).query(pred)[0]  # nearest true point per prediction
        d_true = cKDTree(pred).query(true)[0]  # nearest prediction per true point
    else:
        d_pred = np.full(len(pred), np.inf)
        d_true = np.full(len(true), np.inf)

    out: dict[float, EvalReport] = {}
    for tau in spec.taus:
        tp = int(np.sum(d_pred <= tau))
        fp = len(pred) - tp
        fn = int(np.sum(d_true > tau))
        out[tau] = EvalReport(tp=tp, fp=fp, fn=fn)
    return out


@dataclass(frozen=True)
class ThroughputResult:
    """Wall-clock summary for one pipeline stage."""

    ms_per_frame: float
    n_frames: int
    warmup: int

    @property
    def fps(self) -> float:
        return 1000.0 / self.ms_per_frame


def measure_throughput(
    stage: Callable[[object], object],
    frames: Sequence,
    warmup: int = 3,
    min_frames: int = 10,
) -> ThroughputResult:
    """Mean wall-clock per frame after warm-up frames.

    Raises:
        ValueError: fewer than ``min_frames`` frames.
    """
    if len(frames) < min_frames:
        raise ValueError(f"need at least {min_frames} frames, got {len(frames)}")
    for frame in frames[:warmup]:
        stage(frame)
    timed = frames[warmup:]
    start = time.perf_counter()
    for frame in timed:
        stage(frame)
    elapsed = time.perf_counter() - start
    return ThroughputResult(
        ms_per_frame=1000.0 * elapsed / len(timed),
        n_frames=len(timed),
        warmup=warmup,
    )
