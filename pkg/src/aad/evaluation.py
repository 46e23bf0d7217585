"""Frame-level confusion counts, ROC sweeps over k, and trapezoidal AUC."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .detector import AnomalyMap, DetectorConfig
from .errors import InsufficientDataError, ParseError, ShapeError
from .pipeline import RunArtifacts, frozen_terms, maps_at_k, run_blocks

__all__ = [
    "RocPoint",
    "confusion",
    "evaluated_mask",
    "frame_predictions",
    "roc_sweep",
    "auc",
    "load_frame_labels",
    "format_roc_csv",
    "recovery_false_positives",
]


@dataclass(frozen=True)
class RocPoint:
    k: float
    tpr: float
    fpr: float
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_counts(cls, k, tp, fp, tn, fn) -> RocPoint:
        tpr = tp / (tp + fn) if tp + fn else 0.0
        fpr = fp / (fp + tn) if fp + tn else 0.0
        return cls(k, tpr, fpr, tp, fp, tn, fn)


def confusion(pred, truth, evaluated=None) -> tuple[int, int, int, int]:
    """Return ``(tp, fp, tn, fn)`` over frames where ``evaluated`` is true."""
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction length {pred.shape} differs from truth length {truth.shape}")
    mask = np.ones(pred.shape, bool) if evaluated is None else np.asarray(evaluated, bool)
    if mask.shape != pred.shape:
        raise ShapeError("evaluated mask length differs from prediction length")
    p, t = pred[mask], truth[mask]
    return (
        int(np.sum(p & t)),
        int(np.sum(p & ~t)),
        int(np.sum(~p & ~t)),
        int(np.sum(~p & t)),
    )


def frame_predictions(maps: Sequence[AnomalyMap], num_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame flags and the evaluation mask.

    Frames without a detection (the first ``stride`` frames) and frames
    before the first one in which any cell had finished warmup are excluded.
    """
    pred = np.zeros(num_frames, dtype=bool)
    evaluated = np.zeros(num_frames, dtype=bool)
    warm_seen = False
    for m in maps:
        warm_seen = warm_seen or m.warm
        if 0 <= m.frame_index < num_frames:
            pred[m.frame_index] = m.frame_flag
            evaluated[m.frame_index] = warm_seen
    return pred, evaluated


def evaluated_mask(maps: Sequence[AnomalyMap], num_frames: int) -> np.ndarray:
    return frame_predictions(maps, num_frames)[1]


def roc_sweep(
    artifacts: RunArtifacts,
    truth,
    k_values: Sequence[float],
    cfg: DetectorConfig = DetectorConfig(),
    mode: str = "frozen",
) -> list[RocPoint]:
    """One ROC point per k, sorted by k.

    ``frozen`` evaluates every k on a single non-adaptive statistics
    trajectory, so the anomalous-cell sets are nested and both rates are
    non-increasing in k. ``live`` re-runs the adaptive loop for each k.
    """
    if not len(k_values):
        raise InsufficientDataError("k_values must not be empty")
    if any(k <= 0 for k in k_values):
        raise ValueError("k values must be positive")
    truth = np.asarray(truth)
    if len(truth) != artifacts.num_frames:
        raise ShapeError(f"truth has {len(truth)} labels, run has {artifacts.num_frames} frames")
    ks = sorted(float(k) for k in k_values)
    objflags = artifacts.objflags if cfg.use_objects else None

    if mode == "frozen":
        frozen_cfg = replace(cfg, adapt=False)
        terms = frozen_terms(artifacts.blocks, frozen_cfg)
        runs = [maps_at_k(terms, k, frozen_cfg, objflags, artifacts.frame_indices) for k in ks]
    elif mode == "live":
        runs = [
            run_blocks(artifacts.blocks, replace(cfg, k=k), objflags, artifacts.frame_indices)[0] for k in ks
        ]
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")

    points = []
    for k, maps in zip(ks, runs):
        pred, evaluated = frame_predictions(maps, artifacts.num_frames)
        points.append(RocPoint.from_counts(k, *confusion(pred, truth, evaluated)))
    return points


def auc(points: Sequence[RocPoint] | Sequence[tuple[float, float]]) -> float:
    """Trapezoidal area under the (fpr, tpr) polyline closed by (0, 0) and (1, 1)."""
    pairs = [(p.fpr, p.tpr) if isinstance(p, RocPoint) else (float(p[0]), float(p[1])) for p in points]
    if not pairs:
        raise InsufficientDataError("auc needs at least one operating point")
    pts = sorted([(0.0, 0.0), *pairs, (1.0, 1.0)])
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def load_frame_labels(path) -> np.ndarray:
    """Read one 0/1 label per line; blank lines are ignored."""
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.strip()
            if not tok:
                continue
            if tok not in ("0", "1"):
                raise ParseError(f"expected 0 or 1, got {tok[:16]!r}", lineno)
            labels.append(int(tok))
    return np.asarray(labels, dtype=np.int8)


def format_roc_csv(points: Sequence[RocPoint]) -> str:
    lines = ["k,tp,fp,tn,fn,tpr,fpr"]
    for p in points:
        lines.append(f"{p.k:g},{p.tp},{p.fp},{p.tn},{p.fn},{p.tpr:.6f},{p.fpr:.6f}")
    lines.append(f"# auc={auc(points):.6f}")
    return "\n".join(lines) + "\n"


def recovery_false_positives(pred, truth, evaluated, after: int, run: int = 10) -> int:
    """False-positive frames after frame ``after`` until ``run`` consecutive normal frames.

    Counts every remaining false positive if the run of normal frames never
    completes.
    """
    pred = np.asarray(pred, bool)
    truth = np.asarray(truth, bool)
    evaluated = np.asarray(evaluated, bool)
    fps = streak = 0
    for t in range(after + 1, len(pred)):
        if not evaluated[t]:
            continue
        if pred[t] and not truth[t]:
            fps += 1
            streak = 0
        elif not pred[t]:
            streak += 1
            if streak >= run:
                break
    return fps
