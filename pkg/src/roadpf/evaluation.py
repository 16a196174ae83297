"""Accuracy metrics for tracking and for roadmap overlays.

Overlay accuracy compares two curves: both are resampled at 1 mm, matched
by a minimum-cost monotone correspondence, and the distances of the matched
pairs are averaged after dropping pairs that touch an endpoint of either
curve. Tracking accuracy is the per-frame tip error with a fixed outlier
threshold.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .core import Polyline
from .errors import InsufficientDataError, InvalidInputError

OUTLIER_MM = 40.0
MIN_CORRESPONDENCE_POINTS = 3


def _points(line) -> np.ndarray:
    return line.points if isinstance(line, Polyline) else np.asarray(line, dtype=np.float64)


def arclength(points: np.ndarray) -> np.ndarray:
    """Cumulative arclength at every vertex, starting at 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(line, interval: float = 1.0) -> Polyline:
    """Points every ``interval`` of arclength from the start, plus the last point.

    A final step shorter than ``1e-6 * interval`` is merged into the end
    point rather than producing a near-duplicate vertex.
    """
    if not interval > 0:
        raise InvalidInputError("interval must be positive")
    pts = _points(line)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise InvalidInputError("a polyline needs at least two 2D points")
    s = arclength(pts)
    total = s[-1]
    if not total >= interval:
        raise InvalidInputError(f"polyline length {total:.6g} is shorter than the interval {interval}")
    n_steps = int(np.floor(total / interval + 1e-9))
    targets = np.arange(n_steps + 1) * interval
    if total - targets[-1] <= 1e-6 * interval:
        targets = targets[:-1]
    targets = np.append(targets, total)
    # zero-length segments would make the interpolation ambiguous
    keep = np.concatenate([[True], np.diff(s) > 0])
    out = np.column_stack([np.interp(targets, s[keep], pts[keep, 0]),
                           np.interp(targets, s[keep], pts[keep, 1])])
    out[0], out[-1] = pts[0], pts[-1]
    return Polyline(out)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Monotone point pairs between curves A and B with their distances."""

    pairs: np.ndarray
    distances: np.ndarray
    n_a: int
    n_b: int

    @property
    def total_cost(self) -> float:
        return float(self.distances.sum())

    def interior(self) -> CorrespondenceSet:
        """Pairs whose points are neither the first nor the last of their curve."""
        i, j = self.pairs[:, 0], self.pairs[:, 1]
        keep = (i > 0) & (i < self.n_a - 1) & (j > 0) & (j < self.n_b - 1)
        return CorrespondenceSet(self.pairs[keep], self.distances[keep], self.n_a, self.n_b)


def correspond(a, b) -> CorrespondenceSet:
    """Minimum total distance monotone matching of two point sequences.

    Moves advance A, B or both by one point, so every point is matched at
    least once and no two pairs cross. Ties in the backtrace prefer the
    diagonal, then advancing A.
    """
    pa, pb = _points(a), _points(b)
    if pa.shape[0] < MIN_CORRESPONDENCE_POINTS or pb.shape[0] < MIN_CORRESPONDENCE_POINTS:
        raise InsufficientDataError("both curves need at least three points")
    cost = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    acc = kernels.dtw_table(np.ascontiguousarray(cost))
    i, j = pa.shape[0] - 1, pb.shape[0] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            d, up, left = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            if d <= up and d <= left:
                i, j = i - 1, j - 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    pairs = np.array(path[::-1], dtype=np.int64)
    return CorrespondenceSet(pairs, cost[pairs[:, 0], pairs[:, 1]], pa.shape[0], pb.shape[0])


@dataclass(frozen=True)
class RoadmapDistance:
    distances: np.ndarray
    mean: float
    correspondence: CorrespondenceSet


def roadmapping_distance(guidewire, centerline, interval: float = 1.0) -> RoadmapDistance:
    """Distances (mm) between matched interior points of two curves in mm."""
    ga = resample_polyline(guidewire, interval)
    cb = resample_polyline(centerline, interval)
    corr = correspond(ga, cb).interior()
    if corr.distances.size == 0:
        raise InsufficientDataError("no correspondences remain after endpoint exclusion")
    return RoadmapDistance(corr.distances, float(corr.distances.mean()), corr)


@dataclass(frozen=True)
class TrackingStats:
    """Tip error summary in mm.

    ``*_mean`` / ``*_median`` / ``*_max`` pool every image; ``avg_seq_*``
    average the per-sequence means and medians so each sequence counts
    equally. ``inlier_*`` repeat both after dropping errors above the
    outlier threshold.
    """

    n_images: int
    n_sequences: int
    max: float
    median: float
    mean: float
    avg_seq_mean: float
    avg_seq_median: float
    n_outliers: int
    n_outlier_sequences: int
    inlier_max: float
    inlier_median: float
    inlier_mean: float
    inlier_avg_seq_mean: float
    inlier_avg_seq_median: float
    outlier_mm: float = OUTLIER_MM

    def to_dict(self) -> dict:
        return asdict(self)


def tracking_errors_mm(estimates, truth, spacing: float) -> np.ndarray:
    """Euclidean tip error per frame, px inputs converted to mm."""
    est = np.asarray(estimates, dtype=np.float64).reshape(-1, 2)
    tru = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if est.shape != tru.shape:
        raise InvalidInputError(f"{len(est)} estimates for {len(tru)} ground-truth tips")
    return np.linalg.norm(est - tru, axis=1) * spacing


def _stats(values: np.ndarray) -> tuple[float, float, float]:
    if values.size == 0:
        return float("nan"), float("nan"), float("nan")
    return float(values.max()), float(np.median(values)), float(values.mean())


def tracking_stats(errors: np.ndarray | Sequence[np.ndarray], outlier_mm: float = OUTLIER_MM) -> TrackingStats:
    """Summarise per-frame errors (mm) of one sequence or a list of sequences."""
    if isinstance(errors, np.ndarray) and errors.ndim == 1:
        seqs = [errors.astype(np.float64)]
    else:
        seqs = [np.asarray(e, dtype=np.float64).reshape(-1) for e in errors]
    if not seqs or any(e.size == 0 for e in seqs):
        raise InvalidInputError("every sequence needs at least one error value")
    pooled = np.concatenate(seqs)
    inliers = [e[e <= outlier_mm] for e in seqs]
    pooled_in = np.concatenate(inliers)
    kept = [e for e in inliers if e.size]
    mx, med, mean = _stats(pooled)
    imx, imed, imean = _stats(pooled_in)
    nan = float("nan")
    return TrackingStats(
        n_images=int(pooled.size),
        n_sequences=len(seqs),
        max=mx, median=med, mean=mean,
        avg_seq_mean=float(np.mean([e.mean() for e in seqs])),
        avg_seq_median=float(np.mean([np.median(e) for e in seqs])),
        n_outliers=int(pooled.size - pooled_in.size),
        n_outlier_sequences=int(sum(e.size != i.size for e, i in zip(seqs, inliers))),
        inlier_max=imx, inlier_median=imed, inlier_mean=imean,
        inlier_avg_seq_mean=float(np.mean([e.mean() for e in kept])) if kept else nan,
        inlier_avg_seq_median=float(np.mean([np.median(e) for e in kept])) if kept else nan,
        outlier_mm=float(outlier_mm),
    )
