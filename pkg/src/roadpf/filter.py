"""Sampling-importance-resampling particle filter for tip tracking.

Per frame ``k >= 1``: flow from ``z[k-1]`` to ``z[k]``, move every particle
by the flow at its position plus Gaussian noise, weight by the likelihood
map, normalise, report the weighted mean, then resample systematically.
Frame 0 reports the mean of the initial distribution.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import (Frame, MotionField, ParticleSet, ProbabilityMap, TipState,
                   bilinear_sample_many)
from .errors import InvalidInputError, InvalidParameterError, PipelineError
from .flow import FlowEstimator, FlowParams, sample_motion, sample_motion_many
from .likelihood import LikelihoodProvider, detect_argmax

FlowFn = Callable[[Frame, Frame], MotionField]

# Smallest ROI side that still leaves three pyramid levels of >= 32 px.
MIN_ROI_SIDE = 128


@dataclass(frozen=True)
class FilterParams:
    """Particle filter settings.

    ``flow_roi_margin`` restricts flow to the particles' bounding box grown
    by that many pixels (and to at least ``MIN_ROI_SIDE`` per side). Only
    the flow at particle positions is used, so the result is unchanged away
    from the window border while the cost drops several-fold. ``None``
    computes flow on the whole frame.
    """

    n_samples: int = 1000
    sigma_v: float = 5.0
    seed: int = 0
    flow_roi_margin: int | None = 32

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise InvalidParameterError("n_samples must be a positive integer")
        if not self.sigma_v >= 0:
            raise InvalidParameterError("sigma_v must be nonnegative")
        if self.flow_roi_margin is not None and self.flow_roi_margin < 0:
            raise InvalidParameterError("flow_roi_margin must be nonnegative or None")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrackResult:
    """Per-frame output of a tracker.

    Attributes
    ----------
    estimates : ndarray, shape (T, 2)
        Tip estimate per frame in px.
    degenerate : ndarray of bool, shape (T,)
        Frames where every particle had zero likelihood.
    entropy : ndarray, shape (T,)
        Shannon entropy (nats) of the normalised weights before resampling.
    snapshots : list of ParticleSet or None
        Weighted particles per frame, when requested.
    """

    estimates: np.ndarray
    degenerate: np.ndarray
    entropy: np.ndarray
    method: str = "pf"
    snapshots: list | None = None

    def __len__(self) -> int:
        return self.estimates.shape[0]

    def tips(self) -> list[TipState]:
        return [TipState(float(x), float(y)) for x, y in self.estimates]

    def errors_px(self, truth) -> np.ndarray:
        truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
        if truth.shape != self.estimates.shape:
            raise InvalidInputError(f"{len(truth)} truth tips for {len(self)} estimates")
        return np.linalg.norm(self.estimates - truth, axis=1)


def _as_frame(f, k: int) -> Frame:
    return f if isinstance(f, Frame) else Frame(np.asarray(f), 1.0, k)


def init_particles(p0: ProbabilityMap, params: FilterParams, rng=None) -> ParticleSet:
    """Draw particles from a discrete map: pixel by mass, then uniform jitter inside it."""
    rng = np.random.default_rng(params.seed) if rng is None else rng
    n = int(params.n_samples)
    h, w = p0.shape
    flat = p0.values.ravel()
    cdf = np.cumsum(flat)
    cdf /= cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), flat.size - 1)
    rows, cols = np.divmod(idx, w)
    jitter = rng.uniform(-0.5, 0.5, size=(n, 2))
    pos = np.column_stack([cols, rows]).astype(np.float64) + jitter
    return ParticleSet(pos, np.full(n, 1.0 / n))


def propagate(particles: ParticleSet, field: MotionField, sigma_v: float, rng) -> ParticleSet:
    """Move each particle by the flow at its position plus isotropic noise."""
    disp = sample_motion_many(field, particles.positions)
    pos = particles.positions + disp
    if sigma_v > 0:
        pos = pos + rng.normal(0.0, sigma_v, size=pos.shape)
    return ParticleSet(pos, particles.weights.copy(), particles.degenerate)


def update_weights(particles: ParticleSet, likelihood: ProbabilityMap) -> ParticleSet:
    """Weights from the likelihood at each particle, normalised.

    If every particle has zero likelihood the weights fall back to uniform
    and ``degenerate`` is set.
    """
    raw = bilinear_sample_many(likelihood, particles.positions)
    total = raw.sum()
    n = len(particles)
    if not total > 0:
        return ParticleSet(particles.positions.copy(), np.full(n, 1.0 / n), True)
    return ParticleSet(particles.positions.copy(), raw / total, False)


def estimate(particles: ParticleSet) -> TipState:
    """Weighted mean position."""
    x, y = particles.weights @ particles.positions
    return TipState(float(x), float(y))


def systematic_resample(particles: ParticleSet, rng) -> ParticleSet:
    """Low-variance resampling: one uniform offset, an evenly spaced comb."""
    n = len(particles)
    cs = np.cumsum(particles.weights)
    cs /= cs[-1]
    comb = (rng.random() + np.arange(n)) / n
    idx = np.minimum(np.searchsorted(cs, comb, side="right"), n - 1)
    return ParticleSet(particles.positions[idx], np.full(n, 1.0 / n), particles.degenerate)


def weight_entropy(weights: np.ndarray) -> float:
    w = weights[weights > 0]
    return float(-(w * np.log(w)).sum())


def roi_around(points: np.ndarray, margin: int, shape: tuple[int, int],
               min_side: int = MIN_ROI_SIDE) -> tuple[int, int, int, int]:
    """Bounding box of ``points`` grown by ``margin``, at least ``min_side`` wide, clipped."""
    h, w = shape
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    lo = np.floor(pts.min(axis=0)) - margin
    hi = np.ceil(pts.max(axis=0)) + margin + 1
    bounds = []
    for axis, size in ((0, w), (1, h)):
        a, b = lo[axis], hi[axis]
        side = min(max(b - a, min_side), size)
        centre = 0.5 * (a + b)
        a = int(np.clip(np.floor(centre - side / 2), 0, size - side))
        bounds.append((a, int(a + side)))
    (x0, x1), (y0, y1) = bounds
    return x0, y0, x1, y1


class Tracker:
    """Online particle filter; call :meth:`step` once per incoming frame.

    Parameters
    ----------
    provider : LikelihoodProvider
        Maps ``(frame, k)`` to a likelihood map of the frame's size.
    p0 : ProbabilityMap
        Distribution of the tip on the first frame.
    flow_params, params
        Flow and filter settings; defaults are the tuned values.
    flow_fn : callable, optional
        Replaces the flow estimator, ``flow_fn(prev, nxt) -> MotionField``.
    keep_particles : bool
        Store a weighted particle snapshot per frame.
    """

    def __init__(self, provider: LikelihoodProvider, p0: ProbabilityMap,
                 flow_params: FlowParams | None = None, params: FilterParams | None = None,
                 flow_fn: FlowFn | None = None, keep_particles: bool = False):
        self.provider = provider
        self.p0 = p0
        self.params = params or FilterParams()
        self.flow = FlowEstimator(flow_params)
        self.flow_fn = flow_fn
        self.keep_particles = keep_particles
        self.rng = np.random.default_rng(self.params.seed)
        self.particles: ParticleSet | None = None
        self._prev: Frame | None = None
        self._k = 0
        self._est: list[tuple[float, float]] = []
        self._deg: list[bool] = []
        self._ent: list[float] = []
        self._snaps: list[ParticleSet] = []
        # per frame: (likelihood, flow + filter, total) wall time in seconds
        self.timings: list[tuple[float, float, float]] = []

    @property
    def frame_count(self) -> int:
        return self._k

    def _motion(self, prev: Frame, nxt: Frame) -> MotionField:
        if self.flow_fn is not None:
            return self.flow_fn(prev, nxt)
        margin = self.params.flow_roi_margin
        roi = None if margin is None else roi_around(self.particles.positions, margin, prev.shape)
        return self.flow.estimate(prev, nxt, roi=roi)

    def step(self, frame) -> TipState:
        t0 = time.perf_counter()
        t_lik = 0.0
        frame = _as_frame(frame, self._k)
        if self._k == 0:
            if frame.shape != self.p0.shape:
                raise PipelineError(f"initial map {self.p0.shape} does not match frame {frame.shape}")
            self.particles = init_particles(self.p0, self.params, self.rng)
            tip = self.p0.expectation()
            self._record(tip, False, weight_entropy(self.particles.weights))
        else:
            if frame.shape != self._prev.shape:
                raise PipelineError(f"frame {self._k} has shape {frame.shape}, expected {self._prev.shape}")
            field = self._motion(self._prev, frame)
            moved = propagate(self.particles, field, self.params.sigma_v, self.rng)
            t1 = time.perf_counter()
            lik = self.provider(frame, self._k)
            t_lik = time.perf_counter() - t1
            if lik.shape != frame.shape:
                raise PipelineError(f"likelihood for frame {self._k} has shape {lik.shape}, "
                                    f"expected {frame.shape}")
            weighted = update_weights(moved, lik)
            tip = estimate(weighted)
            self._record(tip, weighted.degenerate, weight_entropy(weighted.weights), weighted)
            self.particles = systematic_resample(weighted, self.rng)
        self._prev = frame
        self._k += 1
        total = time.perf_counter() - t0
        self.timings.append((t_lik, total - t_lik, total))
        return tip

    def _record(self, tip, degenerate, entropy, snapshot=None):
        self._est.append((tip.x, tip.y))
        self._deg.append(bool(degenerate))
        self._ent.append(entropy)
        if self.keep_particles:
            self._snaps.append((self.particles if snapshot is None else snapshot).copy())

    def result(self) -> TrackResult:
        return TrackResult(np.array(self._est, dtype=np.float64).reshape(-1, 2),
                           np.array(self._deg, dtype=bool), np.array(self._ent),
                           "pf", list(self._snaps) if self.keep_particles else None)


def track(frames: Sequence, provider: LikelihoodProvider, p0: ProbabilityMap,
          flow_params: FlowParams | None = None, filter_params: FilterParams | None = None,
          flow_fn: FlowFn | None = None, keep_particles: bool = False) -> TrackResult:
    """Run the particle filter over a whole sequence."""
    if len(frames) < 1:
        raise InvalidInputError("track needs at least one frame")
    tracker = Tracker(provider, p0, flow_params, filter_params, flow_fn, keep_particles)
    for f in frames:
        tracker.step(f)
    return tracker.result()


def _single_track(method: str, tips: Iterable) -> TrackResult:
    est = np.array([(float(t[0]), float(t[1])) for t in tips]).reshape(-1, 2)
    n = est.shape[0]
    return TrackResult(est, np.zeros(n, dtype=bool), np.zeros(n), method)


def _flow_at(estimator: FlowEstimator, flow_fn, prev: Frame, nxt: Frame, p, roi_margin):
    if flow_fn is not None:
        field = flow_fn(prev, nxt)
    else:
        roi = None if roi_margin is None else roi_around(np.asarray([p]), roi_margin, prev.shape)
        field = estimator.estimate(prev, nxt, roi=roi)
    return sample_motion(field, p)


def baseline_of_pre(frames: Sequence, start_tip, flow_params: FlowParams | None = None,
                    flow_fn: FlowFn | None = None, roi_margin: int | None = 32) -> TrackResult:
    """Accumulate adjacent-frame flow from the frame-0 tip."""
    frames = [_as_frame(f, k) for k, f in enumerate(frames)]
    est = FlowEstimator(flow_params)
    tip = (float(start_tip[0]), float(start_tip[1]))
    out = [tip]
    for k in range(1, len(frames)):
        du, dv = _flow_at(est, flow_fn, frames[k - 1], frames[k], tip, roi_margin)
        tip = (tip[0] + du, tip[1] + dv)
        out.append(tip)
    return _single_track("of-pre", out)


def baseline_of_first(frames: Sequence, start_tip, flow_params: FlowParams | None = None,
                      flow_fn: FlowFn | None = None, roi_margin: int | None = 32) -> TrackResult:
    """Flow from frame 0 to frame k, applied to the frame-0 tip."""
    frames = [_as_frame(f, k) for k, f in enumerate(frames)]
    est = FlowEstimator(flow_params)
    tip0 = (float(start_tip[0]), float(start_tip[1]))
    out = [tip0]
    for k in range(1, len(frames)):
        du, dv = _flow_at(est, flow_fn, frames[0], frames[k], tip0, roi_margin)
        out.append((tip0[0] + du, tip0[1] + dv))
    return _single_track("of-first", out)


def baseline_detect(frames: Sequence, provider: LikelihoodProvider) -> TrackResult:
    """Per-frame argmax of the likelihood map, no temporal coupling."""
    out = []
    for k, f in enumerate(frames):
        frame = _as_frame(f, k)
        lik = provider(frame, k)
        if lik.shape != frame.shape:
            raise PipelineError(f"likelihood for frame {k} has shape {lik.shape}, expected {frame.shape}")
        out.append(detect_argmax(lik))
    return _single_track("detect", out)
