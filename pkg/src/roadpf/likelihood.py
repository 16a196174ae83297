"""Likelihood maps: normalisation and training losses, plus map providers.

A provider is any callable ``provider(frame, k) -> ProbabilityMap`` returning
a map with the frame's dimensions. Two are shipped: :class:`SyntheticDetector`
emulates a trained detector (true mode, false modes, dropouts) from known
tip positions, and :class:`FileLikelihood` reads maps written by an external
model.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import io
from .core import Frame, ProbabilityMap, SegmentationMap, TipState, gaussian_map
from .errors import FormatError, InvalidInputError, InvalidParameterError

LOAD_SUM_TOL = 1e-3


class LikelihoodProvider(Protocol):
    def __call__(self, frame: Frame, k: int) -> ProbabilityMap: ...


def spatial_softmax(scores) -> ProbabilityMap:
    """Softmax over all pixels of a score grid."""
    a = np.asarray(scores, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise InvalidInputError("scores must be a non-empty 2D grid")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("scores must be finite")
    e = np.exp(a - a.max())
    return ProbabilityMap(e / e.sum())


def _grid(m) -> np.ndarray:
    if isinstance(m, (ProbabilityMap, SegmentationMap)):
        return m.values
    return np.asarray(m, dtype=np.float64)


def dice_loss(mask, seg) -> float:
    """``1 - 2 sum(M S) / (sum(M^2) + sum(S^2))``; 1 when both maps are empty."""
    m, s = _grid(mask), _grid(seg)
    if m.shape != s.shape:
        raise InvalidInputError(f"map shapes differ: {m.shape} vs {s.shape}")
    denom = float(np.sum(m * m) + np.sum(s * s))
    if denom == 0.0:
        return 1.0
    return 1.0 - 2.0 * float(np.sum(m * s)) / denom


def mse_loss(target, pred) -> float:
    """Mean squared difference between two maps."""
    t, d = _grid(target), _grid(pred)
    if t.shape != d.shape:
        raise InvalidInputError(f"map shapes differ: {t.shape} vs {d.shape}")
    return float(np.mean((t - d) ** 2))


def total_loss(seg_loss: float, det_loss: float, lam: float = 10.0) -> float:
    """Segmentation loss plus ``lam`` times the detection loss."""
    return seg_loss + lam * det_loss


def detect_argmax(pmap: ProbabilityMap) -> TipState:
    """Pixel with the largest value; first in row-major order on ties."""
    v = _grid(pmap)
    row, col = np.unravel_index(int(np.argmax(v)), v.shape)
    return TipState(float(col), float(row))


@dataclass(frozen=True)
class SyntheticDetectorConfig:
    """Failure model of the emulated detector.

    Attributes
    ----------
    sigma_true : float
        Width in px of every mode.
    p_distractor : float
        Per-frame probability that false modes appear.
    distractor_count : tuple of int
        Inclusive range of the number of false modes on such frames.
    distractor_weight : float
        Mass of each false mode relative to the true one.
    p_dropout : float
        Per-frame probability that the true mode is missing. A dropout frame
        always carries at least one false mode.
    dropout_floor : float
        On dropout frames, fraction of the mass spread uniformly over the
        image: a failed detector answers with a diffuse map, not with exact
        zeros around the missed tip.
    distractor_min_dist : float
        False modes are placed at least this far (px) from the true tip.
    """

    sigma_true: float = 4.0
    p_distractor: float = 0.3
    distractor_count: tuple[int, int] = (1, 3)
    distractor_weight: float = 0.6
    p_dropout: float = 0.1
    dropout_floor: float = 0.05
    distractor_min_dist: float = 40.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_true > 0:
            raise InvalidParameterError("sigma_true must be positive")
        for name in ("p_distractor", "p_dropout", "dropout_floor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidParameterError(f"{name} must lie in [0, 1]")
        lo, hi = (int(v) for v in self.distractor_count)
        if lo < 0 or hi < lo:
            raise InvalidParameterError("distractor_count must be a range lo <= hi with lo >= 0")
        object.__setattr__(self, "distractor_count", (lo, hi))
        if self.distractor_weight < 0:
            raise InvalidParameterError("distractor_weight must be nonnegative")
        if self.distractor_min_dist < 0:
            raise InvalidParameterError("distractor_min_dist must be nonnegative")

    @classmethod
    def noiseless(cls, sigma_true: float = 4.0, seed: int = 0) -> SyntheticDetectorConfig:
        return cls(sigma_true=sigma_true, p_distractor=0.0, p_dropout=0.0, seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distractor_count"] = list(self.distractor_count)
        return d


@dataclass(frozen=True)
class DetectionDraw:
    """What the emulated detector did on one frame."""

    dropout: bool
    distractors: tuple[tuple[float, float], ...] = field(default_factory=tuple)


def _draw(frame_index: int, tip, width: int, height: int, cfg: SyntheticDetectorConfig) -> DetectionDraw:
    rng = np.random.default_rng([cfg.seed, frame_index])
    dropout = bool(rng.random() < cfg.p_dropout)
    n = 0
    if rng.random() < cfg.p_distractor:
        lo, hi = cfg.distractor_count
        n = int(rng.integers(lo, hi + 1))
    if dropout:
        n = max(n, 1)
    centers = []
    margin = min(2.0 * cfg.sigma_true, (min(width, height) - 1) / 2.0)
    for _ in range(n):
        # rejection sampling keeps false modes clear of the tip; bounded tries
        for _attempt in range(64):
            c = (rng.uniform(margin, width - 1 - margin), rng.uniform(margin, height - 1 - margin))
            if np.hypot(c[0] - tip[0], c[1] - tip[1]) >= cfg.distractor_min_dist:
                break
        centers.append((float(c[0]), float(c[1])))
    return DetectionDraw(dropout, tuple(centers))


def synthetic_detect(frame_index: int, true_tip, cfg: SyntheticDetectorConfig,
                     width: int = 256, height: int = 256) -> ProbabilityMap:
    """Emulated detector output for one frame.

    Deterministic in ``(cfg.seed, frame_index)``, so frames can be generated
    in any order.
    """
    return _render(true_tip, width, height, cfg, _draw(frame_index, true_tip, width, height, cfg))


def _render(tip, width, height, cfg, draw: DetectionDraw) -> ProbabilityMap:
    tip = TipState(float(tip[0]), float(tip[1]))
    if not tip.in_bounds(width, height):
        raise InvalidInputError(f"true tip {tuple(tip)} outside a {width}x{height} image")
    if not draw.distractors and not draw.dropout:
        return gaussian_map(tip, cfg.sigma_true, width, height)
    acc = np.zeros((height, width))
    if not draw.dropout:
        acc += gaussian_map(tip, cfg.sigma_true, width, height).values
    for c in draw.distractors:
        acc += cfg.distractor_weight * gaussian_map(c, cfg.sigma_true, width, height).values
    total = acc.sum()
    if total <= 0:
        acc = np.full((height, width), 1.0 / (width * height))
        total = 1.0
    if draw.dropout and cfg.dropout_floor > 0:
        acc = acc / total * (1.0 - cfg.dropout_floor) + cfg.dropout_floor / (width * height)
    return ProbabilityMap.normalized(acc)


class SyntheticDetector:
    """Provider that emulates a detector from ground-truth tips.

    Parameters
    ----------
    tips : array_like, shape (T, 2)
        True tip per frame, in px.
    cfg : SyntheticDetectorConfig
    """

    def __init__(self, tips, cfg: SyntheticDetectorConfig | None = None):
        self.tips = np.asarray(tips, dtype=np.float64).reshape(-1, 2)
        self.cfg = cfg or SyntheticDetectorConfig()

    def draw(self, k: int, width: int = 256, height: int = 256) -> DetectionDraw:
        return _draw(k, self.tips[k], width, height, self.cfg)

    def dropout_frames(self, n_frames: int | None = None, width: int = 256, height: int = 256) -> list[int]:
        """Frames on which the true mode is suppressed (the oracle's failure log)."""
        n = len(self.tips) if n_frames is None else n_frames
        return [k for k in range(n) if self.draw(k, width, height).dropout]

    def __call__(self, frame: Frame, k: int) -> ProbabilityMap:
        if not 0 <= k < len(self.tips):
            raise InvalidInputError(f"no ground-truth tip for frame {k}")
        h, w = frame.shape
        return _render(self.tips[k], w, h, self.cfg, self.draw(k, w, h))


def save_likelihood(path, pmap: ProbabilityMap) -> None:
    io.write_rpfm(path, _grid(pmap))


def load_likelihood(path) -> ProbabilityMap:
    """Read a single-channel RPFM probability map.

    Maps whose sum is within ``LOAD_SUM_TOL`` of one are renormalised;
    anything else (negative or non-finite entries, larger deviation, more
    than one channel) raises :class:`FormatError`.
    """
    data = io.read_rpfm(path)
    if data.shape[0] != 1:
        raise FormatError(f"likelihood file has {data.shape[0]} channels, expected 1")
    v = data[0].astype(np.float64)
    if not np.all(np.isfinite(v)):
        raise FormatError("likelihood contains non-finite entries")
    if v.min() < 0:
        raise FormatError("likelihood contains negative entries")
    total = v.sum()
    if abs(total - 1.0) > LOAD_SUM_TOL:
        raise FormatError(f"likelihood sums to {total:.6g}, beyond the {LOAD_SUM_TOL} tolerance")
    if abs(total - 1.0) > 1e-6:
        v = v / total
    return ProbabilityMap(v)


class FileLikelihood:
    """Provider reading ``NNNN.rpfm`` maps from a directory."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def __call__(self, frame: Frame, k: int) -> ProbabilityMap:
        return load_likelihood(self.directory / f"{k:04d}.rpfm")
