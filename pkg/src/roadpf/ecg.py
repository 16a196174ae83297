"""ECG handling: frame/sample mapping, live buffering and phase matching.

A live ECG block is registered against the library's reference ECG by
zero-mean normalised cross-correlation over every full-overlap alignment.
The roadmap whose ECG index is nearest the matched sample is selected.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError, InvalidParameterError, InvalidStateError

# Scores closer than this to the best one count as ties.
TIE_TOL = 1e-9
# Windows with less energy than this are treated as constant.
_FLAT_TOL = 1e-12


@dataclass(frozen=True)
class ECGSignal:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if s.size < 2:
            raise InvalidInputError("an ECG signal needs at least two samples")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("ECG samples must be finite")
        if not self.sample_rate > 0:
            raise InvalidParameterError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    def segment(self, start: int, stop: int) -> ECGSignal:
        return ECGSignal(self.samples[start:stop], self.sample_rate)


def _round_half_up_ratio(num: np.ndarray, den: int) -> np.ndarray:
    """``floor(num / den + 1/2)`` in exact integer arithmetic."""
    return (2 * num + den) // (2 * den)


@dataclass(frozen=True)
class FrameECGMap:
    """Nearest-neighbour index maps between frames and ECG samples."""

    frame_to_sample: np.ndarray
    sample_to_frame: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.frame_to_sample.size

    @property
    def n_samples(self) -> int:
        return self.sample_to_frame.size


def build_frame_map(n_frames: int, ecg) -> FrameECGMap:
    """Spread frames evenly between the first and last ECG sample.

    Frame ``i`` maps to sample ``round(i (S-1) / (n-1))``, rounding halves up.
    """
    n_samples = len(ecg) if not isinstance(ecg, (int, np.integer)) else int(ecg)
    if n_frames < 2:
        raise InvalidInputError("a frame map needs at least two frames")
    if n_samples < 2:
        raise InvalidInputError("a frame map needs at least two ECG samples")
    i = np.arange(n_frames, dtype=np.int64)
    s = np.arange(n_samples, dtype=np.int64)
    f2s = _round_half_up_ratio(i * (n_samples - 1), n_frames - 1)
    s2f = _round_half_up_ratio(s * (n_frames - 1), n_samples - 1)
    return FrameECGMap(f2s, s2f)


def n_ecg_samples(sample_rate: float, n_frames: int = 12, fps: float = 15.0) -> int:
    """Number of ECG samples spanning ``n_frames`` frames of acquisition."""
    if not sample_rate > 0 or not fps > 0 or n_frames < 1:
        raise InvalidParameterError("sample_rate, fps and n_frames must be positive")
    return max(2, int(round(n_frames / fps * sample_rate)))


class ECGBuffer:
    """Ring buffer holding the latest ``capacity`` ECG samples."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidParameterError("buffer capacity must be positive")
        self.capacity = int(capacity)
        self._data: deque[float] = deque(maxlen=self.capacity)

    def push(self, values) -> None:
        self._data.extend(np.atleast_1d(np.asarray(values, dtype=np.float64)).tolist())

    def __len__(self) -> int:
        return len(self._data)

    @property
    def full(self) -> bool:
        return len(self._data) == self.capacity

    def snapshot(self) -> np.ndarray:
        return np.fromiter(self._data, dtype=np.float64, count=len(self._data))

    def clear(self) -> None:
        self._data.clear()


class ECGMatch(NamedTuple):
    """Reference sample aligned with the query's last sample, and the NCC there."""

    index: int
    score: float
    low_confidence: bool


def ncc_scores(reference, query) -> np.ndarray:
    """Zero-mean normalised correlation of ``query`` with every full-overlap window.

    Entry ``j`` compares ``reference[j : j + len(query)]``. Windows with zero
    variance score 0.
    """
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.size > ref.size:
        raise InvalidInputError(f"query ({q.size}) longer than reference ({ref.size})")
    if q.size < 1:
        raise InvalidInputError("query is empty")
    win = sliding_window_view(ref, q.size)
    wc = win - win.mean(axis=1, keepdims=True)
    qc = q - q.mean()
    num = wc @ qc
    den = np.sqrt(np.einsum("ij,ij->i", wc, wc) * float(qc @ qc))
    out = np.zeros(num.shape)
    ok = den > _FLAT_TOL
    out[ok] = num[ok] / den[ok]
    return out


def xcorr_register(reference, query, min_score: float | None = None) -> ECGMatch:
    """Find where ``query`` best fits inside ``reference``.

    Ties (within ``TIE_TOL``) go to the earliest alignment. A constant
    query returns ``(0, 0.0, low_confidence=True)``; ``min_score`` also
    flags weak matches as low confidence.
    """
    ref = reference.samples if isinstance(reference, ECGSignal) else reference
    q = query.snapshot() if isinstance(query, ECGBuffer) else query
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    if q.size > ref.size:
        raise InvalidInputError(f"query ({q.size}) longer than reference ({ref.size})")
    qc = q - q.mean() if q.size else q
    if q.size < 2 or float(qc @ qc) <= _FLAT_TOL:
        return ECGMatch(0, 0.0, True)
    scores = ncc_scores(ref, q)
    best = scores.max()
    j = int(np.flatnonzero(scores >= best - TIE_TOL)[0])
    low = bool(min_score is not None and best < min_score)
    return ECGMatch(j + q.size - 1, float(scores[j]), low)


def select_roadmap(pool, match_index: int) -> int:
    """Position in ``pool`` of the roadmap whose ECG index is nearest ``match_index``.

    ``pool`` holds ECG indices or objects with an ``ecg_index`` attribute.
    Equal distances resolve to the earlier roadmap.
    """
    indices = [getattr(p, "ecg_index", p) for p in pool]
    if not indices:
        raise InvalidStateError("roadmap pool is empty")
    dist = np.abs(np.asarray(indices, dtype=np.int64) - int(match_index))
    return int(np.argmin(dist))


def beat_template(phase: np.ndarray) -> np.ndarray:
    """P-QRS-T shaped beat as a sum of Gaussians over phase in [0, 1)."""
    waves = ((0.12, 0.025, 0.15), (0.22, 0.008, -0.12), (0.25, 0.01, 1.0),
             (0.28, 0.008, -0.25), (0.50, 0.045, 0.3))
    phase = np.mod(phase, 1.0)
    out = np.zeros_like(phase, dtype=np.float64)
    for centre, width, amp in waves:
        # wrap so a wave near the phase boundary stays continuous
        d = np.mod(phase - centre + 0.5, 1.0) - 0.5
        out += amp * np.exp(-0.5 * (d / width) ** 2)
    return out


def synthetic_ecg(n_samples: int, sample_rate: float, period_s: float,
                  noise: float = 0.0, rng=None, phase0: float = 0.0) -> ECGSignal:
    """Periodic ECG; sample ``s`` has cardiac phase ``phase0 + s / (rate * period)``."""
    if not period_s > 0:
        raise InvalidParameterError("period must be positive")
    t = np.arange(n_samples) / sample_rate
    sig = beat_template(phase0 + t / period_s)
    if noise > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        sig = sig + rng.normal(0.0, noise, size=sig.shape)
    return ECGSignal(sig, sample_rate)

