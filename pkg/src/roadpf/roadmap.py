"""Online dynamic roadmapping.

For every live frame: extend the ECG buffer, match it against the library's
reference ECG, pick the roadmap of the matching cardiac phase, obtain the
tip position, and translate the roadmap by the tip displacement between
the roadmap frame and the live frame.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import io
from .core import Frame, Polyline, ProbabilityMap, TipState
from .ecg import ECGBuffer, ECGSignal, build_frame_map, n_ecg_samples, select_roadmap, xcorr_register
from .errors import InvalidInputError, InvalidStateError
from .filter import FilterParams, Tracker
from .flow import FlowParams
from .likelihood import LikelihoodProvider

log = logging.getLogger(__name__)

TIP_SOURCES = ("pf", "manual", "none")
OVERLAY_COLOR = (255, 0, 0)


@dataclass(frozen=True)
class Roadmap:
    """A stored vessel overlay from one cardiac phase.

    Polylines are in mm; ``ref_tip`` is in px of the same image.
    """

    polylines: tuple[Polyline, ...]
    ref_tip: TipState
    ecg_index: int
    pixel_spacing: float
    shape: tuple[int, int]
    raster: np.ndarray | None = None
    phase_tag: float | None = None

    def __post_init__(self):
        h, w = self.shape
        tip = TipState(float(self.ref_tip[0]), float(self.ref_tip[1]))
        if not tip.in_bounds(w, h):
            raise InvalidInputError(f"reference tip {tuple(tip)} outside the {w}x{h} roadmap")
        if not self.pixel_spacing > 0:
            raise InvalidInputError("pixel_spacing must be positive")
        if self.raster is not None and np.asarray(self.raster).shape != tuple(self.shape):
            raise InvalidInputError("raster overlay shape does not match the roadmap")
        object.__setattr__(self, "ref_tip", tip)
        object.__setattr__(self, "polylines", tuple(
            p if isinstance(p, Polyline) else Polyline(p) for p in self.polylines))


@dataclass(frozen=True)
class RoadmapLibrary:
    roadmaps: tuple[Roadmap, ...]
    reference_ecg: ECGSignal

    def __post_init__(self):
        if not self.roadmaps:
            raise InvalidStateError("a roadmap library cannot be empty")
        idx = np.array([r.ecg_index for r in self.roadmaps])
        if np.any(np.diff(idx) <= 0):
            raise InvalidStateError("roadmap ECG indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= len(self.reference_ecg):
            raise InvalidStateError("roadmap ECG indices fall outside the reference ECG")
        object.__setattr__(self, "roadmaps", tuple(self.roadmaps))

    def __len__(self) -> int:
        return len(self.roadmaps)

    def __getitem__(self, i: int) -> Roadmap:
        return self.roadmaps[i]

    @property
    def ecg_indices(self) -> list[int]:
        return [r.ecg_index for r in self.roadmaps]


@dataclass(frozen=True)
class Overlay:
    """A roadmap placed in live-frame coordinates."""

    polylines: tuple[Polyline, ...] = ()
    raster: np.ndarray | None = None
    pixel_spacing: float = 1.0


def transform_roadmap(rm: Roadmap, live_tip) -> Overlay:
    """Translate ``rm`` so its reference tip lands on ``live_tip``."""
    d = np.array([float(live_tip[0]) - rm.ref_tip.x, float(live_tip[1]) - rm.ref_tip.y])
    if not np.all(np.isfinite(d)):
        raise InvalidInputError("live tip must be finite")
    lines = tuple(p.translated(d * rm.pixel_spacing) for p in rm.polylines)
    raster = None
    if rm.raster is not None:
        raster = ndimage.shift(np.asarray(rm.raster, dtype=np.float64), (d[1], d[0]),
                               order=1, mode="constant", cval=0.0)
    return Overlay(lines, raster, rm.pixel_spacing)


@dataclass(frozen=True)
class DCRFrame:
    index: int
    roadmap_id: int
    tip: TipState
    overlay: Overlay
    ecg_score: float
    low_confidence: bool


def run_dcr(frames: Sequence[Frame], live_ecg: ECGSignal, library: RoadmapLibrary,
            provider: LikelihoodProvider | None = None, p0: ProbabilityMap | None = None,
            flow_params: FlowParams | None = None, filter_params: FilterParams | None = None,
            tip_source: str = "pf", manual_tips=None, n_ecg: int | None = None,
            fps: float = 15.0, ecg_frames: int = 12, min_score: float | None = None) -> list[DCRFrame]:
    """Roadmap every live frame, strictly in order.

    ``tip_source`` picks the tip: ``"pf"`` tracks with the particle filter,
    ``"manual"`` uses ``manual_tips`` and ``"none"`` leaves each roadmap at
    its reference position. When the ECG match is flagged low-confidence
    the previous roadmap is kept.
    """
    if tip_source not in TIP_SOURCES:
        raise InvalidInputError(f"tip_source must be one of {TIP_SOURCES}")
    if len(frames) < 2:
        raise InvalidInputError("roadmapping needs at least two frames")
    if tip_source == "pf" and (provider is None or p0 is None):
        raise InvalidInputError("particle filter tracking needs a provider and an initial map")
    if tip_source == "manual":
        manual_tips = np.asarray(manual_tips, dtype=np.float64).reshape(-1, 2)
        if manual_tips.shape[0] != len(frames):
            raise InvalidInputError("one manual tip per frame is required")
    if n_ecg is None:
        n_ecg = n_ecg_samples(live_ecg.sample_rate, ecg_frames, fps)
    n_ecg = min(n_ecg, len(library.reference_ecg))
    fmap = build_frame_map(len(frames), live_ecg)
    buf = ECGBuffer(n_ecg)
    tracker = Tracker(provider, p0, flow_params, filter_params) if tip_source == "pf" else None
    pushed = 0
    current = None
    out = []
    for k, frame in enumerate(frames):
        upto = int(fmap.frame_to_sample[k]) + 1
        buf.push(live_ecg.samples[pushed:upto])
        pushed = upto
        match = xcorr_register(library.reference_ecg, buf, min_score)
        if match.low_confidence and current is not None:
            log.warning("frame %d: low-confidence ECG match, keeping roadmap %d", k, current)
        else:
            if match.low_confidence:
                log.warning("frame %d: low-confidence ECG match with no previous roadmap", k)
            current = select_roadmap(library.roadmaps, match.index)
        rm = library[current]
        if tracker is not None:
            tip = tracker.step(frame)
        elif tip_source == "manual":
            tip = TipState(float(manual_tips[k, 0]), float(manual_tips[k, 1]))
        else:
            tip = rm.ref_tip
        out.append(DCRFrame(k, current, tip, transform_roadmap(rm, tip), match.score, match.low_confidence))
    return out


def rasterize_polyline(points_px: np.ndarray, shape: tuple[int, int], step: float = 0.25) -> np.ndarray:
    """Boolean mask of the pixels nearest to points densely sampled along the curve."""
    h, w = shape
    pts = np.asarray(points_px, dtype=np.float64).reshape(-1, 2)
    mask = np.zeros((h, w), dtype=bool)
    seg = np.diff(pts, axis=0)
    for a, d in zip(pts[:-1], seg):
        n = max(int(np.ceil(np.hypot(*d) / step)), 1)
        t = np.arange(n + 1)[:, None] / n
        q = np.rint(a + t * d).astype(np.int64)
        ok = (q[:, 0] >= 0) & (q[:, 0] < w) & (q[:, 1] >= 0) & (q[:, 1] < h)
        mask[q[ok, 1], q[ok, 0]] = True
    return mask


def overlay_mask(overlay: Overlay, shape: tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for p in overlay.polylines:
        mask |= rasterize_polyline(p.points / overlay.pixel_spacing, shape)
    if overlay.raster is not None:
        if overlay.raster.shape != tuple(shape):
            raise InvalidInputError("raster overlay does not match the frame")
        mask |= overlay.raster > 0.5
    return mask


def render_overlay(frame: Frame, overlay: Overlay, color=OVERLAY_COLOR, path=None) -> np.ndarray:
    """Composite the overlay in a solid colour over the grayscale frame.

    Returns the ``(H, W, 3)`` uint8 image and writes it as PPM when ``path``
    is given.
    """
    if overlay.raster is not None and overlay.raster.shape != frame.shape:
        raise InvalidInputError(f"overlay {overlay.raster.shape} does not match frame {frame.shape}")
    gray = np.rint(np.clip(frame.pixels, 0.0, 1.0) * 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    rgb[overlay_mask(overlay, frame.shape)] = np.asarray(color, dtype=np.uint8)
    if path is not None:
        io.write_ppm(Path(path), rgb)
    return rgb


def write_dcr_log(path, results: Sequence[DCRFrame]) -> None:
    rows = [(r.index, r.roadmap_id, repr(float(r.tip.x)), repr(float(r.tip.y)), repr(float(r.ecg_score)))
            for r in results]
    io.write_csv(path, ["frame", "roadmap_id", "tip_x", "tip_y", "ecg_score"], rows)
