"""Seeded synthetic fluoroscopy sequences with full ground truth.

The tip moves as ``base + cardiac(phase) + respiratory(t)``: the cardiac part
is a closed 1:2 Lissajous loop locked to the ECG phase, the respiratory part
a slow sinusoid along one direction. Frames show a dark catheter ending at
the tip over a smooth background that follows the respiratory motion, plus
static distractor tubes and, during contrast episodes, the vessel tree.

Vessel centerlines are attached to the tip and breathe with a small
phase-locked scale change, so a roadmap from the same cardiac phase differs
from the live vessels by a pure translation.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io, kernels
from .core import Frame, Polyline, TipState
from .ecg import ECGSignal, build_frame_map, n_ecg_samples, synthetic_ecg
from .errors import InvalidParameterError, InvalidStateError
from .roadmap import Roadmap, RoadmapLibrary

# Vessel scale change over the cardiac cycle (fraction of the template size).
VESSEL_PULSATION = 0.06
# Peak bend (degrees) of the distal catheter over the cardiac cycle.
CATHETER_BEND_DEG = 20.0
# Offsets (px, relative to the tip) of the catheter curve at the base pose.
_CATHETER_ENTRY = np.array([-140.0, -160.0])
_CATHETER_BEND = np.array([-10.0, -120.0])


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of a synthetic sequence.

    Motion amplitudes are peak displacements in mm; periods in seconds.
    ``respiratory_angle_deg`` is the breathing direction measured from the
    image x axis (90 = along rows, downwards).
    """

    width: int = 256
    height: int = 256
    n_frames: int = 100
    fps: float = 15.0
    pixel_spacing: float = 0.4
    cardiac_amplitude_mm: float = 3.0
    cardiac_period_s: float = 1.0
    respiratory_amplitude_mm: float = 5.0
    respiratory_period_s: float = 4.0
    respiratory_angle_deg: float = 90.0
    catheter_width_px: float = 5.0
    catheter_contrast: float = 0.35
    n_distractors: int = 2
    distractor_contrast: float = 0.25
    contrast_episodes: tuple = ((40, 48),)
    vessel_contrast: float = 0.3
    noise_sigma: float = 0.01
    ecg_rate: float = 150.0
    ecg_noise: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise InvalidParameterError("scenes must be at least 64x64 px")
        if self.n_frames < 2:
            raise InvalidParameterError("a sequence needs at least two frames")
        for name in ("fps", "pixel_spacing", "cardiac_period_s", "respiratory_period_s",
                     "catheter_width_px", "ecg_rate"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")
        for name in ("cardiac_amplitude_mm", "respiratory_amplitude_mm", "catheter_contrast",
                     "distractor_contrast", "vessel_contrast", "noise_sigma", "ecg_noise"):
            if not getattr(self, name) >= 0:
                raise InvalidParameterError(f"{name} must be nonnegative")
        if self.n_distractors < 0:
            raise InvalidParameterError("n_distractors must be nonnegative")
        episodes = tuple((int(a), int(b)) for a, b in self.contrast_episodes)
        if any(b < a for a, b in episodes):
            raise InvalidParameterError("contrast episodes must be (start, stop) with start <= stop")
        object.__setattr__(self, "contrast_episodes", episodes)
        max_mm = self.cardiac_amplitude_mm + self.respiratory_amplitude_mm
        if max_mm / self.pixel_spacing > min(self.width, self.height) / 4:
            raise InvalidParameterError("motion amplitude too large for the image size")

    @property
    def frames_per_cycle(self) -> int:
        return int(round(self.cardiac_period_s * self.fps))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["contrast_episodes"] = [list(e) for e in self.contrast_episodes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SceneConfig:
        d = dict(d)
        if "contrast_episodes" in d:
            d["contrast_episodes"] = tuple(tuple(e) for e in d["contrast_episodes"])
        return cls(**d)


@dataclass
class SyntheticCase:
    """Generated sequence with ground truth. Positions in px unless noted."""

    config: SceneConfig
    frames: list
    tips: np.ndarray
    cardiac: np.ndarray
    respiratory: np.ndarray
    phase: np.ndarray
    ecg: ECGSignal
    vessels: list
    guidewires: list
    catheters: list
    base_tip: np.ndarray
    distractors: list = field(default_factory=list)

    @property
    def pixel_spacing(self) -> float:
        return self.config.pixel_spacing

    @property
    def shape(self) -> tuple[int, int]:
        return self.config.height, self.config.width


def _smoothstep(s):
    return s * s * (3.0 - 2.0 * s)


def _bezier(p0, p1, p2, n):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2


def cardiac_offset(phase, amplitude_px: float) -> np.ndarray:
    """Closed 1:2 Lissajous loop; ``phase`` in cycles."""
    ang = 2.0 * np.pi * np.asarray(phase, dtype=np.float64)
    return amplitude_px * np.stack([np.sin(ang), 0.5 * np.sin(2.0 * ang + 0.6)], axis=-1)


def _vessel_templates(rng) -> list[np.ndarray]:
    """Main vessel and two side branches as tip-relative offsets (px)."""
    s = np.linspace(0.0, 110.0, 56)
    bend = rng.uniform(-0.15, 0.15)
    main = np.column_stack([s, 0.12 * s + 6.0 * np.sin(s / 35.0) + bend * s * s / 110.0])
    out = [main]
    for frac, sign in ((0.35, 1.0), (0.65, -1.0)):
        i = int(frac * (len(s) - 1))
        t = np.linspace(0.0, 40.0, 21)
        ang = np.deg2rad(sign * rng.uniform(35.0, 55.0))
        d = np.array([np.cos(ang), np.sin(ang)])
        branch = main[i] + t[:, None] * d[None, :] + np.outer(np.sin(t / 20.0) * 3.0, [-d[1], d[0]])
        out.append(branch)
    return out


def _bend_about_tip(curve: np.ndarray, tip: np.ndarray, angle: float) -> np.ndarray:
    """Rotate the distal half of ``curve`` about its end, ramping the angle in smoothly."""
    n = len(curve)
    ramp = _smoothstep(np.clip((np.arange(n) / (n - 1) - 0.5) / 0.5, 0.0, 1.0)) * angle
    c, s = np.cos(ramp)[:, None], np.sin(ramp)[:, None]
    rel = curve - tip
    return tip + np.column_stack([c[:, 0] * rel[:, 0] - s[:, 0] * rel[:, 1],
                                  s[:, 0] * rel[:, 0] + c[:, 0] * rel[:, 1]])


def _vessel_at(template: np.ndarray, tip: np.ndarray, phase: float) -> np.ndarray:
    scale = 1.0 + VESSEL_PULSATION * np.sin(2.0 * np.pi * phase)
    return tip + scale * template


def _background(width, height, rng, n_waves: int = 12):
    kx = rng.uniform(-1.0, 1.0, n_waves) * 2 * np.pi / rng.uniform(25.0, 120.0, n_waves)
    ky = rng.uniform(-1.0, 1.0, n_waves) * 2 * np.pi / rng.uniform(25.0, 120.0, n_waves)
    ph = rng.uniform(0, 2 * np.pi, n_waves)
    amp = rng.uniform(0.3, 1.0, n_waves)
    amp *= 0.08 / amp.sum() * 2.0
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)

    def render(shift):
        # cos(a + b) split into outer products keeps this O(waves * pixels)
        out = np.full((height, width), 0.55)
        for i in range(n_waves):
            ax = kx[i] * (xs - shift[0]) + ph[i]
            ay = ky[i] * (ys - shift[1])
            out += amp[i] * (np.outer(np.cos(ay), np.cos(ax)) - np.outer(np.sin(ay), np.sin(ax)))
        return out

    return render


def _tube(points, width, height, sigma):
    dist = kernels.polyline_distance(np.ascontiguousarray(points, dtype=np.float64),
                                     height, width, 4.0 * sigma)
    return np.exp(-0.5 * (dist / sigma) ** 2)


def generate_sequence(cfg: SceneConfig | None = None) -> SyntheticCase:
    """Render a sequence and all of its ground truth from ``cfg``."""
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng([cfg.seed, 0])
    w, h, sp = cfg.width, cfg.height, cfg.pixel_spacing
    base = np.array([rng.uniform(0.32, 0.40) * w, rng.uniform(0.36, 0.46) * h])
    phase0 = rng.uniform(0.0, 1.0)
    resp_phase = rng.uniform(0.0, 2 * np.pi)
    resp_dir = np.array([np.cos(np.deg2rad(cfg.respiratory_angle_deg)),
                         np.sin(np.deg2rad(cfg.respiratory_angle_deg))])

    t = np.arange(cfg.n_frames) / cfg.fps
    phase = np.mod(phase0 + t / cfg.cardiac_period_s, 1.0)
    cardiac = cardiac_offset(phase, cfg.cardiac_amplitude_mm / sp)
    resp = (cfg.respiratory_amplitude_mm / sp) * np.sin(2 * np.pi * t / cfg.respiratory_period_s
                                                         + resp_phase)[:, None] * resp_dir
    tips = base + cardiac + resp

    n_samples = int(round((cfg.n_frames - 1) * cfg.ecg_rate / cfg.fps)) + 1
    ecg = synthetic_ecg(n_samples, cfg.ecg_rate, cfg.cardiac_period_s, cfg.ecg_noise,
                        np.random.default_rng([cfg.seed, 1]), phase0)

    templates = _vessel_templates(rng)
    bg = _background(w, h, rng)
    distractors = []
    for _ in range(cfg.n_distractors):
        p0 = np.array([rng.uniform(0.55, 0.95) * w, rng.uniform(0.05, 0.95) * h])
        p2 = p0 + rng.uniform(-1, 1, 2) * 60.0
        p1 = 0.5 * (p0 + p2) + rng.uniform(-1, 1, 2) * 20.0
        distractors.append(_bezier(p0, p1, p2, 24))
    cath_base = _bezier(base + _CATHETER_ENTRY, base + _CATHETER_BEND, base, 60)
    blend = _smoothstep(np.clip(np.linspace(0.0, 1.0, 60) / 0.7, 0.0, 1.0))[:, None]

    frames, vessels, guidewires, catheters = [], [], [], []
    sigma = cfg.catheter_width_px / 2.0
    for k in range(cfg.n_frames):
        img = bg(resp[k])
        cath = cath_base + blend * (tips[k] - base)
        cath[-1] = tips[k]
        bend = np.deg2rad(CATHETER_BEND_DEG) * np.sin(2 * np.pi * phase[k] + 1.0)
        cath = _bend_about_tip(cath, tips[k], bend)
        catheters.append(cath)
        img -= cfg.catheter_contrast * _tube(cath, w, h, sigma)
        for d in distractors:
            img -= cfg.distractor_contrast * _tube(d + resp[k], w, h, 1.2)
        vk = [_vessel_at(tp, tips[k], phase[k]) for tp in templates]
        vessels.append([Polyline(v * sp) for v in vk])
        main = vk[0]
        lo, hi = int(0.15 * len(main)), int(0.85 * len(main))
        guidewires.append(Polyline(main[lo:hi + 1] * sp))
        if any(a <= k < b for a, b in cfg.contrast_episodes):
            for v in vk:
                img -= cfg.vessel_contrast * _tube(v, w, h, 1.5)
        if cfg.noise_sigma > 0:
            img += np.random.default_rng([cfg.seed, 2, k]).normal(0.0, cfg.noise_sigma, img.shape)
        frames.append(Frame(np.clip(img, 0.0, 1.0), sp, k))

    return SyntheticCase(cfg, frames, tips, cardiac, resp, phase, ecg, vessels,
                         guidewires, catheters, base, distractors)


def vessel_mask(vessels_mm, spacing: float, shape) -> np.ndarray:
    h, w = shape
    mask = np.zeros((h, w))
    for v in vessels_mm:
        mask = np.maximum(mask, _tube(v.points / spacing, w, h, 1.5))
    return (mask > 0.5).astype(np.float64)


def library_window(case: SyntheticCase, cycle_index: int = 1, history_frames: int = 12) -> tuple[int, int, int]:
    """``(first_ecg_frame, first_roadmap_frame, stop_frame)`` of a library cycle."""
    n = case.config.frames_per_cycle
    start = cycle_index * n
    first = start - history_frames
    if cycle_index < 0 or first < 0 or start + n > case.config.n_frames:
        raise InvalidStateError(f"cycle {cycle_index} with {history_frames} frames of ECG history "
                                f"does not fit in {case.config.n_frames} frames")
    return first, start, start + n


def make_library(case: SyntheticCase, cycle_index: int = 1, history_frames: int = 12,
                 with_raster: bool = True) -> RoadmapLibrary:
    """One roadmap per frame of cardiac cycle ``cycle_index``.

    The reference ECG starts ``history_frames`` before the cycle, so a live
    ECG block of that length can align with every roadmap of the cycle.
    """
    first, start, stop = library_window(case, cycle_index, history_frames)
    fmap = build_frame_map(case.config.n_frames, case.ecg)
    s0 = int(fmap.frame_to_sample[first])
    s1 = int(fmap.frame_to_sample[stop - 1]) + 1
    ref = case.ecg.segment(s0, s1)
    roadmaps = []
    for k in range(start, stop):
        raster = vessel_mask(case.vessels[k], case.pixel_spacing, case.shape) if with_raster else None
        roadmaps.append(Roadmap(tuple(case.vessels[k]), TipState(*case.tips[k]),
                                int(fmap.frame_to_sample[k]) - s0, case.pixel_spacing,
                                case.shape, raster, float(case.phase[k])))
    return RoadmapLibrary(tuple(roadmaps), ref)


def phase_matched_roadmap(case: SyntheticCase, library_start: int, k: int) -> int:
    """Library position whose cardiac phase equals that of frame ``k``."""
    return (k - library_start) % case.config.frames_per_cycle


def no_tracking_offset_mm(case: SyntheticCase, cycle_index: int = 1, history_frames: int = 12) -> np.ndarray:
    """Per-frame respiratory displacement (mm) between each frame and its phase-matched roadmap.

    This is the error an untracked overlay makes when roadmap selection is
    exact.
    """
    _, start, _ = library_window(case, cycle_index, history_frames)
    idx = np.array([start + phase_matched_roadmap(case, start, k) for k in range(case.config.n_frames)])
    return np.linalg.norm(case.respiratory - case.respiratory[idx], axis=1) * case.pixel_spacing


def ecg_history_samples(cfg: SceneConfig, history_frames: int = 12) -> int:
    return n_ecg_samples(cfg.ecg_rate, history_frames, cfg.fps)


def write_dataset(case: SyntheticCase, out_dir, library: RoadmapLibrary | None = None) -> Path:
    """Write frames, tips, ECG, guidewires and the roadmap library under ``out_dir``.

    Layout: ``frames/NNNN.pgm``, ``tips.csv``, ``ecg.csv``,
    ``guidewire/NNNN.csv``, ``library/`` and ``scene.json``.
    """
    out = Path(out_dir)
    if not out.parent.exists():
        raise FileNotFoundError(f"parent directory {out.parent} does not exist")
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "guidewire").mkdir(exist_ok=True)
    for k, f in enumerate(case.frames):
        io.write_pgm(out / "frames" / f"{k:04d}.pgm", f.pixels, bits=16)
        io.write_polyline(out / "guidewire" / f"{k:04d}.csv", case.guidewires[k].points)
    io.write_tips(out / "tips.csv", case.tips)
    io.write_ecg(out / "ecg.csv", case.ecg.samples, case.ecg.sample_rate)
    if library is not None:
        write_library(library, out / "library")
    meta = {"config": case.config.to_dict(), "pixel_spacing": case.pixel_spacing,
            "n_frames": case.config.n_frames, "fps": case.config.fps,
            "respiratory_px": case.respiratory.tolist(), "phase": case.phase.tolist()}
    (out / "scene.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return out


LIBRARY_HEADER = ["roadmap_id", "ecg_index", "ref_x_px", "ref_y_px", "phase", "n_vessels"]


def write_library(library: RoadmapLibrary, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, rm in enumerate(library.roadmaps):
        for j, line in enumerate(rm.polylines):
            io.write_polyline(d / f"{i:04d}_{j}.csv", line.points)
        if rm.raster is not None:
            io.write_pgm(d / f"{i:04d}.pgm", rm.raster, bits=8)
        rows.append((i, rm.ecg_index, repr(rm.ref_tip.x), repr(rm.ref_tip.y),
                     "" if rm.phase_tag is None else repr(float(rm.phase_tag)), len(rm.polylines)))
    io.write_csv(d / "index.csv", LIBRARY_HEADER, rows)
    io.write_ecg(d / "ecg.csv", library.reference_ecg.samples, library.reference_ecg.sample_rate)
    spacing = library.roadmaps[0].pixel_spacing
    h, w = library.roadmaps[0].shape
    (d / "library.json").write_text(json.dumps({"pixel_spacing": spacing, "width": w, "height": h}))


def read_library(directory) -> RoadmapLibrary:
    d = Path(directory)
    meta = json.loads((d / "library.json").read_text())
    shape = (int(meta["height"]), int(meta["width"]))
    samples, rate = io.read_ecg(d / "ecg.csv")
    roadmaps = []
    for r in io.read_csv(d / "index.csv", LIBRARY_HEADER):
        i = int(r[0])
        lines = tuple(Polyline(io.read_polyline(d / f"{i:04d}_{j}.csv")) for j in range(int(r[5])))
        raster_path = d / f"{i:04d}.pgm"
        raster = io.read_pgm(raster_path) if raster_path.exists() else None
        roadmaps.append(Roadmap(lines, TipState(float(r[2]), float(r[3])), int(r[1]),
                                float(meta["pixel_spacing"]), shape, raster,
                                float(r[4]) if r[4] else None))
    return RoadmapLibrary(tuple(roadmaps), ECGSignal(samples, rate))
