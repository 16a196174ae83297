"""Reading a sequence directory written by :func:`roadpf.simgen.write_dataset`."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .core import Frame, Polyline, resample_frame
from .ecg import ECGSignal
from .errors import FormatError
from .roadmap import RoadmapLibrary
from .simgen import read_library


@dataclass
class Dataset:
    frames: list
    tips: np.ndarray | None
    ecg: ECGSignal | None
    guidewires: list | None
    library: RoadmapLibrary | None
    pixel_spacing: float
    meta: dict

    @property
    def n_frames(self) -> int:
        return len(self.frames)


def load_frames(directory, pixel_spacing: float = 1.0, preprocess: bool = True,
                target_size: int = 256) -> list[Frame]:
    """Frames ``NNNN.pgm`` in name order, optionally resampled and rescaled."""
    paths = sorted(Path(directory).glob("*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no .pgm frames in {directory}")
    frames = []
    for k, p in enumerate(paths):
        f = Frame(io.read_pgm(p), pixel_spacing, k)
        frames.append(resample_frame(f, target_size) if preprocess else f)
    if len({f.shape for f in frames}) != 1:
        raise FormatError(f"frames in {directory} differ in size")
    return frames


def load_dataset(directory, preprocess: bool = True, target_size: int = 256) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    meta = json.loads((d / "scene.json").read_text()) if (d / "scene.json").exists() else {}
    spacing = float(meta.get("pixel_spacing", 1.0))
    frames = load_frames(d / "frames", spacing, preprocess, target_size)
    src_width = io.read_pgm(sorted((d / "frames").glob("*.pgm"))[0]).shape[1]
    scale = frames[0].width / src_width
    tips = None
    if (d / "tips.csv").exists():
        # pixel-centre aligned resampling maps x to (x + 0.5) * scale - 0.5
        tips = (io.read_tips(d / "tips.csv") + 0.5) * scale - 0.5
    if tips is not None and len(tips) != len(frames):
        raise FormatError(f"{len(tips)} tips for {len(frames)} frames")
    ecg = None
    if (d / "ecg.csv").exists():
        samples, rate = io.read_ecg(d / "ecg.csv")
        ecg = ECGSignal(samples, rate)
    guidewires = None
    gdir = d / "guidewire"
    if gdir.is_dir():
        guidewires = [Polyline(io.read_polyline(p)) for p in sorted(gdir.glob("*.csv"))]
    library = read_library(d / "library") if (d / "library" / "index.csv").exists() else None
    return Dataset(frames, tips, ecg, guidewires, library, frames[0].pixel_spacing, meta)
