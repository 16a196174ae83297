"""Domain types and pixel-space utilities shared by every module.

Coordinates are ``(x, y) = (column, row)`` with the origin at the top-left
pixel centre; pixel ``(i, j)`` covers ``[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import InvalidInputError, InvalidParameterError

MAP_SUM_TOL = 1e-6
WEIGHT_SUM_TOL = 1e-9


class TipState(NamedTuple):
    """Subpixel landmark position in pixels (x = column, y = row)."""

    x: float
    y: float

    def in_bounds(self, width: int, height: int) -> bool:
        return 0 <= self.x < width and 0 <= self.y < height


@dataclass(frozen=True)
class PixelSpacing:
    mm_per_px: float

    def __post_init__(self):
        if not self.mm_per_px > 0:
            raise InvalidParameterError(f"mm_per_px must be positive, got {self.mm_per_px}")

    def to_mm(self, px):
        return np.asarray(px, dtype=np.float64) * self.mm_per_px

    def to_px(self, mm):
        return np.asarray(mm, dtype=np.float64) / self.mm_per_px


UnitsContext = PixelSpacing


@dataclass(frozen=True)
class Frame:
    """One grayscale image of a sequence, intensities in [0, 1]."""

    pixels: np.ndarray
    pixel_spacing: float = 1.0
    index: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInputError(f"frame must be a non-empty 2D grid, got shape {px.shape}")
        if not np.issubdtype(px.dtype, np.floating):
            px = px.astype(np.float64)
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise InvalidInputError("frame intensities must lie in [0, 1]")
        if not self.pixel_spacing > 0:
            raise InvalidParameterError("pixel_spacing must be positive")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class ProbabilityMap:
    """Nonnegative per-pixel map summing to one (likelihood, label or prior)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise InvalidInputError(f"probability map must be a non-empty 2D grid, got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0:
            raise InvalidInputError("probability map entries must be finite and nonnegative")
        total = v.sum()
        if abs(total - 1.0) > MAP_SUM_TOL:
            raise InvalidInputError(f"probability map sums to {total!r}, expected 1")
        object.__setattr__(self, "values", v)

    @classmethod
    def normalized(cls, values) -> ProbabilityMap:
        """Build a map from nonnegative weights by dividing by their sum."""
        v = np.asarray(values, dtype=np.float64)
        total = v.sum()
        if not total > 0 or not np.isfinite(total):
            raise InvalidInputError("cannot normalise a map with zero or non-finite mass")
        return cls(v / total)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def expectation(self) -> TipState:
        """Mean position of the map, pixel centres weighted by mass."""
        h, w = self.values.shape
        return TipState(float(self.values.sum(axis=0) @ np.arange(w)),
                        float(self.values.sum(axis=1) @ np.arange(h)))


@dataclass(frozen=True)
class SegmentationMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidInputError("segmentation map must be 2D")
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 1.0:
            raise InvalidInputError("segmentation map entries must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class MotionField:
    """Dense displacement (du along x, dv along y) from one frame to the next."""

    du: np.ndarray
    dv: np.ndarray

    def __post_init__(self):
        du = np.asarray(self.du)
        dv = np.asarray(self.dv)
        if du.ndim != 2 or du.shape != dv.shape:
            raise InvalidInputError("du and dv must be 2D grids of equal shape")
        if not (np.all(np.isfinite(du)) and np.all(np.isfinite(dv))):
            raise InvalidInputError("motion field entries must be finite")
        object.__setattr__(self, "du", du)
        object.__setattr__(self, "dv", dv)

    @classmethod
    def constant(cls, du: float, dv: float, width: int, height: int) -> MotionField:
        return cls(np.full((height, width), du, dtype=np.float32),
                   np.full((height, width), dv, dtype=np.float32))

    @property
    def height(self) -> int:
        return self.du.shape[0]

    @property
    def width(self) -> int:
        return self.du.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.du.shape


@dataclass
class ParticleSet:
    """``N_s`` weighted position hypotheses; ``positions`` has shape (N, 2)."""

    positions: np.ndarray
    weights: np.ndarray
    degenerate: bool = field(default=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.positions.shape[0] < 1:
            raise InvalidInputError("a particle set needs at least one particle")
        if self.weights.shape[0] != self.positions.shape[0]:
            raise InvalidInputError("positions and weights differ in length")
        if np.any(self.weights < 0):
            raise InvalidInputError("particle weights must be nonnegative")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> ParticleSet:
        return ParticleSet(self.positions.copy(), self.weights.copy(), self.degenerate)


@dataclass(frozen=True)
class Polyline:
    """Open curve, points in mm, shape (N, 2)."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 2:
            raise InvalidInputError("a polyline needs at least two 2D points")
        if np.any(np.all(np.diff(p, axis=0) == 0.0, axis=1)):
            raise InvalidInputError("consecutive polyline points must be distinct")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    def translated(self, offset) -> Polyline:
        return Polyline(self.points + np.asarray(offset, dtype=np.float64))


def bilinear_sample(pmap, p) -> float:
    """Bilinear interpolation of a 2D grid at subpixel ``p = (x, y)``.

    Returns 0 outside ``[0, width-1] x [0, height-1]``.
    """
    values = pmap.values if isinstance(pmap, ProbabilityMap) else np.asarray(pmap)
    x, y = float(p[0]), float(p[1])
    return float(kernels.bilinear_points(values, np.array([x]), np.array([y]))[0])


def bilinear_sample_many(grid, positions) -> np.ndarray:
    """Vectorised :func:`bilinear_sample` over an ``(N, 2)`` array of points."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    values = grid.values if isinstance(grid, ProbabilityMap) else np.asarray(grid)
    return kernels.bilinear_points(values, np.ascontiguousarray(pos[:, 0]),
                                   np.ascontiguousarray(pos[:, 1]))


def gaussian_map(center, sigma: float, width: int, height: int) -> ProbabilityMap:
    """Isotropic Gaussian evaluated on the pixel grid, renormalised to sum 1."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    if width < 1 or height < 1:
        raise InvalidParameterError("map dimensions must be positive")
    cx, cy = float(center[0]), float(center[1])
    gx = -((np.arange(width) - cx) ** 2) / (2.0 * sigma * sigma)
    gy = -((np.arange(height) - cy) ** 2) / (2.0 * sigma * sigma)
    # separable and shifted to a peak of exactly 1: no underflow of the whole map
    ex = np.exp(gx - gx.max())
    ey = np.exp(gy - gy.max())
    grid = np.outer(ey, ex)
    return ProbabilityMap(grid / grid.sum())


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Dense linear-interpolation operator mapping ``n_in`` samples to ``n_out``."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.minimum(np.floor(src).astype(np.int64), max(n_in - 2, 0))
    frac = src - i0
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    mat[rows, i0] += 1.0 - frac
    mat[rows, np.minimum(i0 + 1, n_in - 1)] += frac
    return mat


def resize_bilinear(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment (no antialiasing)."""
    img = np.asarray(img)
    h, w = img.shape[-2:]
    oh, ow = shape
    if (oh, ow) == (h, w):
        return img.copy()
    ry = _interp_matrix(oh, h).astype(img.dtype if img.dtype.kind == "f" else np.float64)
    rx = _interp_matrix(ow, w).astype(ry.dtype)
    return ry @ img @ rx.T


def minmax_rescale(img: np.ndarray) -> np.ndarray:
    """Affinely map intensities onto [0, 1]; a constant image maps to zeros."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi - lo <= 0:
        return np.zeros_like(img)
    return np.clip((img - lo) / (hi - lo), 0.0, 1.0)


def resample_frame(frame: Frame, size: int | tuple[int, int] = 256) -> Frame:
    """Resample to the working grid and min-max rescale intensities.

    ``pixel_spacing`` is scaled by the horizontal resampling ratio.
    """
    oh, ow = (size, size) if np.isscalar(size) else size
    if frame.width < 2 or frame.height < 2:
        raise InvalidInputError("source frame must be at least 2x2")
    out = minmax_rescale(resize_bilinear(frame.pixels.astype(np.float64), (oh, ow)))
    return Frame(out, frame.pixel_spacing * frame.width / ow, frame.index)
