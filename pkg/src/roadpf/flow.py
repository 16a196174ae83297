"""Dense two-frame optical flow by polynomial expansion (Farnebaeck).

Each pyramid level expands both images into local quadratic polynomials,
then iterates: build the per-pixel normal equations from the current flow,
average them over a window, and solve the 2x2 system for a new flow.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .core import Frame, MotionField, resize_bilinear
from .errors import InvalidInputError, InvalidParameterError

# Images are processed on a 0..255 scale so that the determinant
# regulariser has the magnitude it was tuned for.
INTENSITY_SCALE = 255.0
DET_EPS = 1e-3
MIN_LEVEL_SIZE = 32


@dataclass(frozen=True)
class FlowParams:
    pyr_scale: float = 0.5
    levels: int = 3
    winsize: int = 10
    iterations: int = 30
    poly_n: int = 5
    poly_sigma: float = 1.1
    gaussian_window: bool = True

    def __post_init__(self):
        if not 0 < self.pyr_scale < 1:
            raise InvalidParameterError("pyr_scale must lie in (0, 1)")
        if self.levels < 1:
            raise InvalidParameterError("levels must be >= 1")
        if self.winsize < 3:
            raise InvalidParameterError("winsize must be >= 3")
        if self.iterations < 1:
            raise InvalidParameterError("iterations must be >= 1")
        if self.poly_n not in (5, 7):
            raise InvalidParameterError("poly_n must be 5 or 7")
        if not self.poly_sigma > 0:
            raise InvalidParameterError("poly_sigma must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def window_kernel(winsize: int) -> np.ndarray:
    """One-sided Gaussian averaging taps ``k[0..m]`` with ``m = winsize // 2``."""
    m = winsize // 2
    sigma = 0.3 * m
    k = np.exp(-np.arange(m + 1) ** 2 / (2.0 * sigma * sigma))
    k /= k[0] + 2.0 * k[1:].sum()
    return k.astype(np.float32)


def _as_pixels(img) -> np.ndarray:
    px = img.pixels if isinstance(img, Frame) else np.asarray(img)
    if px.ndim != 2:
        raise InvalidInputError("flow input must be a 2D image")
    return px


class FlowEstimator:
    """Farnebaeck flow with a one-frame cache of the previous pyramid.

    When called on consecutive pairs ``(z0, z1), (z1, z2), ...`` the
    expansion of ``z1`` is reused for the second call.
    """

    def __init__(self, params: FlowParams | None = None):
        self.params = params or FlowParams()
        p = self.params
        self._basis = kernels.poly_exp_basis(p.poly_n, p.poly_sigma)
        self._kernel = window_kernel(p.winsize)
        self._cache_key = None
        self._cache_val = None

    def _level_sizes(self, h: int, w: int) -> list[tuple[int, int, float]]:
        p = self.params
        sizes = [(h, w, 1.0)]
        scale = 1.0
        for _ in range(p.levels - 1):
            scale *= p.pyr_scale
            lh, lw = int(round(h * scale)), int(round(w * scale))
            if min(lh, lw) < MIN_LEVEL_SIZE:
                break
            sizes.append((lh, lw, scale))
        return sizes

    def _pyramid(self, px: np.ndarray) -> list[np.ndarray]:
        img = px.astype(np.float32) * np.float32(INTENSITY_SCALE)
        out = []
        for lh, lw, scale in self._level_sizes(*img.shape):
            if scale == 1.0:
                level = img
            else:
                sigma = (1.0 / scale - 1.0) * 0.5
                blurred = ndimage.gaussian_filter(img, sigma, mode="nearest", truncate=2.5)
                level = resize_bilinear(blurred, (lh, lw)).astype(np.float32)
            out.append(kernels.poly_exp(np.ascontiguousarray(level), *self._basis))
        return out

    def _expansions(self, px: np.ndarray) -> list[np.ndarray]:
        if self._cache_key is not None and self._cache_key is px:
            return self._cache_val
        return self._pyramid(px)

    def estimate(self, prev, nxt, roi=None) -> MotionField:
        """Flow from ``prev`` to ``nxt``.

        ``roi = (x0, y0, x1, y1)`` (half-open pixel bounds) restricts the
        computation to that window; the returned field is full-size and
        zero outside it.
        """
        a = _as_pixels(prev)
        b = _as_pixels(nxt)
        if a.shape != b.shape:
            raise InvalidInputError(f"frame shapes differ: {a.shape} vs {b.shape}")
        if roi is not None:
            x0, y0, x1, y1 = (int(v) for v in roi)
            h, w = a.shape
            x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, w), min(y1, h)
            if (x0, y0, x1, y1) != (0, 0, w, h):
                sub = self._estimate(a[y0:y1, x0:x1], b[y0:y1, x0:x1], cache=False)
                du = np.zeros((h, w), dtype=np.float32)
                dv = np.zeros((h, w), dtype=np.float32)
                du[y0:y1, x0:x1] = sub[0]
                dv[y0:y1, x0:x1] = sub[1]
                return MotionField(du, dv)
        flow = self._estimate(a, b, cache=True)
        return MotionField(flow[0], flow[1])

    def _estimate(self, a, b, cache):
        if min(a.shape) < self.params.winsize:
            raise InvalidInputError("frames are smaller than the averaging window")
        if not cache:
            R0s, R1s = self._pyramid(a), self._pyramid(b)
            return self._coarse_to_fine(R0s, R1s)
        R0s = self._expansions(a)
        R1s = self._pyramid(b)
        self._cache_key, self._cache_val = b, R1s
        return self._coarse_to_fine(R0s, R1s)

    def _coarse_to_fine(self, R0s, R1s):
        flow = None
        for R0, R1 in zip(reversed(R0s), reversed(R1s)):
            _, lh, lw = R0.shape
            if flow is None:
                flow = np.zeros((2, lh, lw), dtype=np.float32)
            else:
                ph, pw = flow.shape[1:]
                up = np.empty((2, lh, lw), dtype=np.float32)
                up[0] = resize_bilinear(flow[0], (lh, lw)) * (lw / pw)
                up[1] = resize_bilinear(flow[1], (lh, lw)) * (lh / ph)
                flow = up
            self._refine(R0, R1, flow)
        return flow

    def _refine(self, R0, R1, flow):
        p = self.params
        M = np.empty_like(R0)
        R1i = np.ascontiguousarray(R1.transpose(1, 2, 0))
        kernels.update_matrices(R0, R1i, flow, M, kernels.FLOW_BORDER)
        for i in range(p.iterations):
            if p.gaussian_window:
                kernels.blur_solve(M, self._kernel, flow, DET_EPS)
            else:
                kernels.box_solve(M, p.winsize // 2, flow, DET_EPS)
            if i < p.iterations - 1:
                kernels.update_matrices(R0, R1i, flow, M, kernels.FLOW_BORDER)


def estimate_flow(prev, nxt, params: FlowParams | None = None) -> MotionField:
    """Displacement field mapping ``prev`` pixel coordinates into ``nxt``."""
    return FlowEstimator(params).estimate(prev, nxt)


def sample_motion(field: MotionField, p) -> tuple[float, float]:
    """Bilinear flow at ``p``; zero displacement outside the image."""
    x = np.array([float(p[0])])
    y = np.array([float(p[1])])
    return (float(kernels.bilinear_points(field.du, x, y)[0]),
            float(kernels.bilinear_points(field.dv, x, y)[0]))


def sample_motion_many(field: MotionField, positions) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    xs = np.ascontiguousarray(pos[:, 0])
    ys = np.ascontiguousarray(pos[:, 1])
    return np.stack([kernels.bilinear_points(field.du, xs, ys),
                     kernels.bilinear_points(field.dv, xs, ys)], axis=1)
