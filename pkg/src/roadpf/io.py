"""On-disk formats: PGM/PPM images, RPFM float maps and the CSV tables."""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

RPFM_MAGIC = b"RPFM"
_RPFM_HEADER = struct.Struct("<4sIII")


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated netpbm header")
    return buf[start:pos], pos


def _parse_netpbm(buf: bytes, magic: bytes):
    tok, pos = _read_token(buf, 0)
    if tok != magic:
        raise FormatError(f"expected {magic!r} image, found {tok[:8]!r}")
    try:
        w_tok, pos = _read_token(buf, pos)
        h_tok, pos = _read_token(buf, pos)
        m_tok, pos = _read_token(buf, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as exc:
        raise FormatError("non-numeric netpbm header field") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError("invalid netpbm dimensions or maxval")
    # exactly one whitespace byte separates the header from the raster
    return width, height, maxval, buf[pos + 1:]


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (8 or 16 bit) as float64 intensities in [0, 1]."""
    buf = Path(path).read_bytes()
    width, height, maxval, raster = _parse_netpbm(buf, b"P5")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height
    if len(raster) < count * dtype.itemsize:
        raise FormatError("PGM raster shorter than its header declares")
    data = np.frombuffer(raster, dtype=dtype, count=count).reshape(height, width)
    return data.astype(np.float64) / maxval


def write_pgm(path, img: np.ndarray, bits: int = 16) -> None:
    """Write intensities in [0, 1] as binary PGM with 8 or 16 bit depth."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    img = np.asarray(img, dtype=np.float64)
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    raster = q.astype(np.uint8 if bits == 8 else ">u2").tobytes()
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + raster)


def read_ppm(path) -> np.ndarray:
    """Read a binary 8-bit PPM as a ``(H, W, 3)`` uint8 array."""
    buf = Path(path).read_bytes()
    width, height, maxval, raster = _parse_netpbm(buf, b"P6")
    if maxval != 255:
        raise FormatError("only 8-bit PPM is supported")
    if len(raster) < width * height * 3:
        raise FormatError("PPM raster shorter than its header declares")
    return np.frombuffer(raster, dtype=np.uint8, count=width * height * 3).reshape(height, width, 3).copy()


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(rgb).tobytes())


def write_rpfm(path, channels) -> None:
    """Write one or more equally sized 2D grids as little-endian float32.

    Channels are interleaved per pixel, row-major.
    """
    if isinstance(channels, np.ndarray) and channels.ndim == 2:
        channels = [channels]
    stack = np.stack([np.asarray(c, dtype="<f4") for c in channels], axis=-1)
    h, w, c = stack.shape
    Path(path).write_bytes(_RPFM_HEADER.pack(RPFM_MAGIC, w, h, c) + stack.tobytes())


def read_rpfm(path) -> np.ndarray:
    """Read an RPFM file; returns a ``(channels, H, W)`` float32 array."""
    buf = Path(path).read_bytes()
    if len(buf) < _RPFM_HEADER.size:
        raise FormatError("file too short for an RPFM header")
    magic, w, h, c = _RPFM_HEADER.unpack_from(buf)
    if magic != RPFM_MAGIC:
        raise FormatError(f"bad RPFM magic {magic!r}")
    if w < 1 or h < 1 or c < 1:
        raise FormatError("RPFM dimensions must be positive")
    expected = w * h * c * 4
    body = buf[_RPFM_HEADER.size:]
    if len(body) != expected:
        raise FormatError(f"RPFM payload is {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype="<f4").reshape(h, w, c)
    return np.ascontiguousarray(np.moveaxis(data, -1, 0)).astype(np.float32)


def read_csv(path, header: list[str]) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [s.strip() for s in rows[0]] != header:
        raise FormatError(f"{path}: expected header {','.join(header)}")
    out = [r for r in rows[1:] if r]
    for r in out:
        if len(r) != len(header):
            raise FormatError(f"{path}: row has {len(r)} fields, expected {len(header)}")
    return out


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


TIPS_HEADER = ["frame_index", "x_px", "y_px"]
ECG_HEADER = ["t_seconds", "value"]
TRACK_HEADER = ["frame", "x_px", "y_px", "x_mm", "y_mm", "degenerate_flag"]
POLYLINE_HEADER = ["x_mm", "y_mm"]


def write_tips(path, tips) -> None:
    write_csv(path, TIPS_HEADER, [(i, repr(float(x)), repr(float(y))) for i, (x, y) in enumerate(tips)])


def read_tips(path) -> np.ndarray:
    """Tip annotations as an ``(N, 2)`` array ordered by frame index."""
    try:
        rows = sorted(((int(r[0]), float(r[1]), float(r[2])) for r in read_csv(path, TIPS_HEADER)))
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric tip entry") from exc
    if [r[0] for r in rows] != list(range(len(rows))):
        raise FormatError(f"{path}: frame indices must be 0..N-1 without gaps")
    return np.array([(x, y) for _, x, y in rows], dtype=np.float64).reshape(-1, 2)


def write_ecg(path, samples, sample_rate: float) -> None:
    write_csv(path, ECG_HEADER, [(repr(i / sample_rate), repr(float(v))) for i, v in enumerate(samples)])


def read_ecg(path) -> tuple[np.ndarray, float]:
    """ECG samples and the sample rate implied by the timestamps."""
    try:
        rows = np.array([(float(a), float(b)) for a, b in read_csv(path, ECG_HEADER)])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric ECG entry") from exc
    if rows.shape[0] < 2:
        raise FormatError(f"{path}: an ECG needs at least two samples")
    dt = np.diff(rows[:, 0])
    if np.any(dt <= 0):
        raise FormatError(f"{path}: timestamps must be strictly increasing")
    return rows[:, 1], float(1.0 / dt.mean())


def write_polyline(path, points) -> None:
    write_csv(path, POLYLINE_HEADER, [(repr(float(x)), repr(float(y))) for x, y in points])


def read_polyline(path) -> np.ndarray:
    try:
        return np.array([(float(a), float(b)) for a, b in read_csv(path, POLYLINE_HEADER)]).reshape(-1, 2)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric polyline entry") from exc


def write_track(path, estimates, spacing: float, degenerate) -> None:
    rows = []
    for k, ((x, y), flag) in enumerate(zip(estimates, degenerate)):
        rows.append((k, repr(float(x)), repr(float(y)), repr(float(x) * spacing),
                     repr(float(y) * spacing), int(bool(flag))))
    write_csv(path, TRACK_HEADER, rows)


def read_track(path) -> tuple[np.ndarray, np.ndarray]:
    """Estimates ``(N, 2)`` in px and the per-frame degeneracy flags."""
    try:
        rows = read_csv(path, TRACK_HEADER)
        est = np.array([(float(r[1]), float(r[2])) for r in rows]).reshape(-1, 2)
        flags = np.array([int(r[5]) != 0 for r in rows], dtype=bool)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric track entry") from exc
    return est, flags
