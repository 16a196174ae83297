"""Compare the numba kernels with their numpy equivalents.

Times every kernel pair on tracker-sized inputs, then times one tracker
frame end to end under each backend (a subprocess per backend, selected
with ``ROADPF_DISABLE_JIT``).

    python benchmarks/bench_kernels.py [--repeat 20] [--frames 30]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np
from scipy import ndimage

from roadpf import kernels
from roadpf.flow import FlowParams, window_kernel

SIZE = 256

TRACKER_SNIPPET = """
import json, time
import numpy as np
from roadpf import backend
from roadpf.core import gaussian_map
from roadpf.filter import Tracker
from roadpf.likelihood import SyntheticDetector, SyntheticDetectorConfig
from roadpf.simgen import SceneConfig, generate_sequence
case = generate_sequence(SceneConfig(n_frames={frames}, seed=0))
det = SyntheticDetector(case.tips, SyntheticDetectorConfig(seed=0))
p0 = gaussian_map(case.tips[0], 4.0, {size}, {size})
for _ in range(2):
    tr = Tracker(det, p0)
    for f in case.frames[:3]:
        tr.step(f)
tr = Tracker(det, p0)
for f in case.frames:
    tr.step(f)
t = np.array(tr.timings[1:]) * 1000
print(json.dumps({{"backend": backend(), "flow_pf_ms": float(t[:, 1].mean()), "total_ms": float(t[:, 2].mean())}}))
"""


def _inputs():
    rng = np.random.default_rng(0)
    img = ndimage.gaussian_filter(rng.random((SIZE, SIZE)), 3.0).astype(np.float32) * 255
    p = FlowParams()
    basis = kernels.poly_exp_basis(p.poly_n, p.poly_sigma)
    R0 = kernels.poly_exp_jit(img, *basis)
    R1 = kernels.poly_exp_jit(np.roll(img, (1, 2), axis=(0, 1)), *basis)
    R1i = np.ascontiguousarray(R1.transpose(1, 2, 0))
    flow = np.zeros((2, SIZE, SIZE), dtype=np.float32)
    M = np.empty_like(R0)
    kernels.update_matrices_jit(R0, R1i, flow, M, kernels.FLOW_BORDER)
    xs, ys = rng.uniform(0, SIZE - 1, 1000), rng.uniform(0, SIZE - 1, 1000)
    grid = rng.random((SIZE, SIZE))
    cost = rng.random((120, 120))
    pts = np.column_stack([np.linspace(20, 230, 40), 128 + 30 * np.sin(np.linspace(0, 3, 40))])
    k = window_kernel(p.winsize)
    return {
        "bilinear_points": lambda f: f(grid, xs, ys),
        "poly_exp": lambda f: f(img, *basis),
        "update_matrices": lambda f: f(R0, R1i, flow, np.empty_like(M), kernels.FLOW_BORDER),
        "blur_solve": lambda f: f(M.copy(), k, flow.copy(), 1e-3),
        "box_solve": lambda f: f(M.copy(), p.winsize // 2, flow.copy(), 1e-3),
        "dtw_table": lambda f: f(cost),
        "polyline_distance": lambda f: f(pts, SIZE, SIZE, 6.0),
    }


def bench_kernels(repeat: int) -> list[tuple[str, float, float]]:
    rows = []
    for name, call in _inputs().items():
        jit, ref = getattr(kernels, f"{name}_jit"), getattr(kernels, f"{name}_numpy")
        call(jit)  # compile
        t_jit = min(timeit.repeat(lambda: call(jit), number=1, repeat=repeat)) * 1000
        t_np = min(timeit.repeat(lambda: call(ref), number=1, repeat=repeat)) * 1000
        rows.append((name, t_jit, t_np))
    return rows


def bench_tracker(frames: int) -> list[dict]:
    out = []
    for disable in ("0", "1"):
        env = dict(os.environ, ROADPF_DISABLE_JIT=disable)
        proc = subprocess.run([sys.executable, "-c", TRACKER_SNIPPET.format(frames=frames, size=SIZE)],
                              env=env, capture_output=True, text=True, check=True)
        out.append(json.loads(proc.stdout.strip().splitlines()[-1]))
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20, help="timing repeats per kernel (best is kept)")
    ap.add_argument("--frames", type=int, default=30, help="frames in the end-to-end tracker run")
    args = ap.parse_args(argv)

    print(f"{'kernel':20s}{'numba ms':>12s}{'numpy ms':>12s}{'speedup':>10s}")
    for name, t_jit, t_np in bench_kernels(args.repeat):
        print(f"{name:20s}{t_jit:12.3f}{t_np:12.3f}{t_np / t_jit:9.1f}x")
    print()
    print(f"{'tracker frame':20s}{'flow+pf ms':>12s}{'total ms':>12s}")
    for row in bench_tracker(args.frames):
        print(f"{row['backend']:20s}{row['flow_pf_ms']:12.2f}{row['total_ms']:12.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
