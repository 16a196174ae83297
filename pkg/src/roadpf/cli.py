"""``roadpf`` command line: simulate, track, dcr, eval, bench.

Exit codes: 0 success, 1 invalid input/config or failed metric threshold,
2 I/O error. Relative paths resolve against ``--workdir``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from ._accel import backend
from .config import RunConfig, load_config
from .core import gaussian_map
from .dataset import load_dataset, load_frames
from .ecg import ECGSignal
from .errors import FormatError, RoadpfError
from .evaluation import roadmapping_distance, tracking_errors_mm, tracking_stats
from .filter import Tracker, baseline_detect, baseline_of_first, baseline_of_pre, track
from .likelihood import FileLikelihood, SyntheticDetector
from .roadmap import render_overlay, run_dcr, write_dcr_log
from .simgen import generate_sequence, make_library, read_library, write_dataset

log = logging.getLogger("roadpf")

MODES = ("pf", "of-pre", "of-first", "detect")
INITS = ("manual", "auto")
EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

_FLOW_FLAGS = {"pyr_scale": float, "levels": int, "winsize": int, "iterations": int,
               "poly_n": int, "poly_sigma": float}


def _resolve(workdir: Path, p) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else workdir / p


def _overrides(args) -> dict[str, dict[str, str]]:
    o: dict[str, dict[str, str]] = {}
    if getattr(args, "seed", None) is not None:
        for section in ("scene", "detector", "filter"):
            o.setdefault(section, {})["seed"] = str(args.seed)
    if getattr(args, "frames", None) is not None:
        o.setdefault("scene", {})["n_frames"] = str(args.frames)
    for name in _FLOW_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            o.setdefault("flow", {})[name] = str(v)
    for name in ("n_samples", "sigma_v"):
        v = getattr(args, name, None)
        if v is not None:
            o.setdefault("filter", {})[name] = str(v)
    return o


def _config(args, workdir: Path) -> RunConfig:
    return load_config(_resolve(workdir, args.config), _overrides(args))


def _write_manifest(directory: Path, command: str, cfg: RunConfig, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "backend": backend(),
        "seeds": {"scene": cfg.scene.seed, "detector": cfg.detector.seed, "filter": cfg.filter.seed},
        "config": cfg.to_dict(),
        "config_ini": cfg.to_ini(),
    }
    manifest.update(extra or {})
    (directory / "run_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _ensure_dir(path: Path) -> Path:
    if not path.parent.exists():
        raise FileNotFoundError(f"parent directory {path.parent} does not exist")
    path.mkdir(exist_ok=True)
    return path


def _provider(args, workdir, tips, cfg: RunConfig):
    lik_dir = _resolve(workdir, getattr(args, "likelihood", None))
    if lik_dir is not None:
        return FileLikelihood(lik_dir)
    if tips is None:
        raise FormatError("the synthetic detector needs ground-truth tips (tips.csv)")
    return SyntheticDetector(tips, cfg.detector.detector())


def _initial_map(init: str, frames, provider, tips, cfg: RunConfig):
    if init == "manual":
        if tips is None:
            raise FormatError("manual initialisation needs ground-truth tips (tips.csv)")
        h, w = frames[0].shape
        return gaussian_map(tips[0], cfg.detector.sigma_true, w, h)
    return provider(frames[0], 0)


def cmd_simulate(args, workdir: Path) -> int:
    cfg = _config(args, workdir)
    out = _resolve(workdir, args.out)
    if not out.parent.exists():
        raise FileNotFoundError(f"parent directory {out.parent} does not exist")
    case = generate_sequence(cfg.scene)
    try:
        library = make_library(case, cfg.io.library_cycle, cfg.ecg.buffer_frames)
    except RoadpfError as exc:
        log.warning("no roadmap library written: %s", exc)
        library = None
    write_dataset(case, out, library)
    _write_manifest(out, "simulate", cfg)
    print(f"wrote {case.config.n_frames} frames to {out}")
    return EXIT_OK


def _run_track(mode, init, ds, provider, cfg):
    p0 = _initial_map(init, ds.frames, provider, ds.tips, cfg)
    start = ds.tips[0] if init == "manual" else p0.expectation()
    if mode == "pf":
        return track(ds.frames, provider, p0, cfg.flow, cfg.filter)
    if mode == "of-pre":
        return baseline_of_pre(ds.frames, start, cfg.flow, roi_margin=cfg.filter.flow_roi_margin)
    if mode == "of-first":
        return baseline_of_first(ds.frames, start, cfg.flow, roi_margin=cfg.filter.flow_roi_margin)
    return baseline_detect(ds.frames, provider)


def cmd_track(args, workdir: Path) -> int:
    cfg = _config(args, workdir)
    ds = load_dataset(_resolve(workdir, args.dataset), cfg.io.preprocess, cfg.io.target_size)
    provider = _provider(args, workdir, ds.tips, cfg)
    result = _run_track(args.mode, args.init, ds, provider, cfg)
    out = _resolve(workdir, args.out)
    if not out.parent.exists():
        raise FileNotFoundError(f"parent directory {out.parent} does not exist")
    io.write_track(out, result.estimates, ds.pixel_spacing, result.degenerate)
    _write_manifest(out.parent, "track", cfg, {"mode": args.mode, "init": args.init})
    if ds.tips is not None:
        err = result.errors_px(ds.tips)
        print(f"{args.mode}: mean error {err.mean():.3f} px ({err.mean() * ds.pixel_spacing:.3f} mm)")
    return EXIT_OK


def cmd_dcr(args, workdir: Path) -> int:
    cfg = _config(args, workdir)
    library = read_library(_resolve(workdir, args.library))
    spacing = library[0].pixel_spacing
    frames = load_frames(_resolve(workdir, args.frames_dir), spacing, cfg.io.preprocess, cfg.io.target_size)
    samples, rate = io.read_ecg(_resolve(workdir, args.ecg))
    ecg = ECGSignal(samples, rate)
    tips_path = _resolve(workdir, args.tips)
    if tips_path is None and (_resolve(workdir, args.frames_dir).parent / "tips.csv").exists():
        tips_path = _resolve(workdir, args.frames_dir).parent / "tips.csv"
    tips = io.read_tips(tips_path) if tips_path is not None else None
    provider = p0 = None
    if args.tip_source == "pf":
        provider = _provider(args, workdir, tips, cfg)
        p0 = _initial_map(args.init, frames, provider, tips, cfg)
    results = run_dcr(frames, ecg, library, provider, p0, cfg.flow, cfg.filter,
                      tip_source=args.tip_source, manual_tips=tips, fps=cfg.ecg.frame_rate,
                      ecg_frames=cfg.ecg.buffer_frames, min_score=cfg.ecg.min_score)
    out = _ensure_dir(_resolve(workdir, args.out))
    write_dcr_log(out / "dcr_log.csv", results)
    if cfg.io.write_overlays:
        (out / "overlays").mkdir(exist_ok=True)
        for r in results:
            render_overlay(frames[r.index], r.overlay, path=out / "overlays" / f"{r.index:04d}.ppm")
    _write_manifest(out, "dcr", cfg, {"tip_source": args.tip_source})
    print(f"roadmapped {len(results)} frames into {out}")
    return EXIT_OK


def _read_dcr_log(path: Path):
    rows = io.read_csv(path, ["frame", "roadmap_id", "tip_x", "tip_y", "ecg_score"])
    return [(int(r[0]), int(r[1]), float(r[2]), float(r[3])) for r in rows]


def cmd_eval(args, workdir: Path) -> int:
    ds = load_dataset(_resolve(workdir, args.dataset), preprocess=False)
    out = _ensure_dir(_resolve(workdir, args.out))
    metrics: dict = {}
    failed = False
    if args.track:
        est, _ = io.read_track(_resolve(workdir, args.track))
        if ds.tips is None:
            raise FormatError("dataset has no tips.csv to evaluate against")
        stats = tracking_stats(tracking_errors_mm(est, ds.tips, ds.pixel_spacing))
        metrics["tracking"] = stats.to_dict()
        if args.max_mean_mm is not None and stats.mean > args.max_mean_mm:
            failed = True
    if args.dcr:
        if ds.library is None or ds.guidewires is None:
            raise FormatError("dataset needs library/ and guidewire/ for roadmap evaluation")
        rows = []
        for frame, rid, tx, ty in _read_dcr_log(_resolve(workdir, args.dcr) / "dcr_log.csv"):
            rm = ds.library[rid]
            shift = (np.array([tx, ty]) - np.array(rm.ref_tip)) * rm.pixel_spacing
            dist = roadmapping_distance(ds.guidewires[frame], rm.polylines[0].translated(shift))
            rows.append((frame, dist.mean, dist.distances.size))
        io.write_csv(out / "distances.csv", ["frame", "mean_mm", "n_pairs"],
                     [(f, repr(m), n) for f, m, n in rows])
        means = np.array([m for _, m, _ in rows])
        metrics["roadmapping"] = {"n_frames": int(means.size), "mean_mm": float(means.mean()),
                                  "median_mm": float(np.median(means)), "max_mm": float(means.max())}
        if args.max_mean_mm is not None and means.mean() > args.max_mean_mm:
            failed = True
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True))
    print(json.dumps(metrics, indent=1, sort_keys=True))
    return EXIT_INVALID if failed else EXIT_OK


BENCH_COLUMNS = ("likelihood_ms", "flow_pf_ms", "total_ms")


def bench_tracker(frames, provider, p0, cfg: RunConfig, warmup: int = 2) -> np.ndarray:
    """Per-frame wall times (ms) of the filter, excluding the initial frame."""
    warm = Tracker(provider, p0, cfg.flow, cfg.filter)
    for f in frames[:warmup + 1]:
        warm.step(f)
    tracker = Tracker(provider, p0, cfg.flow, cfg.filter)
    for f in frames:
        tracker.step(f)
    return np.array(tracker.timings[1:]) * 1000.0


def cmd_bench(args, workdir: Path) -> int:
    cfg = _config(args, workdir)
    ds = load_dataset(_resolve(workdir, args.dataset), cfg.io.preprocess, cfg.io.target_size)
    frames = ds.frames if args.max_frames is None else ds.frames[:args.max_frames]
    provider = _provider(args, workdir, ds.tips, cfg)
    p0 = _initial_map("manual" if ds.tips is not None else "auto", frames, provider, ds.tips, cfg)
    times = bench_tracker(frames, provider, p0, cfg)
    report = {"backend": backend(), "n_frames": int(times.shape[0]),
              "n_samples": cfg.filter.n_samples, "shape": list(frames[0].shape)}
    print(f"{'':8s}" + "".join(f"{c:>15s}" for c in BENCH_COLUMNS))
    for stat, fn in (("median", np.median), ("mean", np.mean), ("std", np.std)):
        vals = fn(times, axis=0)
        report[stat] = dict(zip(BENCH_COLUMNS, map(float, vals)))
        print(f"{stat:8s}" + "".join(f"{v:15.2f}" for v in vals))
    if args.out:
        out = _resolve(workdir, args.out)
        if not out.parent.exists():
            raise FileNotFoundError(f"parent directory {out.parent} does not exist")
        report["frames"] = [dict(zip(BENCH_COLUMNS, map(float, row))) for row in times]
        out.write_text(json.dumps(report, indent=1))
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file or a run_manifest.json")
    p.add_argument("--seed", type=int, help="seed for scene, detector and filter")
    g = p.add_argument_group("optical flow")
    for name, typ in _FLOW_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    g = p.add_argument_group("particle filter")
    g.add_argument("--n-samples", dest="n_samples", type=int)
    g.add_argument("--sigma-v", dest="sigma_v", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadpf", description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", default=".", help="base directory for relative paths")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, help="number of frames")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="track the tip through a dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=MODES, default="pf")
    p.add_argument("--init", choices=INITS, default="manual")
    p.add_argument("--likelihood", help="directory of NNNN.rpfm likelihood maps")
    p.add_argument("--out", default="tracks.csv")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("dcr", help="dynamic roadmapping of a live sequence")
    _add_common(p)
    p.add_argument("--library", required=True)
    p.add_argument("--frames", dest="frames_dir", required=True, help="directory of NNNN.pgm live frames")
    p.add_argument("--ecg", required=True)
    p.add_argument("--tips", help="tips CSV for the synthetic detector and manual tracking")
    p.add_argument("--tip-source", choices=("pf", "manual", "none"), default="pf")
    p.add_argument("--init", choices=INITS, default="manual")
    p.add_argument("--likelihood")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dcr)

    p = sub.add_parser("eval", help="tracking and roadmapping metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--track", help="tracks CSV from `roadpf track`")
    p.add_argument("--dcr", help="output directory of `roadpf dcr`")
    p.add_argument("--max-mean-mm", type=float, help="exit 1 when a mean error exceeds this")
    p.add_argument("--out", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-frame timing of the tracker")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--max-frames", type=int)
    p.add_argument("--likelihood")
    p.add_argument("--out", help="write the timing report as JSON")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    workdir = Path(args.workdir)
    try:
        return args.func(args, workdir)
    except (OSError, FormatError) as exc:
        print(f"roadpf: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RoadpfError, ValueError) as exc:
        print(f"roadpf: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
