"""Acceptance suite: one test per criterion, each with its own runtime budget.

Run ``pytest tests/test_acceptance.py`` to get a PASS/FAIL line per
criterion in the terminal summary.
"""
import json
import time

import numpy as np
import pytest

from conftest import shifted_pair
from oracles import BORDER, block_match, brute_force_register, exhaustive_min_cost
from roadpf.cli import main
from roadpf.core import Frame, ParticleSet, Polyline, ProbabilityMap, gaussian_map
from roadpf.ecg import ECGBuffer, n_ecg_samples, synthetic_ecg, xcorr_register
from roadpf.evaluation import (arclength, correspond, resample_polyline, roadmapping_distance,
                               tracking_stats)
from roadpf.filter import (FilterParams, Tracker, baseline_detect, baseline_of_first, baseline_of_pre,
                           estimate, init_particles, systematic_resample, track, update_weights)
from roadpf.flow import FlowParams, estimate_flow
from roadpf.likelihood import (SyntheticDetector, SyntheticDetectorConfig, dice_loss, mse_loss,
                               spatial_softmax, total_loss)
from roadpf.roadmap import run_dcr
from roadpf.simgen import SceneConfig, generate_sequence, make_library, no_tracking_offset_mm

pytestmark = pytest.mark.acceptance


class Budget:
    """Wall-clock limit checked at the end of a criterion."""

    def __init__(self, seconds):
        self.seconds = seconds
        self.t0 = time.perf_counter()

    def check(self):
        elapsed = time.perf_counter() - self.t0
        assert elapsed < self.seconds, f"took {elapsed:.1f} s, budget {self.seconds} s"


def test_criterion_1_math_identities():
    """Loss and softmax identities"""
    budget = Budget(1.0)
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.normal(0, 20, rng.integers(1, 30, size=2))
        p = spatial_softmax(a).values
        assert abs(p.sum() - 1) < 1e-9
        assert np.max(np.abs(spatial_softmax(a + rng.uniform(-100, 100)).values - p)) < 1e-9
    assert spatial_softmax([[7.5]]).values.tolist() == [[1.0]]
    assert np.all(spatial_softmax(np.full((3, 4), -2.0)).values == 1 / 12)
    assert np.allclose(spatial_softmax([[np.log(3)], [0.0]]).values.ravel(), [0.75, 0.25], rtol=0, atol=1e-15)

    m = np.zeros((4, 5))
    m.flat[:10] = 1
    disjoint = 1 - m
    assert dice_loss(m, m) == 0.0
    assert dice_loss(m, disjoint) == 1.0
    assert dice_loss(m, 0.5 * m) == 1 - 2 * 5 / (10 + 2.5)

    t = ProbabilityMap(np.array([[1.0], [0.0]]))
    d = ProbabilityMap(np.array([[0.0], [1.0]]))
    assert mse_loss(t, d) == 1.0
    assert mse_loss(t, t) == 0.0
    u = np.full((5, 7), 1 / 35)
    assert mse_loss(u, u.copy()) == 0.0

    assert total_loss(0.2, 0.05, 10) == 0.2 + 10 * 0.05
    assert total_loss(0.2, 0.05) == total_loss(0.2, 0.05, 10)
    assert total_loss(0.3, 0.9, 0) == 0.3
    assert total_loss(0, 0, 10) == 0
    budget.check()


def test_criterion_2_particle_filter_correctness():
    """Resampling, normalisation, determinism, online equivalence"""
    budget = Budget(30.0)
    n = 1000
    for seed in range(100):
        rng = np.random.default_rng(seed)
        # offspring bound: every particle is copied floor(N w) or ceil(N w) times
        w = rng.gamma(0.5, size=n)
        w /= w.sum()
        pos = np.column_stack([np.arange(n) * 0.25, rng.uniform(0, 256, n)])
        out = systematic_resample(ParticleSet(pos, w), rng)
        copies = np.bincount(np.rint(out.positions[:, 0] / 0.25).astype(int), minlength=n)
        assert np.all((copies >= np.floor(n * w - 1e-9)) & (copies <= np.ceil(n * w + 1e-9)))
        assert np.all(out.weights == 1 / n)
        # mean preservation on a tracker-like cloud
        cloud = rng.normal(128.0, 5.0, (n, 2))
        lw = np.exp(-np.sum((cloud - (130.0, 126.0)) ** 2, axis=1) / (2 * 4.0 ** 2))
        ps = ParticleSet(cloud, lw / lw.sum())
        assert np.hypot(*np.subtract(estimate(systematic_resample(ps, rng)), estimate(ps))) < 0.5
        # weight normalisation
        prior = init_particles(gaussian_map((40, 30), 6, 80, 64), FilterParams(n_samples=500, seed=seed))
        like = gaussian_map(rng.uniform(10, 70, 2), rng.uniform(2, 8), 80, 64)
        assert abs(update_weights(prior, like).weights.sum() - 1) < 1e-9

    rng = np.random.default_rng(5)
    size, n_frames = 96, 10
    tips = np.array([(40 + 1.5 * k, 50 - 0.5 * k) for k in range(n_frames)])
    frames = [Frame(rng.random((size, size))) for _ in range(n_frames)]
    det = SyntheticDetector(tips, SyntheticDetectorConfig(p_distractor=0.5, p_dropout=0.2, seed=3))
    p0 = gaussian_map(tips[0], 4, size, size)
    params = FilterParams(n_samples=n, seed=11)
    a = track(frames, det, p0, filter_params=params, keep_particles=True)
    b = track(frames, det, p0, filter_params=params, keep_particles=True)
    assert a.estimates.tobytes() == b.estimates.tobytes()
    assert all(x.positions.tobytes() == y.positions.tobytes() for x, y in zip(a.snapshots, b.snapshots))
    online = Tracker(det, p0, params=params)
    streamed = np.array([tuple(online.step(f)) for f in frames])
    assert streamed.tobytes() == a.estimates.tobytes()
    budget.check()


def _interior_mean(field):
    s = np.s_[BORDER:-BORDER, BORDER:-BORDER]
    return np.array([field.du[s].mean(), field.dv[s].mean()])


def test_criterion_3_flow_matches_block_matching():
    """Optical flow against exhaustive block matching"""
    budget = Budget(60.0)
    for seed in range(10):
        a, b = shifted_pair(3, 0, size=96, seed=seed)
        oracle = block_match(a.pixels, b.pixels)
        assert np.array_equal(oracle, [3, 0])
        assert np.all(np.abs(_interior_mean(estimate_flow(a, b)) - oracle) < 0.5)
    for seed in range(10):
        a, b = shifted_pair(8, 5, size=128, seed=seed, sigma=4.0)
        oracle = block_match(a.pixels, b.pixels)
        assert np.array_equal(oracle, [8, 5])
        assert np.all(np.abs(_interior_mean(estimate_flow(a, b, FlowParams())) - oracle) < 1.0)
    budget.check()


def _tracking_errors(seed):
    case = generate_sequence(SceneConfig(n_frames=100, seed=seed))
    tips, h, w = case.tips, case.shape[0], case.shape[1]
    p0 = gaussian_map(tips[0], 4.0, w, h)
    params = FilterParams(seed=seed)
    noisy = SyntheticDetector(tips, SyntheticDetectorConfig(p_distractor=0.3, p_dropout=0.1, seed=seed))
    clean = SyntheticDetector(tips, SyntheticDetectorConfig.noiseless(seed=seed))
    margin = params.flow_roi_margin
    results = {
        "pf": track(case.frames, noisy, p0, filter_params=params),
        "floor": track(case.frames, clean, p0, filter_params=params),
        "of_pre": baseline_of_pre(case.frames, tips[0], roi_margin=margin),
        "of_first": baseline_of_first(case.frames, tips[0], roi_margin=margin),
        "detect": baseline_detect(case.frames, noisy),
    }
    return {k: float(r.errors_px(tips).mean()) for k, r in results.items()}


def test_criterion_4_tracking_beats_baselines(capsys):
    """PF beats OF(pre), OF(1st), detect-only and stays near the noiseless floor"""
    budget = Budget(300.0)
    rows = {seed: _tracking_errors(seed) for seed in range(5)}
    with capsys.disabled():
        print()
        for seed, e in rows.items():
            print(f"  seed {seed}: " + "  ".join(f"{k}={v:.3f}px" for k, v in e.items()))
    for seed, e in rows.items():
        for baseline in ("of_pre", "of_first", "detect"):
            assert e["pf"] < e[baseline], f"seed {seed}: pf {e['pf']:.3f} >= {baseline} {e[baseline]:.3f}"
        assert e["pf"] <= 1.5 * e["floor"], f"seed {seed}: pf {e['pf']:.3f} > 1.5 x floor {e['floor']:.3f}"
    budget.check()


def _dcr_distances(case, results):
    return np.array([roadmapping_distance(case.guidewires[r.index], r.overlay.polylines[0]).mean
                     for r in results])


def test_criterion_5_roadmapping_ordering(capsys):
    """Roadmapping: manual <= PF < no tracking, no tracking near injected motion"""
    budget = Budget(300.0)
    lines = []
    for seed in range(3):
        case = generate_sequence(SceneConfig(n_frames=100, seed=seed))
        lib = make_library(case, 1, 12)
        det = SyntheticDetector(case.tips, SyntheticDetectorConfig(seed=seed))
        p0 = gaussian_map(case.tips[0], 4.0, case.shape[1], case.shape[0])
        manual = _dcr_distances(case, run_dcr(case.frames, case.ecg, lib, tip_source="manual",
                                                   manual_tips=case.tips))
        pf = _dcr_distances(case, run_dcr(case.frames, case.ecg, lib, det, p0,
                                               filter_params=FilterParams(seed=seed)))
        none = _dcr_distances(case, run_dcr(case.frames, case.ecg, lib, tip_source="none"))
        injected = no_tracking_offset_mm(case, 1, 12).mean()
        lines.append((seed, manual.mean(), pf.mean(), none.mean(), injected))
    with capsys.disabled():
        print()
        for seed, m, p, n, inj in lines:
            print(f"  seed {seed}: manual={m:.3f}mm pf={p:.3f}mm none={n:.3f}mm injected={inj:.3f}mm")
    for seed, m, p, n, inj in lines:
        assert m <= p < n, f"seed {seed}: ordering broken"
        assert n == pytest.approx(inj, rel=0.15), f"seed {seed}: none {n:.3f} vs injected {inj:.3f}"
    budget.check()


def test_criterion_6_ecg_matching():
    """ECG registration against brute force and phase recovery"""
    budget = Budget(30.0)
    for seed in range(30):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(50, 2001))
        ref = synthetic_ecg(n, 150.0, rng.uniform(0.6, 1.2), noise=0.05, rng=rng).samples
        L = int(rng.integers(2, min(n, 200)))
        q = ref[rng.integers(0, n - L + 1):][:L] + rng.normal(0, 0.05, L)
        idx, score = brute_force_register(ref.tolist(), q.tolist())
        got = xcorr_register(ref, q)
        assert got.index == idx
        assert got.score == pytest.approx(score, abs=1e-9)

    period = 150
    n_ecg = n_ecg_samples(150.0, 12, 15.0)
    assert n_ecg == 120
    ref = synthetic_ecg(3 * period, 150.0, 1.0).samples
    for offset in (0, 37, 91):
        live = synthetic_ecg(4 * period, 150.0, 1.0, phase0=offset / period).samples
        for start in range(0, period, 5):
            buf = ECGBuffer(n_ecg)
            buf.push(live[:start + n_ecg])
            assert xcorr_register(ref, buf).index % period == (start + n_ecg - 1 + offset) % period
    budget.check()


def test_criterion_7_correspondence_metric():
    """Minimum-cost correspondence and 1 mm resampling"""
    budget = Budget(60.0)
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n, m = rng.integers(3, 7, size=2)
        a, b = rng.normal(size=(n, 2)) * 3, rng.normal(size=(m, 2)) * 3
        assert correspond(a, b).total_cost == pytest.approx(exhaustive_min_cost(a, b), abs=1e-9)
    for seed in range(20):
        r = np.random.default_rng(seed)
        theta = np.linspace(0, r.uniform(0.5, 3.0), 20001)
        radius = r.uniform(5, 40)
        dense = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
        out = resample_polyline(Polyline(dense)).points
        s = arclength(dense)
        seg = np.minimum(np.searchsorted(s, np.arange(len(out)), side="right") - 1, len(dense) - 2)
        pos = s[seg] + np.linalg.norm(out - dense[seg], axis=1)
        assert np.allclose(np.diff(pos)[:-1], 1.0, rtol=0, atol=1e-6)
        assert np.all(np.diff(pos)[-1] <= 1.0 + 1e-6)
    line = resample_polyline(Polyline([[0.0, 0.0], [12.0, 0.0]])).points
    assert np.allclose(np.diff(line[:, 0]), 1.0, rtol=0, atol=1e-6)
    budget.check()


def test_criterion_8_realtime_budget(tmp_path, capsys):
    """Per-frame time under 66.7 ms, flow and PF under 30 ms"""
    assert main(["--workdir", str(tmp_path), "simulate", "--out", "ds", "--frames", "60", "--seed", "0"]) == 0
    assert main(["--workdir", str(tmp_path), "bench", "--dataset", "ds", "--out", "bench.json"]) == 0
    report = json.loads((tmp_path / "bench.json").read_text())
    mean = report["mean"]
    with capsys.disabled():
        print(f"\n  backend={report['backend']} likelihood={mean['likelihood_ms']:.2f}ms "
              f"flow+pf={mean['flow_pf_ms']:.2f}ms total={mean['total_ms']:.2f}ms")
    assert report["n_samples"] == 1000 and report["shape"] == [256, 256]
    assert mean["total_ms"] < 66.7
    assert mean["flow_pf_ms"] < 30.0


def test_criterion_9_outlier_bookkeeping():
    """Inlier and outlier statistics around the 40 mm threshold"""
    seq_a = np.array([1.0, 2.0, 40.0, 40.5, 3.0])
    seq_b = np.array([120.0, 0.5, 4.5])
    seq_c = np.array([2.5, 2.5])
    s = tracking_stats([seq_a, seq_b, seq_c])
    assert s.n_images == 10 and s.n_sequences == 3
    assert s.n_outliers == 2 and s.n_outlier_sequences == 2
    assert s.max == 120.0
    assert s.mean == (1 + 2 + 40 + 40.5 + 3 + 120 + 0.5 + 4.5 + 2.5 + 2.5) / 10
    assert s.median == (2.5 + 3.0) / 2
    inliers = [1.0, 2.0, 40.0, 3.0, 0.5, 4.5, 2.5, 2.5]
    assert s.inlier_max == 40.0
    assert s.inlier_mean == np.mean(inliers)
    assert s.inlier_median == 2.5
    assert s.inlier_avg_seq_mean == np.mean([np.mean([1, 2, 40, 3]), np.mean([0.5, 4.5]), 2.5])
    assert s.inlier_avg_seq_median == np.mean([2.5, 2.5, 2.5])
    assert s.avg_seq_mean == np.mean([seq_a.mean(), seq_b.mean(), seq_c.mean()])
