import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import smooth_texture
from roadpf.core import Frame, MotionField, ParticleSet, ProbabilityMap, gaussian_map
from roadpf.errors import InvalidParameterError, PipelineError
from roadpf.filter import (FilterParams, Tracker, baseline_detect, baseline_of_first, baseline_of_pre,
                           estimate, init_particles, propagate, roi_around, systematic_resample, track,
                           update_weights)
from roadpf.likelihood import SyntheticDetector, SyntheticDetectorConfig


def dirac(x, y, w=32, h=32):
    v = np.zeros((h, w))
    v[y, x] = 1.0
    return ProbabilityMap(v)


def counts(ps, n_parents):
    """Offspring count per parent, matching resampled positions to parents by their unique x."""
    return np.array([np.sum(ps.positions[:, 0] == i) for i in range(n_parents)])


def indexed_particles(weights):
    n = len(weights)
    pos = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])
    return ParticleSet(pos, np.asarray(weights, dtype=float))


# --- initialisation ---------------------------------------------------------

def test_init_dirac_stays_in_cell():
    ps = init_particles(dirac(10, 20), FilterParams(n_samples=500, seed=1))
    assert np.all(np.abs(ps.positions - (10, 20)) <= 0.5)
    assert np.all(ps.weights == 1 / 500)


def test_init_gaussian_mean():
    c = (40.3, 25.7)
    ps = init_particles(gaussian_map(c, 4, 80, 60), FilterParams(n_samples=10000, seed=2))
    assert np.all(np.abs(ps.positions.mean(axis=0) - c) < 0.2)


def test_init_single_particle():
    ps = init_particles(gaussian_map((5, 5), 2, 16, 16), FilterParams(n_samples=1))
    assert len(ps) == 1 and ps.weights[0] == 1.0


# --- propagation ------------------------------------------------------------

def test_propagate_identity():
    ps = init_particles(gaussian_map((16, 16), 3, 32, 32), FilterParams(n_samples=50))
    out = propagate(ps, MotionField.constant(0, 0, 32, 32), 0.0, np.random.default_rng(0))
    assert np.array_equal(out.positions, ps.positions)
    assert np.array_equal(out.weights, ps.weights)


def test_propagate_constant_field():
    ps = init_particles(gaussian_map((16, 16), 3, 32, 32), FilterParams(n_samples=50))
    out = propagate(ps, MotionField.constant(2, 3, 32, 32), 0.0, np.random.default_rng(0))
    assert np.allclose(out.positions - ps.positions, (2, 3), atol=1e-12)


def test_propagate_noise_std():
    ps = ParticleSet(np.full((10000, 2), 50.0), np.full(10000, 1e-4))
    out = propagate(ps, MotionField.constant(0, 0, 100, 100), 5.0, np.random.default_rng(3))
    sd = out.positions.std(axis=0)
    assert np.all((sd > 4.8) & (sd < 5.2))


# --- weighting and estimation -----------------------------------------------

def test_update_uniform_map():
    ps = init_particles(gaussian_map((16, 16), 3, 32, 32), FilterParams(n_samples=100))
    out = update_weights(ps, ProbabilityMap(np.full((32, 32), 1 / 1024)))
    assert np.allclose(out.weights, 1 / 100, atol=1e-15) and not out.degenerate


def test_update_dirac_selects_particle():
    pos = np.array([[10.0, 20.0], [3.0, 3.0], [25.0, 5.0]])
    out = update_weights(ParticleSet(pos, np.full(3, 1 / 3)), dirac(10, 20))
    assert out.weights.tolist() == [1.0, 0.0, 0.0]


def test_update_all_out_of_bounds_is_flagged():
    pos = np.array([[-10.0, 5.0], [50.0, 50.0]])
    out = update_weights(ParticleSet(pos, np.array([0.5, 0.5])), gaussian_map((5, 5), 2, 32, 32))
    assert out.degenerate and np.array_equal(out.weights, [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_update_weights_normalised(seed):
    rng = np.random.default_rng(seed)
    ps = ParticleSet(rng.uniform(-5, 40, (300, 2)), np.full(300, 1 / 300))
    out = update_weights(ps, ProbabilityMap.normalized(rng.random((32, 32))))
    assert abs(out.weights.sum() - 1) < 1e-9


def test_estimate_cases():
    assert estimate(ParticleSet(np.full((4, 2), 7.5), np.full(4, 0.25))) == (7.5, 7.5)
    two = np.array([[0.0, 0.0], [10.0, 0.0]])
    assert estimate(ParticleSet(two, np.array([0.5, 0.5]))) == (5.0, 0.0)
    assert estimate(ParticleSet(two, np.array([0.9, 0.1]))) == pytest.approx((1.0, 0.0), abs=1e-12)


# --- resampling ---------------------------------------------------------------

def test_resample_uniform_keeps_each_once():
    ps = indexed_particles(np.full(25, 1 / 25))
    out = systematic_resample(ps, np.random.default_rng(0))
    assert np.all(counts(out, 25) == 1)
    assert np.all(out.weights == 1 / 25)


def test_resample_point_mass():
    w = np.zeros(20)
    w[7] = 1.0
    out = systematic_resample(indexed_particles(w), np.random.default_rng(1))
    assert np.all(out.positions[:, 0] == 7)


@pytest.mark.parametrize("seed", range(20))
def test_resample_hand_counts(seed):
    w = np.zeros(10)
    w[:3] = 0.5, 0.3, 0.2
    out = systematic_resample(indexed_particles(w), np.random.default_rng(seed))
    assert counts(out, 10).tolist() == [5, 3, 2, 0, 0, 0, 0, 0, 0, 0]


@pytest.mark.parametrize("seed", range(100))
def test_resample_offspring_bound_and_mean(seed):
    rng = np.random.default_rng(seed)
    n = 1000
    w = rng.gamma(0.5, size=n)
    w /= w.sum()
    pos = rng.uniform(0, 256, (n, 2))
    pos[:, 0] = np.arange(n) * 0.25  # unique x for counting
    ps = ParticleSet(pos, w)
    out = systematic_resample(ps, rng)
    c = np.array([np.sum(out.positions[:, 0] == x) for x in pos[:, 0]])
    assert np.all((c >= np.floor(n * w - 1e-9)) & (c <= np.ceil(n * w + 1e-9)))
    assert abs(out.weights.sum() - 1) < 1e-9


@pytest.mark.parametrize("seed", range(100))
def test_resample_preserves_weighted_mean(seed):
    # a tracker-like cloud: prior spread sigma_v around the tip, label-width likelihood
    rng = np.random.default_rng(seed)
    pos = rng.normal(128.0, 5.0, (1000, 2))
    w = np.exp(-np.sum((pos - (130.0, 126.0)) ** 2, axis=1) / (2 * 4.0 ** 2))
    ps = ParticleSet(pos, w / w.sum())
    out = systematic_resample(ps, rng)
    assert np.hypot(*np.subtract(estimate(out), estimate(ps))) < 0.5


def test_posterior_mean_converges():
    c = (30.4, 41.7)
    prior = ProbabilityMap(np.full((80, 64), 1 / (80 * 64)))
    ps = init_particles(prior, FilterParams(n_samples=10000, seed=4))
    out = update_weights(ps, gaussian_map(c, 3, 64, 80))
    assert np.hypot(*np.subtract(estimate(out), c)) < 0.5


# --- full recursion -----------------------------------------------------------

def translating_sequence(n=12, step=(1.5, -0.5), size=96):
    tips = np.array([(40 + k * step[0], 50 + k * step[1]) for k in range(n)])
    frames = [Frame(smooth_texture(size, size, seed=k)) for k in range(n)]
    return frames, tips


def exact_flow(step, size=96):
    return lambda prev, nxt: MotionField.constant(step[0], step[1], size, size)


def test_noiseless_fixed_point():
    frames, tips = translating_sequence()
    prov = SyntheticDetector(tips, SyntheticDetectorConfig.noiseless())
    p0 = gaussian_map(tips[0], 4, 96, 96)
    # Monte Carlo error of the weighted mean shrinks as 1/sqrt(N_s)
    params = FilterParams(n_samples=10000, sigma_v=0.0, seed=1)
    res = track(frames, prov, p0, filter_params=params, flow_fn=exact_flow((1.5, -0.5)))
    assert np.max(res.errors_px(tips)) < 0.1
    assert res.estimates[0] == pytest.approx(p0.expectation())


def test_determinism_and_online_equivalence():
    frames, tips = translating_sequence(8)
    prov = SyntheticDetector(tips, SyntheticDetectorConfig(p_distractor=0.5, seed=2))
    p0 = gaussian_map(tips[0], 4, 96, 96)
    params = FilterParams(n_samples=300, seed=9)
    a = track(frames, prov, p0, filter_params=params, keep_particles=True)
    b = track(frames, prov, p0, filter_params=params, keep_particles=True)
    online = Tracker(prov, p0, params=params)
    streamed = np.array([tuple(online.step(f)) for f in frames])
    assert a.estimates.tobytes() == b.estimates.tobytes() == streamed.tobytes()
    assert a.entropy.tobytes() == online.result().entropy.tobytes()
    assert all(np.array_equal(x.positions, y.positions) for x, y in zip(a.snapshots, b.snapshots))


def test_provider_shape_mismatch_is_pipeline_error():
    frames, tips = translating_sequence(3)
    bad = lambda frame, k: gaussian_map((5, 5), 2, 32, 32)
    with pytest.raises(PipelineError):
        track(frames, bad, gaussian_map(tips[0], 4, 96, 96))
    with pytest.raises(PipelineError):
        track(frames, bad, gaussian_map(tips[0], 4, 32, 32))


def test_timings_recorded():
    frames, tips = translating_sequence(4)
    tr = Tracker(SyntheticDetector(tips, SyntheticDetectorConfig.noiseless()), gaussian_map(tips[0], 4, 96, 96))
    for f in frames:
        tr.step(f)
    t = np.array(tr.timings)
    assert t.shape == (4, 3)
    assert np.all(t[:, 2] >= t[:, :2].max(axis=1))


@pytest.mark.parametrize("kw", [dict(n_samples=0), dict(sigma_v=-1), dict(n_samples=2.5),
                                dict(flow_roi_margin=-3)])
def test_params_validation(kw):
    with pytest.raises(InvalidParameterError):
        FilterParams(**kw)


def test_roi_around():
    roi = roi_around(np.array([[100.0, 120.0], [110.0, 125.0]]), 32, (256, 256))
    x0, y0, x1, y1 = roi
    assert x0 <= 100 - 32 and x1 >= 111 + 32 and x1 - x0 >= 128 and y1 - y0 >= 128
    assert roi_around(np.array([[1.0, 1.0]]), 32, (256, 256))[:2] == (0, 0)
    assert roi_around(np.array([[50.0, 50.0]]), 500, (100, 80)) == (0, 0, 80, 100)


# --- baselines ----------------------------------------------------------------

def test_static_sequence_baselines_return_start():
    img = smooth_texture(96, 96, seed=3)
    frames = [Frame(img.copy()) for _ in range(5)]
    tip = (48.0, 40.0)
    det = SyntheticDetector(np.tile(tip, (5, 1)), SyntheticDetectorConfig.noiseless())
    for res in (baseline_of_pre(frames, tip), baseline_of_first(frames, tip)):
        assert np.allclose(res.estimates, tip, atol=1e-3)
    assert np.array_equal(baseline_detect(frames, det).estimates, np.tile(tip, (5, 1)))
    pf = track(frames, det, gaussian_map(tip, 4, 96, 96), filter_params=FilterParams(seed=0))
    assert np.all(pf.errors_px(np.tile(tip, (5, 1))) < 0.5)


def test_of_pre_accumulates_bias():
    frames = [Frame(np.zeros((32, 32))) for _ in range(20)]
    b = 0.1
    biased = lambda prev, nxt: MotionField.constant(b, 0.0, 32, 32)
    res = baseline_of_pre(frames, (10.0, 10.0), flow_fn=biased)
    assert np.allclose(res.estimates[:, 0] - 10.0, b * np.arange(20), atol=1e-12)
    first = baseline_of_first(frames, (10.0, 10.0), flow_fn=biased)
    assert np.allclose(first.estimates[1:, 0] - 10.0, b, atol=1e-12)


def test_detect_spikes_only_on_dropout_frames():
    n = 200
    tips = np.column_stack([np.full(n, 128.0), np.full(n, 128.0)])
    det = SyntheticDetector(tips, SyntheticDetectorConfig(p_distractor=0.0, p_dropout=0.1, seed=4))
    frames = [Frame(np.zeros((256, 256)), 1.0, k) for k in range(n)]
    err = baseline_detect(frames, det).errors_px(tips)
    spikes = set(np.flatnonzero(err > 5).tolist())
    assert spikes == set(det.dropout_frames())
    assert len(spikes) > 0
