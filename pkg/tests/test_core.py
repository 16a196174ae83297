import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roadpf.core import (Frame, MotionField, ParticleSet, PixelSpacing, Polyline, ProbabilityMap,
                         SegmentationMap, TipState, bilinear_sample, bilinear_sample_many,
                         gaussian_map, minmax_rescale, resample_frame)
from roadpf.errors import InvalidInputError, InvalidParameterError


def test_bilinear_exact_at_nodes():
    grid = np.arange(20.0).reshape(4, 5)
    for y in range(4):
        for x in range(5):
            assert bilinear_sample(grid, (x, y)) == grid[y, x]


def test_bilinear_midpoint():
    grid = np.zeros((3, 3))
    grid[1, 0], grid[1, 1] = 0.2, 0.4
    assert bilinear_sample(grid, (0.5, 1.0)) == pytest.approx(0.3, abs=1e-15)


@pytest.mark.parametrize("p", [(-5, -5), (-0.01, 1), (1, 2.001), (4.5, 0)])
def test_bilinear_out_of_bounds_is_zero(p):
    grid = np.ones((3, 3))
    assert bilinear_sample(grid, p) == 0.0


def test_bilinear_last_row_and_column_are_inside():
    grid = np.arange(9.0).reshape(3, 3)
    assert bilinear_sample(grid, (2.0, 2.0)) == 8.0
    assert bilinear_sample(grid, (2.0, 1.5)) == pytest.approx(6.5)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 6), st.floats(0, 4), st.floats(-1e-3, 1e-3), st.floats(-1e-3, 1e-3))
def test_bilinear_continuous(x, y, ex, ey):
    rng = np.random.default_rng(1)
    grid = rng.random((5, 7))
    x2, y2 = np.clip(x + ex, 0, 6), np.clip(y + ey, 0, 4)
    # gradient of a bilinear patch is bounded by the largest neighbour difference (< 1)
    assert abs(bilinear_sample(grid, (x, y)) - bilinear_sample(grid, (x2, y2))) <= 2 * (abs(ex) + abs(ey)) + 1e-12


def test_bilinear_many_matches_scalar():
    rng = np.random.default_rng(2)
    grid = rng.random((10, 12))
    pts = rng.uniform(-2, 13, size=(200, 2))
    many = bilinear_sample_many(grid, pts)
    assert np.array_equal(many, [bilinear_sample(grid, p) for p in pts])


def test_gaussian_map_center_and_sum():
    g = gaussian_map((128, 128), 4, 256, 256)
    assert g.values.sum() == pytest.approx(1.0, abs=1e-12)
    r, c = np.unravel_index(np.argmax(g.values), g.shape)
    assert (c, r) == (128, 128)


def test_gaussian_map_large_sigma_near_uniform():
    g = gaussian_map((1, 1), 1e6, 3, 3)
    assert g.values.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(g.values, 1 / 9, rtol=1e-9)


def test_gaussian_map_corner_still_normalised():
    g = gaussian_map((0, 0), 4, 64, 64)
    assert g.values.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.argmax(g.values) == 0


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_gaussian_map_rejects_bad_sigma(sigma):
    with pytest.raises(InvalidParameterError):
        gaussian_map((3, 3), sigma, 8, 8)


@settings(max_examples=80, deadline=None)
@given(st.floats(0, 39), st.floats(0, 29), st.floats(0.5, 10))
def test_gaussian_argmax_is_nearest_node(cx, cy, sigma):
    g = gaussian_map((cx, cy), sigma, 40, 30)
    assert g.values.min() >= 0
    assert abs(g.values.sum() - 1) < 1e-6
    r, c = np.unravel_index(np.argmax(g.values), g.shape)
    # nearest node; at exact half-pixel ties the smaller index wins
    assert abs(c - cx) <= 0.5 and abs(r - cy) <= 0.5
    if cx - np.floor(cx) == 0.5:
        assert c == np.floor(cx)


def test_resample_spacing_ratio():
    f = Frame(np.random.default_rng(0).random((512, 512)), 0.216)
    out = resample_frame(f, 256)
    assert out.shape == (256, 256)
    assert out.pixel_spacing == pytest.approx(0.432)


def test_resample_identity_up_to_rescale():
    img = np.random.default_rng(3).random((256, 256)) * 0.5 + 0.2
    out = resample_frame(Frame(img, 0.3), 256)
    assert np.allclose(out.pixels, minmax_rescale(img), atol=1e-12)
    assert out.pixel_spacing == 0.3


def test_resample_checkerboard_range():
    yy, xx = np.mgrid[:1024, :1024]
    board = (((yy // 64) + (xx // 64)) % 2).astype(float)
    out = resample_frame(Frame(board, 0.1), 256)
    assert out.shape == (256, 256)
    assert out.pixels.min() == 0.0 and out.pixels.max() == 1.0


def test_resample_constant_maps_to_zero():
    out = resample_frame(Frame(np.full((10, 10), 0.7)), 5)
    assert np.all(out.pixels == 0)


def test_resample_rejects_tiny_source():
    with pytest.raises(InvalidInputError):
        resample_frame(Frame(np.zeros((1, 5))), 4)


def test_frame_validation():
    with pytest.raises(InvalidInputError):
        Frame(np.array([[1.5]]))
    with pytest.raises(InvalidParameterError):
        Frame(np.zeros((2, 2)), pixel_spacing=0)
    with pytest.raises(InvalidInputError):
        Frame(np.zeros(4))


def test_probability_map_validation():
    with pytest.raises(InvalidInputError):
        ProbabilityMap(np.array([[0.5, 0.6]]))
    with pytest.raises(InvalidInputError):
        ProbabilityMap(np.array([[1.5, -0.5]]))
    pm = ProbabilityMap.normalized(np.array([[1.0, 3.0]]))
    assert np.allclose(pm.values, [[0.25, 0.75]])
    assert pm.expectation() == pytest.approx((0.75, 0.0))


def test_segmentation_map_range():
    SegmentationMap(np.array([[0.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        SegmentationMap(np.array([[1.2]]))


def test_motion_field_validation():
    with pytest.raises(InvalidInputError):
        MotionField(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(InvalidInputError):
        MotionField(np.full((2, 2), np.nan), np.zeros((2, 2)))
    c = MotionField.constant(2, -1, 4, 3)
    assert c.shape == (3, 4) and np.all(c.du == 2) and np.all(c.dv == -1)


def test_particle_set_validation():
    ps = ParticleSet(np.zeros((3, 2)), np.full(3, 1 / 3))
    assert len(ps) == 3
    with pytest.raises(InvalidInputError):
        ParticleSet(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(InvalidInputError):
        ParticleSet(np.zeros((2, 2)), np.array([-0.5, 1.5]))


def test_polyline_validation_and_length():
    line = Polyline([[0, 0], [3, 4], [3, 5]])
    assert line.length() == pytest.approx(6.0)
    assert np.allclose(line.translated((1, 1)).points[0], (1, 1))
    with pytest.raises(InvalidInputError):
        Polyline([[0, 0]])
    with pytest.raises(InvalidInputError):
        Polyline([[0, 0], [0, 0], [1, 1]])


def test_units():
    s = PixelSpacing(0.4)
    assert s.to_mm(10) == pytest.approx(4.0)
    assert s.to_px(s.to_mm(7.5)) == pytest.approx(7.5)
    with pytest.raises(InvalidParameterError):
        PixelSpacing(0)


def test_tip_in_bounds():
    assert TipState(0, 0).in_bounds(5, 5)
    assert not TipState(5, 0).in_bounds(5, 5)
    assert not TipState(-0.1, 2).in_bounds(5, 5)
