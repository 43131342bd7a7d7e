import math
import time

import numpy as np
import pytest

from motioncrf.errors import NonPositiveBandwidth, ShapeMismatch, SizeGuardExceeded, UnsupportedFeatureDim
from motioncrf.filtering import (
    FeatureMap,
    GaussianOperator,
    KernelComponent,
    KernelSpec,
    PixelAxes,
    brute_force_filter,
    build_features,
    fast_filter,
    stack_features,
)
from motioncrf.grid import GridShape


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    return float(np.linalg.norm(approx - exact) / np.linalg.norm(exact))


def random_features(mode: str, shape: GridShape, rng: np.random.Generator) -> FeatureMap:
    if mode == "spatial":
        return build_features("spatial", shape, theta_spatial=3.0)
    if mode == "bilateral-intensity":
        image = rng.uniform(0, 255, (shape.height, shape.width, 3))
        return build_features(mode, shape, theta_spatial=5.0, theta_range=40.0, image=image)
    flow = rng.normal(0, 1.5, (shape.height, shape.width, 2))
    return build_features(mode, shape, theta_spatial=3.0, theta_range=1.0, flow=flow)


def test_single_pixel_gives_zero() -> None:
    features = build_features("spatial", GridShape(1, 1), theta_spatial=1.0)
    out = brute_force_filter(np.array([[3.0, -1.0]]), features, KernelSpec.single(2))
    np.testing.assert_array_equal(out, np.zeros((1, 2)))


def test_two_pixel_closed_forms() -> None:
    shape = GridShape(1, 2)
    values = np.array([[1.0, 2.0], [4.0, -3.0]])
    same = FeatureMap(shape, np.zeros((2, 2)))
    np.testing.assert_allclose(brute_force_filter(values, same, KernelSpec.single(2))[0], values[1])
    apart = FeatureMap(shape, np.array([[0.0, 0.0], [1.0, 0.0]]))
    out = brute_force_filter(values, apart, KernelSpec.single(2))
    np.testing.assert_allclose(out[0], math.exp(-0.5) * values[1], rtol=1e-12)
    assert out[0, 0] == pytest.approx(0.606531 * 4.0, rel=1e-6)


def test_brute_force_linearity_and_symmetry() -> None:
    rng = np.random.default_rng(5)
    shape = GridShape(6, 7)
    features = random_features("bilateral-intensity", shape, rng)
    kernel = KernelSpec((KernelComponent(0, 5, 1.0), KernelComponent(0, 2, 0.5)))
    u, v = rng.normal(size=(shape.size, 3)), rng.normal(size=(shape.size, 3))
    combined = brute_force_filter(2.0 * u - 0.5 * v, features, kernel)
    separate = 2.0 * brute_force_filter(u, features, kernel) - 0.5 * brute_force_filter(v, features, kernel)
    np.testing.assert_allclose(combined, separate, atol=1e-10)
    left = np.sum(u * brute_force_filter(v, features, kernel))
    right = np.sum(brute_force_filter(u, features, kernel) * v)
    assert left == pytest.approx(right, abs=1e-8)
    assert np.all(brute_force_filter(np.abs(u), features, kernel) >= 0)


def test_brute_force_guards() -> None:
    features = build_features("spatial", GridShape(2, 2), theta_spatial=1.0)
    with pytest.raises(ShapeMismatch):
        brute_force_filter(np.ones((3, 1)), features, KernelSpec.single(2))
    big = build_features("spatial", GridShape(129, 128), theta_spatial=1.0)
    with pytest.raises(SizeGuardExceeded):
        brute_force_filter(np.ones((big.shape.size, 1)), big, KernelSpec.single(2))


@pytest.mark.parametrize("mode", ["spatial", "bilateral-intensity", "flow-bilateral"])
def test_fast_filter_matches_oracle(mode: str) -> None:
    rng = np.random.default_rng(11)
    shape = GridShape(64, 64)
    features = random_features(mode, shape, rng)
    kernel = KernelSpec.single(features.dim)
    values = rng.random((shape.size, 5))
    exact = brute_force_filter(values, features, kernel)
    assert relative_error(fast_filter(values, features, kernel), exact) <= 1e-2


def test_fast_filter_constant_delta_and_zero() -> None:
    rng = np.random.default_rng(2)
    shape = GridShape(20, 24)
    features = random_features("flow-bilateral", shape, rng)
    kernel = KernelSpec((KernelComponent(0, 4, 1.0), KernelComponent(0, 2, 2.0)))
    operator = GaussianOperator(features, kernel)
    constant = np.full((shape.size, 1), 3.0)
    assert relative_error(operator.apply(constant), brute_force_filter(constant, features, kernel)) <= 1e-2
    delta = np.zeros((shape.size, 1))
    delta[137] = 1.0
    assert relative_error(operator.apply(delta), brute_force_filter(delta, features, kernel)) <= 1e-2
    np.testing.assert_array_equal(operator.apply(np.zeros((shape.size, 2))), 0.0)
    assert operator.methods == ("disc", "separable")


def test_fast_filter_linearity() -> None:
    rng = np.random.default_rng(8)
    shape = GridShape(16, 16)
    features = random_features("bilateral-intensity", shape, rng)
    operator = GaussianOperator(features, KernelSpec.single(5))
    u, v = rng.random((shape.size, 2)), rng.random((shape.size, 2))
    combined = operator.apply(u + 3.0 * v)
    separate = operator.apply(u) + 3.0 * operator.apply(v)
    assert relative_error(combined, separate) <= 1e-4


def test_fast_filter_rejects_wide_features() -> None:
    features = FeatureMap(GridShape(2, 2), np.zeros((4, 17)))
    with pytest.raises(UnsupportedFeatureDim):
        fast_filter(np.ones((4, 1)), features, KernelSpec.single(17))


def test_build_features_scaling() -> None:
    shape = GridShape(6, 5)
    pixel = shape.index(4, 3)
    np.testing.assert_allclose(build_features("spatial", shape, theta_spatial=1.0).features[pixel], (3.0, 4.0))
    np.testing.assert_allclose(build_features("spatial", shape, theta_spatial=2.0).features[pixel], (1.5, 2.0))
    gray = np.arange(30, dtype=np.float64).reshape(6, 5)
    bilateral = build_features("bilateral-intensity", shape, theta_spatial=1.0, theta_range=2.0, image=gray)
    assert bilateral.dim == 5
    np.testing.assert_allclose(bilateral.features[pixel, 2:], [gray[4, 3] / 2.0] * 3)
    flow = np.ones((6, 5, 2))
    assert build_features("flow-bilateral", shape, theta_spatial=1.0, theta_range=1.0, flow=flow).dim == 4
    with pytest.raises(NonPositiveBandwidth):
        build_features("spatial", shape, theta_spatial=0.0)
    with pytest.raises(NonPositiveBandwidth):
        build_features("flow-bilateral", shape, theta_spatial=1.0, theta_range=-1.0, flow=flow)


def test_stack_features_offsets() -> None:
    shape = GridShape(2, 3)
    a = build_features("spatial", shape, theta_spatial=1.0)
    b = build_features("flow-bilateral", shape, theta_spatial=1.0, theta_range=1.0, flow=np.zeros((2, 3, 2)))
    stacked, offsets = stack_features([a, b])
    assert stacked.dim == 6
    assert offsets == (0, 2)


def test_operator_methods_follow_pixel_axes() -> None:
    rng = np.random.default_rng(4)
    shape = GridShape(6, 8)
    spatial = random_features("spatial", shape, rng)
    bilateral = random_features("bilateral-intensity", shape, rng)
    assert GaussianOperator(spatial, KernelSpec.single(2)).methods == ("separable",)
    assert GaussianOperator(bilateral, KernelSpec.single(5)).methods == ("disc",)
    stacked, (_, second) = stack_features([bilateral, spatial])
    assert stacked.pixel_axes == (PixelAxes(0, 1, 5.0), PixelAxes(5, 6, 3.0))
    kernel = KernelSpec((KernelComponent(0, 5, 1.0), KernelComponent(second, 7, 0.5)))
    assert GaussianOperator(stacked, kernel).methods == ("disc", "separable")
    plain = FeatureMap(shape, stacked.features)
    assert GaussianOperator(plain, kernel).methods == ("pairs", "pairs")
    zero = KernelSpec((KernelComponent(0, 5, 0.0), KernelComponent(second, 7, 0.5)))
    assert GaussianOperator(stacked, zero).methods == ("separable",)


@pytest.mark.parametrize("mode", ["spatial", "bilateral-intensity", "flow-bilateral"])
def test_wide_bandwidth_matches_oracle(mode: str) -> None:
    rng = np.random.default_rng(21)
    shape = GridShape(24, 32)
    if mode == "spatial":
        features = build_features(mode, shape, theta_spatial=30.0)
    elif mode == "bilateral-intensity":
        image = rng.uniform(0, 255, (shape.height, shape.width, 3))
        features = build_features(mode, shape, theta_spatial=30.0, theta_range=40.0, image=image)
    else:
        flow = rng.normal(0, 1.5, (shape.height, shape.width, 2))
        features = build_features(mode, shape, theta_spatial=30.0, theta_range=1.0, flow=flow)
    kernel = KernelSpec.single(features.dim, 0.7)
    values = rng.random((shape.size, 3))
    exact = brute_force_filter(values, features, kernel)
    assert relative_error(fast_filter(values, features, kernel), exact) <= 1e-2


def test_features_without_pixel_axes_match_oracle() -> None:
    rng = np.random.default_rng(13)
    shape = GridShape(12, 12)
    features = FeatureMap(shape, rng.normal(0, 2.0, (shape.size, 3)))
    values = rng.random((shape.size, 2))
    exact = brute_force_filter(values, features, KernelSpec.single(3))
    assert relative_error(fast_filter(values, features, KernelSpec.single(3)), exact) <= 1e-2


def test_wide_spatial_filter_is_fast() -> None:
    shape = GridShape(96, 128)
    features = build_features("spatial", shape, theta_spatial=30.0)
    values = np.random.default_rng(1).random((shape.size, 2))
    started = time.perf_counter()
    out = fast_filter(values, features, KernelSpec.single(2))
    assert time.perf_counter() - started < 2.0
    assert out.shape == (shape.size, 2)
    assert np.all(out > 0)


def test_wide_bilateral_filter_is_fast() -> None:
    rng = np.random.default_rng(6)
    small = GridShape(4, 4)
    warm = build_features("bilateral-intensity", small, theta_spatial=1.0, theta_range=1.0, image=np.zeros((4, 4)))
    fast_filter(np.ones((small.size, 1)), warm, KernelSpec.single(5))

    shape = GridShape(96, 128)
    image = rng.uniform(0, 255, (shape.height, shape.width, 3))
    features = build_features("bilateral-intensity", shape, theta_spatial=30.0, theta_range=10.0, image=image)
    operator = GaussianOperator(features, KernelSpec.single(5))
    started = time.perf_counter()
    out = operator.apply(rng.random((shape.size, 2)))
    assert time.perf_counter() - started < 2.0
    assert np.all(np.isfinite(out))


def test_pixel_axes_must_hold_coordinates() -> None:
    shape = GridShape(3, 4)
    features = build_features("spatial", shape, theta_spatial=2.0)
    with pytest.raises(ShapeMismatch):
        FeatureMap(shape, features.features, (PixelAxes(0, 1, 3.0),))
    with pytest.raises(ShapeMismatch):
        FeatureMap(shape, features.features, (PixelAxes(0, 2, 2.0),))
    assert FeatureMap(shape, features.features, (PixelAxes(0, 1, 2.0),)).pixel_axes == features.pixel_axes
