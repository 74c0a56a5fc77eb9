import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advpc.core import (
    CloudFormatError,
    PointCloud,
    ShapeSpec,
    generate_shape,
    jitter,
    load_cloud,
    make_dataset,
    make_rng,
    normalize_unit_cube,
    parse_cloud,
    random_scale,
    save_cloud,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
clouds = arrays(np.float64, st.tuples(st.integers(2, 20), st.just(3)), elements=finite)


def test_pointcloud_rejects_non_finite():
    with pytest.raises(ValueError):
        PointCloud([[0.0, np.nan, 0.0]])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))


def test_pointcloud_is_immutable():
    c = PointCloud([[0.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_normalize_two_points():
    c = normalize_unit_cube(PointCloud([[0, 0, 0], [2, 0, 0]], label=3))
    np.testing.assert_array_equal(c.points, [[-0.5, 0, 0], [0.5, 0, 0]])
    assert c.label == 3


def test_normalize_already_unit_is_identity():
    pts = make_rng(0).uniform(-0.5, 0.5, size=(30, 3))
    pts[0] = [-0.5, -0.5, -0.5]
    pts[1] = [0.5, 0.5, 0.5]
    c = PointCloud(pts)
    assert normalize_unit_cube(c) == c


def test_normalize_random_bbox():
    c = normalize_unit_cube(PointCloud(make_rng(1).normal(size=(50, 3)) * 3 + 7))
    sides = c.points.max(axis=0) - c.points.min(axis=0)
    assert abs(sides.max() - 1.0) <= 1e-9
    center = (c.points.max(axis=0) + c.points.min(axis=0)) / 2
    np.testing.assert_allclose(center, 0.0, atol=1e-12)


def test_normalize_zero_extent():
    with pytest.raises(ValueError, match="zero extent"):
        normalize_unit_cube(PointCloud([[1, 2, 3], [1, 2, 3]]))


@settings(max_examples=100, deadline=None)
@given(clouds)
def test_normalize_idempotent(pts):
    c = PointCloud(pts)
    if np.ptp(pts, axis=0).max() == 0:
        return
    once = normalize_unit_cube(c)
    assert normalize_unit_cube(once) == once
    assert np.all(np.abs(once.points) <= 0.5 + 1e-9)


def test_jitter_contract():
    c = generate_shape(ShapeSpec("sphere", 64, 1))
    assert jitter(c, sigma=0.0, seed=3) == c
    j = jitter(c, sigma=0.01, clip=0.02, seed=3)
    assert np.max(np.abs(j.points - c.points)) <= 0.02 + 1e-15
    assert jitter(c, 0.01, 0.02, seed=3) == j
    assert jitter(c, 0.01, 0.02, seed=4) != j


def test_random_scale_contract():
    c = PointCloud([[0.1, 0.0, 0.0], [0.0, 0.2, 0.0]])
    assert random_scale(c, 1, 1, seed=0) == c
    np.testing.assert_array_equal(random_scale(c, 2, 2, seed=0).points[0], [0.2, 0, 0])
    with pytest.raises(ValueError):
        random_scale(c, 0, 1)
    s = generate_shape(ShapeSpec("cube", 64, 2))
    for seed in range(10):
        ratio = random_scale(s, 0.9, 1.1, seed).bbox_sides().max() / s.bbox_sides().max()
        assert 0.9 <= ratio <= 1.1


def test_sphere_radius():
    c = generate_shape(ShapeSpec("sphere", 256, 7))
    np.testing.assert_allclose(np.linalg.norm(c.points, axis=1), 0.5, atol=1e-9)
    assert c.label == 0


def test_cube_on_faces():
    c = generate_shape(ShapeSpec("cube", 256, 7))
    assert np.all(np.max(np.abs(c.points), axis=1) >= 0.5 - 1e-9)
    assert np.all(np.abs(c.points) <= 0.5 + 1e-9)


def test_cylinder_and_torus_surfaces():
    cyl = generate_shape(ShapeSpec("cylinder", 256, 3)).points
    r = np.linalg.norm(cyl[:, :2], axis=1)
    on_side = np.isclose(r, 0.5, atol=1e-9)
    on_cap = np.isclose(np.abs(cyl[:, 2]), 0.5, atol=1e-9) & (r <= 0.5 + 1e-9)
    assert np.all(on_side | on_cap)
    tor = generate_shape(ShapeSpec("torus", 256, 3)).points
    ring = np.linalg.norm(tor[:, :2], axis=1)
    np.testing.assert_allclose((ring - 0.35) ** 2 + tor[:, 2] ** 2, 0.15**2, atol=1e-9)


def test_generate_deterministic_and_validated():
    spec = ShapeSpec("torus", 64, 11)
    assert generate_shape(spec) == generate_shape(spec)
    with pytest.raises(ValueError):
        generate_shape(ShapeSpec("pyramid", 64, 0))
    with pytest.raises(ValueError):
        ShapeSpec("sphere", 7, 0)


def test_dataset_balanced():
    ds = make_dataset(3, 32, seed=0)
    assert [c.label for c in ds] == [0, 1, 2, 3] * 3
    assert len({c.id for c in ds}) == 12


@settings(max_examples=50, deadline=None)
@given(clouds, st.one_of(st.none(), st.integers(0, 39)))
def test_file_round_trip_bitwise(tmp_path_factory, pts, label):
    path = tmp_path_factory.mktemp("io") / "c.pcd.txt"
    c = PointCloud(pts, label=label)
    loaded = load_cloud(save_cloud(path, c))
    assert loaded == c
    assert loaded.id == "c"


def test_parse_errors():
    with pytest.raises(CloudFormatError, match="10 points"):
        parse_cloud("pcd 10 -\n" + "0 0 0\n" * 9)
    with pytest.raises(CloudFormatError, match="line 3"):
        parse_cloud("pcd 2 1\n0 0 0\nnan 0 0\n")
    with pytest.raises(CloudFormatError, match="line 2"):
        parse_cloud("pcd 1 1\n0 0 zero\n")
    with pytest.raises(CloudFormatError, match="line 1"):
        parse_cloud("ply 1 1\n0 0 0\n")
