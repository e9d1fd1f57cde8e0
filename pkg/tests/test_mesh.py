import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmc.mesh import (
    Mesh,
    MeshError,
    degenerate_faces,
    face_area_and_normal,
    normalize_unit_bbox,
    raw_size_bits,
    raw_size_bytes,
    validate_edge_manifold,
)
from nmc.synth import box, cube, icosphere


def test_cube_counts(unit_cube):
    assert unit_cube.n_vertices == 8
    assert unit_cube.n_faces == 12
    assert len(unit_cube.edges) == 18
    assert unit_cube.euler_characteristic() == 2


def test_out_of_range_face_index():
    with pytest.raises(MeshError, match="out of range"):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    with pytest.raises(MeshError, match="out of range"):
        Mesh(np.zeros((3, 3)), np.array([[-1, 1, 2]]))


def test_repeated_vertex_index_rejected():
    with pytest.raises(MeshError, match="repeats"):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))


def test_non_finite_vertices_rejected():
    v = np.zeros((3, 3))
    v[1, 2] = np.nan
    with pytest.raises(MeshError, match="non-finite"):
        Mesh(v, np.array([[0, 1, 2]]))


def test_adjacency_consistent_with_rebuild(small_sphere):
    rebuilt = Mesh(small_sphere.vertices.copy(), small_sphere.faces.copy())
    assert np.array_equal(small_sphere.edges, rebuilt.edges)
    for a, b in zip(small_sphere.vertex_neighbors, rebuilt.vertex_neighbors):
        assert np.array_equal(a, b)
    for a, b in zip(small_sphere.vertex_faces, rebuilt.vertex_faces):
        assert np.array_equal(a, b)


# -- normalization -----------------------------------------------------------

def test_normalize_cube_edge2():
    m, t = normalize_unit_bbox(cube(edge=2.0))
    lo, hi = m.bbox()
    assert np.allclose(hi - lo, [1, 1, 1])
    assert t.scale == pytest.approx(0.5)


def test_normalize_already_unit(unit_cube):
    m, t = normalize_unit_bbox(unit_cube)
    assert t.scale == pytest.approx(1.0)
    assert np.allclose(t.translation, [0, 0, 0])
    assert np.array_equal(m.vertices, unit_cube.vertices)


def test_normalize_box_4_2_1():
    m, t = normalize_unit_bbox(box(4.0, 2.0, 1.0))
    lo, hi = m.bbox()
    assert np.allclose(hi - lo, [1.0, 0.5, 0.25])
    assert abs((hi - lo).max() - 1.0) < 1e-9


def test_normalize_zero_extent():
    m = Mesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(MeshError, match="zero-extent"):
        normalize_unit_bbox(m)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)
        ),
        min_size=3,
        max_size=20,
    )
)
def test_normalize_roundtrip_property(points):
    v = np.array(points)
    if (v.max(axis=0) - v.min(axis=0)).max() <= 1e-9:
        return
    m = Mesh(v, np.zeros((0, 3), dtype=np.int64))
    normed, t = normalize_unit_bbox(m)
    lo, hi = normed.bbox()
    assert abs((hi - lo).max() - 1.0) < 1e-9
    back = t.invert(normed.vertices)
    assert np.abs(back - v).max() < 1e-6


# -- manifold report ---------------------------------------------------------

def test_closed_sphere_is_manifold(small_sphere):
    rep = validate_edge_manifold(small_sphere)
    assert rep.is_edge_manifold
    assert rep.boundary_edges == []


def test_three_triangles_sharing_an_edge():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, -1, 0]], dtype=float)
    f = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    rep = validate_edge_manifold(Mesh(v, f))
    assert not rep.is_edge_manifold
    assert rep.non_manifold_edges == [(0, 1)]


def test_single_triangle_boundary(single_triangle):
    rep = validate_edge_manifold(single_triangle)
    assert rep.is_edge_manifold
    assert len(rep.boundary_edges) == 3


# -- raw size ----------------------------------------------------------------

def test_raw_size_cube(unit_cube):
    assert raw_size_bits(unit_cube) == pytest.approx(876.0)
    assert raw_size_bytes(unit_cube) == math.ceil(876 / 8)


def test_raw_size_single_vertex():
    m = Mesh(np.zeros((1, 3)), np.zeros((0, 3), dtype=np.int64))
    assert raw_size_bits(m) == pytest.approx(96.0)


def test_raw_size_1024_2048():
    v = np.random.default_rng(0).normal(size=(1024, 3))
    f = np.stack([np.arange(2048) % 1024,
                  (np.arange(2048) + 1) % 1024,
                  (np.arange(2048) + 2) % 1024], axis=1)
    m = Mesh(v, f)
    assert raw_size_bits(m) == pytest.approx(98304 + 61440)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10_000), st.integers(0, 10_000), st.integers(1, 100), st.integers(1, 100))
def test_raw_size_monotone(v, f, dv, df):
    def bits(nv, nf):
        return 32.0 * 3 * nv + 3.0 * nf * math.log2(nv)

    assert bits(v + dv, f) > bits(v, f)
    assert bits(v, f + df) > bits(v, f)


# -- face geometry -----------------------------------------------------------

def test_face_area_and_normal(single_triangle):
    area, normal = face_area_and_normal(single_triangle, 0)
    assert area == pytest.approx(0.5)
    assert np.allclose(normal, [0, 0, 1])


def test_face_normal_reversed_winding():
    m = Mesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 2, 1]]),
    )
    _, normal = face_area_and_normal(m, 0)
    assert np.allclose(normal, [0, 0, -1])


def test_face_degenerate_collinear():
    m = Mesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]),
        np.array([[0, 1, 2]]),
    )
    area, normal = face_area_and_normal(m, 0)
    assert area == 0.0
    assert np.allclose(normal, 0.0)
    assert list(degenerate_faces(m)) == [0]


def test_face_index_out_of_range(single_triangle):
    with pytest.raises(IndexError):
        face_area_and_normal(single_triangle, 5)


def test_connected_components():
    assert icosphere(1).connected_component_count() == 1
    two = Mesh(
        np.vstack([icosphere(0).vertices, icosphere(0).vertices + 5.0]),
        np.vstack([icosphere(0).faces, icosphere(0).faces + icosphere(0).n_vertices]),
    )
    assert two.connected_component_count() == 2
