import warnings

import numpy as np
import pytest

from nmc.mesh import Mesh, validate_edge_manifold
from nmc.simplify import (
    CollapseRejected,
    DecimationState,
    NonManifoldMeshError,
    SurfacePoint,
    face_plane_quadric,
    flatten_collapse_neighborhood,
    qslim_decimate_with_ssp,
    quadric_error,
)
from nmc.synth import grid, icosphere


def sample_points(mesh, n, seed=0):
    rng = np.random.default_rng(seed)
    faces = rng.integers(mesh.n_faces, size=n)
    barys = rng.dirichlet([1.0, 1.0, 1.0], size=n)
    return faces, barys


# -- quadrics ----------------------------------------------------------------

def test_plane_quadric_positive_semidefinite():
    rng = np.random.default_rng(3)
    for _ in range(50):
        tri = rng.normal(size=(3, 3))
        q = face_plane_quadric(*tri)
        assert np.allclose(q, q.T)
        eig = np.linalg.eigvalsh(q)
        assert eig.min() > -1e-10


def test_quadric_error_zero_on_plane():
    tri = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    q = face_plane_quadric(*tri)
    assert quadric_error(q, [0.3, 0.3, 0.0]) == pytest.approx(0.0, abs=1e-15)
    # area-weighted: area * dist^2
    assert quadric_error(q, [0.0, 0.0, 2.0]) == pytest.approx(0.5 * 4.0)


def test_quadric_additive_under_contraction():
    tri1 = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    tri2 = np.array([[0.0, 0, 0], [0, 1, 0], [0, 0, 1]])
    q = face_plane_quadric(*tri1) + face_plane_quadric(*tri2)
    p = [0.5, 0.5, 0.5]
    expected = quadric_error(face_plane_quadric(*tri1), p) + quadric_error(
        face_plane_quadric(*tri2), p
    )
    assert quadric_error(q, p) == pytest.approx(expected)


# -- surface points ----------------------------------------------------------

def test_surface_point_validation():
    SurfacePoint(0, (0.2, 0.3, 0.5))
    with pytest.raises(ValueError):
        SurfacePoint(0, (-0.1, 0.6, 0.5))
    with pytest.raises(ValueError):
        SurfacePoint(0, (0.5, 0.5, 0.5))


# -- identity map ------------------------------------------------------------

def test_identity_map(small_sphere):
    coarse, m = qslim_decimate_with_ssp(small_sphere, small_sphere.n_vertices)
    assert len(m.records) == 0
    assert coarse.n_vertices == small_sphere.n_vertices
    p = SurfacePoint(5, (0.25, 0.5, 0.25))
    assert np.allclose(m.map_point(p), p.position(coarse), atol=0)
    assert np.allclose(m.displacement(p), 0.0, atol=0)


# -- chart construction ------------------------------------------------------

def hexagonal_patch():
    # two interior vertices (0, 1) ringed by six boundary vertices
    v = np.array(
        [
            [-0.5, 0.0, 0.0],   # 0 = u
            [0.5, 0.0, 0.0],    # 1 = v
            [0.0, 1.0, 0.1],    # 2 wing
            [0.0, -1.0, 0.1],   # 3 wing
            [-1.5, 0.8, 0.0],   # 4
            [-1.5, -0.8, 0.0],  # 5
            [1.5, 0.8, 0.0],    # 6
            [1.5, -0.8, 0.0],   # 7
        ]
    )
    f = np.array(
        [
            [0, 1, 2], [0, 3, 1],
            [0, 2, 4], [0, 4, 5], [0, 5, 3],
            [1, 6, 2], [1, 7, 6], [1, 3, 7],
        ]
    )
    return Mesh(v, f)


def test_flatten_hexagonal_ring_collapse():
    state = DecimationState(hexagonal_patch())
    mid = 0.5 * (state.positions[0] + state.positions[1])
    rec = flatten_collapse_neighborhood(state, (0, 1), new_position=mid)
    assert rec.edge == (0, 1)
    # pre and post charts tile the same fixed boundary polygon
    assert rec.chart_boundary_area_gap() < 1e-9
    # all post triangles fan around the kept vertex
    for tri, uv in rec.post_tris:
        assert 0 in tri
        a, b, c = uv
        area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        assert area > 0.0


def test_sliver_patch_rejected():
    # wing vertex 2 coincides with interior vertex 1: zero-length boundary
    # segments make the flattened chart degenerate
    m = hexagonal_patch()
    v = m.vertices.copy()
    v[2] = v[6]
    state = DecimationState(Mesh(v, m.faces))
    with pytest.raises(CollapseRejected):
        flatten_collapse_neighborhood(state, (0, 1))


def test_normal_flip_rejected():
    state = DecimationState(hexagonal_patch())
    # placing the merged vertex far outside the ring folds surviving faces
    with pytest.raises(CollapseRejected, match="flip"):
        flatten_collapse_neighborhood(state, (0, 1), new_position=[5.0, 0.0, 0.0])


def test_boundary_edge_rejected():
    g = grid(4)
    state = DecimationState(g)
    rep = validate_edge_manifold(g)
    edge = rep.boundary_edges[0]
    with pytest.raises(CollapseRejected, match="boundary"):
        flatten_collapse_neighborhood(state, edge)


def test_boundary_vertex_rejected():
    g = grid(4)
    state = DecimationState(g)
    boundary = {v for e in validate_edge_manifold(g).boundary_edges for v in e}
    interior = [v for v in range(g.n_vertices) if v not in boundary]
    target = None
    for (a, b), cnt in g.edge_face_count.items():
        if cnt == 2 and (a in boundary) != (b in boundary):
            target = (a, b)
            break
    with pytest.raises(CollapseRejected, match="boundary"):
        flatten_collapse_neighborhood(state, target)


def test_non_manifold_input_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, -1, 0]], dtype=float)
    f = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    with pytest.raises(NonManifoldMeshError):
        qslim_decimate_with_ssp(Mesh(v, f), 3)


def test_first_collapse_is_cheapest():
    m = icosphere(1)
    state = DecimationState(m)
    costs = {}
    for (u, v) in state.current_edges():
        costs[(u, v)] = state.edge_cost(u, v)[0]
    best = min(costs.items(), key=lambda kv: (kv[1], kv[0]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, sm = qslim_decimate_with_ssp(m, m.n_vertices - 1)
    assert len(sm.records) == 1
    assert sm.records[0].edge == best[0]


# -- plane decimation --------------------------------------------------------

@pytest.fixture(scope="module")
def decimated_plane():
    g = grid(16)  # 289 vertices
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        coarse, sm = qslim_decimate_with_ssp(g, 80)
    return g, coarse, sm


def test_plane_images_stay_on_plane(decimated_plane):
    g, coarse, sm = decimated_plane
    faces, barys = sample_points(coarse, 3000)
    pts = sm.map_points(faces, barys)
    assert np.abs(pts[:, 2]).max() < 1e-6
    assert pts[:, 0].min() > -1e-9 and pts[:, 0].max() < 1 + 1e-9
    assert pts[:, 1].min() > -1e-9 and pts[:, 1].max() < 1 + 1e-9


def test_plane_displacements_consistent(decimated_plane):
    g, coarse, sm = decimated_plane
    faces, barys = sample_points(coarse, 500, seed=1)
    disp = sm.displacements(faces, barys)
    on_coarse = np.einsum(
        "nj,njk->nk", barys, coarse.vertices[coarse.faces[faces]]
    )
    images = sm.map_points(faces, barys)
    assert np.abs(on_coarse + disp - images).max() < 1e-12


def test_rejection_penalty_multiplier():
    m = icosphere(1)
    state = DecimationState(m)
    edge = tuple(int(x) for x in state.current_edges()[10])
    base, _ = state.edge_cost(*edge)
    state.rejections[edge] = 2
    penalized, _ = state.edge_cost(*edge)
    assert penalized == pytest.approx(base * 100.0)


def test_surviving_vertex_maps_to_itself(decimated_plane):
    g, coarse, sm = decimated_plane
    # corner vertex (0, 0, 0) is on the boundary, never collapsed
    idx = int(np.argmin(np.linalg.norm(coarse.vertices, axis=1)))
    assert np.linalg.norm(coarse.vertices[idx]) < 1e-12
    face = next(
        fi for fi, f in enumerate(coarse.faces) if idx in f
    )
    corner = int(np.nonzero(coarse.faces[face] == idx)[0][0])
    bary = [0.0, 0.0, 0.0]
    bary[corner] = 1.0
    p = SurfacePoint(face, tuple(bary))
    assert np.abs(sm.map_point(p) - coarse.vertices[idx]).max() < 1e-9


# -- sphere decimation -------------------------------------------------------

@pytest.fixture(scope="module")
def decimated_sphere():
    m = icosphere(3)  # 642 vertices
    coarse, sm = qslim_decimate_with_ssp(m, 200)
    return m, coarse, sm


def test_sphere_topology_preserved(decimated_sphere):
    m, coarse, sm = decimated_sphere
    assert coarse.n_vertices == 200
    assert coarse.euler_characteristic() == 2
    assert validate_edge_manifold(coarse).is_edge_manifold
    assert not sm.stopped_early


def test_sphere_images_on_original_surface(decimated_sphere):
    from nmc.metrics import SpatialIndex

    m, coarse, sm = decimated_sphere
    faces, barys = sample_points(coarse, 3000)
    pts = sm.map_points(faces, barys)
    dists, _, _ = SpatialIndex(m).closest_points(pts)
    assert dists.max() < 1e-6


def test_no_point_collapse_within_face(decimated_sphere):
    _, coarse, sm = decimated_sphere
    rng = np.random.default_rng(0)
    barys = rng.dirichlet([1, 1, 1], size=60)
    faces = np.zeros(60, dtype=np.int64)
    pts = sm.map_points(faces, barys)
    d = np.linalg.norm(pts[None, :, :] - pts[:, None, :], axis=2)
    np.fill_diagonal(d, np.inf)
    assert d.min() > 1e-12


def test_chart_boundary_polygon_identity(decimated_sphere):
    _, _, sm = decimated_sphere
    gaps = [rec.chart_boundary_area_gap() for rec in sm.records]
    assert max(gaps) < 1e-9


def test_decimation_deterministic():
    m = icosphere(2)
    a_coarse, a_map = qslim_decimate_with_ssp(m, 60)
    b_coarse, b_map = qslim_decimate_with_ssp(m, 60)
    assert np.array_equal(a_coarse.vertices, b_coarse.vertices)
    assert np.array_equal(a_coarse.faces, b_coarse.faces)
    faces, barys = sample_points(a_coarse, 500)
    assert np.array_equal(a_map.map_points(faces, barys), b_map.map_points(faces, barys))


def test_early_stop_warns():
    g = grid(6)
    with pytest.warns(UserWarning, match="stopped early"):
        coarse, sm = qslim_decimate_with_ssp(g, 3)
    assert sm.stopped_early
    assert coarse.n_vertices > 3
