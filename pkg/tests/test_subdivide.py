import warnings

import numpy as np
import pytest

from nmc.mesh import Mesh, MeshError
from nmc.simplify import qslim_decimate_with_ssp
from nmc.subdivide import (
    bake_training_set,
    displaced_mesh,
    inference_set,
    midpoint_subdivide,
    ssp_gt_quality,
    vertex_adjacency,
)
from nmc.synth import cube, grid, icosphere


def strip_mesh(n_quads: int) -> Mesh:
    """A 1 x n strip of quads split into 2n triangles."""
    top = np.stack([np.arange(n_quads + 1), np.ones(n_quads + 1), np.zeros(n_quads + 1)], 1)
    bot = np.stack([np.arange(n_quads + 1), np.zeros(n_quads + 1), np.zeros(n_quads + 1)], 1)
    v = np.vstack([bot, top])
    faces = []
    for i in range(n_quads):
        a, b = i, i + 1
        c, d = n_quads + 1 + i, n_quads + 2 + i
        faces.append([a, b, d])
        faces.append([a, d, c])
    return Mesh(v, np.array(faces))


def test_s0_identity(unit_cube):
    sub = midpoint_subdivide(unit_cube, 0)
    assert np.array_equal(sub.mesh.vertices, unit_cube.vertices)
    assert np.array_equal(sub.mesh.faces, unit_cube.faces)
    for i in range(unit_cube.n_vertices):
        p = sub.provenance(i)
        assert np.allclose(p.position(unit_cube), unit_cube.vertices[i], atol=1e-12)


def test_single_triangle_one_level(single_triangle):
    sub = midpoint_subdivide(single_triangle, 1)
    assert sub.mesh.n_faces == 4
    assert sub.mesh.n_vertices == 6


def test_face_count_law_100_faces():
    m = strip_mesh(50)
    assert m.n_faces == 100
    sub = midpoint_subdivide(m, 2)
    assert sub.mesh.n_faces == 1600


@pytest.mark.parametrize("s", range(4))
def test_face_count_law_and_determinism(s, unit_cube):
    sub1 = midpoint_subdivide(unit_cube, s)
    sub2 = midpoint_subdivide(unit_cube, s)
    assert sub1.mesh.n_faces == 4**s * unit_cube.n_faces
    assert np.array_equal(sub1.mesh.vertices, sub2.mesh.vertices)
    assert np.array_equal(sub1.mesh.faces, sub2.mesh.faces)
    assert np.array_equal(sub1.provenance_faces, sub2.provenance_faces)
    assert np.array_equal(sub1.provenance_bary, sub2.provenance_bary)


def test_coarse_vertices_unmoved(small_sphere):
    sub = midpoint_subdivide(small_sphere, 2)
    assert np.array_equal(
        sub.mesh.vertices[: small_sphere.n_vertices], small_sphere.vertices
    )


def test_provenance_reproduces_positions(small_sphere):
    sub = midpoint_subdivide(small_sphere, 2)
    tri = small_sphere.vertices[small_sphere.faces[sub.provenance_faces]]
    pos = np.einsum("nj,njk->nk", sub.provenance_bary, tri)
    assert np.abs(pos - sub.mesh.vertices).max() < 1e-7


def test_negative_level_rejected(unit_cube):
    with pytest.raises(ValueError):
        midpoint_subdivide(unit_cube, -1)


# -- adjacency ----------------------------------------------------------------

def test_adjacency_symmetric_and_positive(small_sphere):
    sub = midpoint_subdivide(small_sphere, 1)
    starts, counts, indices, elens = vertex_adjacency(sub.mesh)
    assert counts.sum() == len(indices)
    assert (elens > 0).all()
    pairs = set()
    for i in range(sub.mesh.n_vertices):
        for j in indices[starts[i] : starts[i] + counts[i]]:
            pairs.add((i, int(j)))
    for i, j in pairs:
        assert (j, i) in pairs
    # edge lengths match Euclidean distances on the undisplaced mesh
    v = sub.mesh.vertices
    for i in (0, 5, len(counts) - 1):
        for k in range(counts[i]):
            j = indices[starts[i] + k]
            assert elens[starts[i] + k] == pytest.approx(
                np.linalg.norm(v[i] - v[j])
            )


# -- baking --------------------------------------------------------------------

def test_bake_identity_targets_zero(small_sphere):
    coarse, sm = qslim_decimate_with_ssp(small_sphere, small_sphere.n_vertices)
    sub = midpoint_subdivide(coarse, 1)
    tset = bake_training_set(sub, sm)
    assert np.abs(tset.targets).max() < 1e-12
    assert len(tset) == sub.mesh.n_vertices


def test_bake_plane_restores_height():
    g = grid(12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        coarse, sm = qslim_decimate_with_ssp(g, 60)
    sub = midpoint_subdivide(coarse, 2)
    tset = bake_training_set(sub, sm)
    displaced = sub.mesh.vertices + tset.targets
    assert np.abs(displaced[:, 2]).max() < 1e-6


def test_bake_mesh_mismatch_rejected(small_sphere):
    coarse, sm = qslim_decimate_with_ssp(small_sphere, 80)
    other = midpoint_subdivide(icosphere(1), 1)
    with pytest.raises(MeshError, match="different coarse"):
        bake_training_set(other, sm)


def test_ssp_gt_identity_is_zero(small_sphere):
    coarse, sm = qslim_decimate_with_ssp(small_sphere, small_sphere.n_vertices)
    sub = midpoint_subdivide(coarse, 1)
    tset = bake_training_set(sub, sm)
    report = ssp_gt_quality(sub, tset, small_sphere, n=2000, seed=0)
    # the displaced subdivided mesh lies exactly on the original faceted surface
    assert report.d_pm < 1e-9


def test_displaced_mesh_helper(small_sphere):
    coarse, sm = qslim_decimate_with_ssp(small_sphere, 80)
    sub = midpoint_subdivide(coarse, 1)
    tset = bake_training_set(sub, sm)
    d = displaced_mesh(sub, tset)
    assert np.array_equal(d.faces, sub.mesh.faces)
    assert np.allclose(d.vertices, sub.mesh.vertices + tset.targets)


def test_inference_set_matches_training_adjacency(small_sphere):
    sub = midpoint_subdivide(small_sphere, 1)
    inf = inference_set(sub.mesh)
    assert np.abs(inf.targets).max() == 0.0
    starts, counts, indices, elens = vertex_adjacency(sub.mesh)
    assert np.array_equal(inf.nbr_starts, starts)
    assert np.array_equal(inf.nbr_indices, indices)
    assert np.array_equal(inf.nbr_elens, elens)


def test_training_set_cache_roundtrip(tmp_path, small_sphere):
    from nmc.subdivide import (
        load_training_set_cache,
        save_training_set_cache,
        training_set_cache_key,
    )

    coarse, sm = qslim_decimate_with_ssp(small_sphere, 80)
    sub = midpoint_subdivide(coarse, 1)
    tset = bake_training_set(sub, sm)
    key = training_set_cache_key(small_sphere, 80, 1)
    path = tmp_path / "bake.npz"
    save_training_set_cache(path, tset, key)
    back = load_training_set_cache(path, key)
    assert back is not None
    assert np.array_equal(back.inputs, tset.inputs)
    assert np.array_equal(back.targets, tset.targets)
    assert np.array_equal(back.nbr_indices, tset.nbr_indices)
    # different settings produce a different key and miss the cache
    assert load_training_set_cache(path, training_set_cache_key(small_sphere, 81, 1)) is None
    assert load_training_set_cache(tmp_path / "absent.npz", key) is None


def test_collapse_record_dump(tmp_path, small_sphere):
    import json

    from nmc.simplify import dump_collapse_records

    _, sm = qslim_decimate_with_ssp(small_sphere, 100)
    path = tmp_path / "records.jsonl"
    dump_collapse_records(sm, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == len(sm.records)
    first = json.loads(lines[0])
    assert first["boundary_area_gap"] < 1e-9
    assert len(first["edge"]) == 2
