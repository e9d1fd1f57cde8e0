"""Midpoint subdivision with coarse-surface provenance, plus training-set baking.

The subdivision is a deterministic function of (coarse mesh, level): vertex
order is coarse vertices first, then edge midpoints ranked by their sorted
parent-edge key, recursively per level. Encoder and decoder therefore rebuild
bit-identical subdivided meshes from the same coarse input, which is what lets
the decoder regenerate connectivity and model inputs without reading them from
the container.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, MeshError
from .simplify import SspMap, SurfacePoint


@dataclass
class SubdividedMesh:
    mesh: Mesh
    coarse: Mesh
    level: int
    provenance_faces: np.ndarray   # (N,) coarse face per subdivided vertex
    provenance_bary: np.ndarray    # (N, 3) barycentric coords in that coarse face

    def provenance(self, vertex: int) -> SurfacePoint:
        b = self.provenance_bary[vertex]
        return SurfacePoint(int(self.provenance_faces[vertex]), (b[0], b[1], b[2]))


def midpoint_subdivide(coarse: Mesh, s: int) -> SubdividedMesh:
    """Split every face into 4 by edge midpoints, ``s`` times."""
    if s < 0:
        raise ValueError("subdivision level must be >= 0")
    verts = coarse.vertices.copy()
    faces = coarse.faces.copy()
    n_faces = len(faces)
    owner = np.arange(n_faces, dtype=np.int64)
    corner_bary = np.broadcast_to(np.eye(3), (n_faces, 3, 3)).copy()

    for _ in range(s):
        f = len(faces)
        edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        edges.sort(axis=1)
        uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
        mid_ids = len(verts) + inverse.reshape(3, f)
        verts = np.vstack([verts, 0.5 * (verts[uniq[:, 0]] + verts[uniq[:, 1]])])

        a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
        mab, mbc, mca = mid_ids[0], mid_ids[1], mid_ids[2]
        new_faces = np.empty((4 * f, 3), dtype=np.int64)
        new_faces[0::4] = np.column_stack([a, mab, mca])
        new_faces[1::4] = np.column_stack([b, mbc, mab])
        new_faces[2::4] = np.column_stack([c, mca, mbc])
        new_faces[3::4] = np.column_stack([mab, mbc, mca])

        b0, b1, b2 = corner_bary[:, 0], corner_bary[:, 1], corner_bary[:, 2]
        m01 = 0.5 * (b0 + b1)
        m12 = 0.5 * (b1 + b2)
        m20 = 0.5 * (b2 + b0)
        new_bary = np.empty((4 * f, 3, 3))
        new_bary[0::4] = np.stack([b0, m01, m20], axis=1)
        new_bary[1::4] = np.stack([b1, m12, m01], axis=1)
        new_bary[2::4] = np.stack([b2, m20, m12], axis=1)
        new_bary[3::4] = np.stack([m01, m12, m20], axis=1)

        faces = new_faces
        owner = np.repeat(owner, 4)
        corner_bary = new_bary

    # provenance per vertex: first (face, corner) occurrence in scan order
    flat = faces.ravel()
    uniq_v, first = np.unique(flat, return_index=True)
    if len(uniq_v) != len(verts):
        raise MeshError("subdivision produced isolated vertices")
    prov_faces = np.empty(len(verts), dtype=np.int64)
    prov_bary = np.empty((len(verts), 3))
    prov_faces[uniq_v] = owner[first // 3]
    prov_bary[uniq_v] = corner_bary[first // 3, first % 3]

    return SubdividedMesh(
        mesh=Mesh(verts, faces, validate=False),
        coarse=coarse,
        level=s,
        provenance_faces=prov_faces,
        provenance_bary=prov_bary,
    )


@dataclass
class TrainingSet:
    """Per-vertex displacement targets with one-ring adjacency (CSR layout)."""

    inputs: np.ndarray       # (N, 3) undisplaced subdivided positions
    targets: np.ndarray      # (N, 3) baked displacements
    nbr_starts: np.ndarray   # (N,)
    nbr_counts: np.ndarray   # (N,)
    nbr_indices: np.ndarray  # (M,) flattened neighbor vertex ids
    nbr_elens: np.ndarray    # (M,) edge lengths to each neighbor

    def __len__(self) -> int:
        return len(self.inputs)

    def neighbors(self, vertex: int) -> np.ndarray:
        s = self.nbr_starts[vertex]
        return self.nbr_indices[s : s + self.nbr_counts[vertex]]


def vertex_adjacency(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """CSR one-ring adjacency with per-edge lengths; neighbors sorted ascending."""
    e = mesh.edges
    if len(e) == 0:
        n = mesh.n_vertices
        return (np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64),
                np.zeros(0, dtype=np.int64), np.zeros(0))
    both = np.concatenate([e, e[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    n = mesh.n_vertices
    counts = np.bincount(both[:, 0], minlength=n).astype(np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    lens = np.linalg.norm(mesh.vertices[both[:, 0]] - mesh.vertices[both[:, 1]], axis=1)
    if (lens <= 0.0).any():
        raise MeshError("zero-length edge in mesh")
    return starts, counts, both[:, 1].copy(), lens


def bake_training_set(sub: SubdividedMesh, ssp_map: SspMap) -> TrainingSet:
    """Evaluate the coarse-to-original displacement at every subdivided vertex."""
    if not sub.coarse.same_geometry(ssp_map.coarse):
        raise MeshError("subdivided mesh and map were built on different coarse meshes")
    targets = ssp_map.displacements(sub.provenance_faces, sub.provenance_bary)
    starts, counts, indices, elens = vertex_adjacency(sub.mesh)
    return TrainingSet(
        inputs=sub.mesh.vertices.copy(),
        targets=targets,
        nbr_starts=starts,
        nbr_counts=counts,
        nbr_indices=indices,
        nbr_elens=elens,
    )


def inference_set(mesh: Mesh) -> TrainingSet:
    """Adjacency-only training-set view (zero targets) for decode-time inference."""
    starts, counts, indices, elens = vertex_adjacency(mesh)
    return TrainingSet(
        inputs=mesh.vertices.copy(),
        targets=np.zeros_like(mesh.vertices),
        nbr_starts=starts,
        nbr_counts=counts,
        nbr_indices=indices,
        nbr_elens=elens,
    )


def displaced_mesh(sub: SubdividedMesh, tset: TrainingSet) -> Mesh:
    return Mesh(sub.mesh.vertices + tset.targets, sub.mesh.faces, validate=False)


def training_set_cache_key(original: Mesh, v_coarse: int, s: int) -> str:
    """Content hash identifying one baked training set between runs."""
    import hashlib

    h = hashlib.sha256()
    h.update(original.vertices.tobytes())
    h.update(original.faces.tobytes())
    h.update(f"|v_coarse={v_coarse}|s={s}".encode())
    return h.hexdigest()


def save_training_set_cache(path, tset: TrainingSet, key: str) -> None:
    np.savez_compressed(
        path,
        key=np.frombuffer(key.encode(), dtype=np.uint8),
        inputs=tset.inputs,
        targets=tset.targets,
        nbr_starts=tset.nbr_starts,
        nbr_counts=tset.nbr_counts,
        nbr_indices=tset.nbr_indices,
        nbr_elens=tset.nbr_elens,
    )


def load_training_set_cache(path, key: str) -> TrainingSet | None:
    """Load a cached bake; None when missing or keyed to different inputs."""
    import os

    if not os.path.exists(path):
        return None
    with np.load(path) as data:
        stored = bytes(data["key"]).decode()
        if stored != key:
            return None
        return TrainingSet(
            inputs=data["inputs"],
            targets=data["targets"],
            nbr_starts=data["nbr_starts"],
            nbr_counts=data["nbr_counts"],
            nbr_indices=data["nbr_indices"],
            nbr_elens=data["nbr_elens"],
        )


def ssp_gt_quality(sub: SubdividedMesh, tset: TrainingSet, original: Mesh,
                   n: int = 50_000, seed: int = 0):
    """Quality of the exactly-displaced subdivided mesh against the original.

    This is the ceiling for any displacement model at this remeshing
    configuration: the model can at best reproduce the baked targets.
    """
    from .metrics import compare_meshes

    return compare_meshes(displaced_mesh(sub, tset), original, n=n, seed=seed)
