"""Triangle mesh container, adjacency, validation and size accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEGENERATE_AREA_TOL = 1e-12


class MeshError(ValueError):
    """Raised for structurally invalid mesh data."""


class Mesh:
    """Indexed triangle mesh. Treated as immutable after construction.

    Adjacency structures (edges, one-rings, incident faces, normals) are
    derived lazily from the face list and cached; they can always be rebuilt
    from ``faces`` alone.
    """

    def __init__(self, vertices, faces, validate: bool = True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        if validate:
            self._validate()
        self._cache: dict = {}

    def _validate(self) -> None:
        if self.faces.size:
            lo, hi = self.faces.min(), self.faces.max()
            if lo < 0 or hi >= len(self.vertices):
                raise MeshError(
                    f"face index out of range: {lo if lo < 0 else hi} "
                    f"(vertex count {len(self.vertices)})"
                )
            same = (
                (self.faces[:, 0] == self.faces[:, 1])
                | (self.faces[:, 1] == self.faces[:, 2])
                | (self.faces[:, 0] == self.faces[:, 2])
            )
            if same.any():
                raise MeshError(f"face {int(np.nonzero(same)[0][0])} repeats a vertex index")
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinates")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def _cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as (min, max) pairs, lexicographically sorted."""

        def build():
            if not self.faces.size:
                return np.zeros((0, 2), dtype=np.int64)
            e = np.concatenate(
                [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
            )
            e.sort(axis=1)
            return np.unique(e, axis=0)

        return self._cached("edges", build)

    @property
    def edge_face_count(self) -> dict[tuple[int, int], int]:
        def build():
            count: dict[tuple[int, int], int] = {}
            for a, b, c in self.faces:
                for u, v in ((a, b), (b, c), (c, a)):
                    k = (int(u), int(v)) if u < v else (int(v), int(u))
                    count[k] = count.get(k, 0) + 1
            return count

        return self._cached("edge_face_count", build)

    @property
    def vertex_neighbors(self) -> list[np.ndarray]:
        """One-ring vertex indices per vertex, sorted ascending."""

        def build():
            nbrs = [set() for _ in range(self.n_vertices)]
            for a, b in self.edges:
                nbrs[a].add(int(b))
                nbrs[b].add(int(a))
            return [np.array(sorted(s), dtype=np.int64) for s in nbrs]

        return self._cached("vertex_neighbors", build)

    @property
    def vertex_faces(self) -> list[np.ndarray]:
        """Incident face indices per vertex."""

        def build():
            inc = [[] for _ in range(self.n_vertices)]
            for fi, (a, b, c) in enumerate(self.faces):
                inc[a].append(fi)
                inc[b].append(fi)
                inc[c].append(fi)
            return [np.array(s, dtype=np.int64) for s in inc]

        return self._cached("vertex_faces", build)

    @property
    def face_normals(self) -> np.ndarray:
        """Unit right-hand-winding normals; zero vector flags a degenerate face."""
        return self._cached("fan", self._areas_normals)[1]

    @property
    def face_areas(self) -> np.ndarray:
        return self._cached("fan", self._areas_normals)[0]

    def _areas_normals(self):
        v = self.vertices
        f = self.faces
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        norms = np.linalg.norm(cross, axis=1)
        areas = 0.5 * norms
        normals = np.zeros_like(cross)
        ok = norms > 0
        normals[ok] = cross[ok] / norms[ok, None]
        return areas, normals

    @property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if not len(self.vertices):
            raise MeshError("empty mesh has no bounding box")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_faces

    def connected_component_count(self) -> int:
        parent = list(range(self.n_vertices))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.edges:
            ra, rb = find(int(a)), find(int(b))
            if ra != rb:
                parent[ra] = rb
        roots = {find(v) for v in range(self.n_vertices)}
        return len(roots)

    def same_geometry(self, other: "Mesh") -> bool:
        return (
            self.vertices.shape == other.vertices.shape
            and self.faces.shape == other.faces.shape
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.faces, other.faces)
        )


@dataclass(frozen=True)
class NormalizationTransform:
    """Maps model space into the unit-bbox frame: p' = (p + translation) * scale."""

    translation: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) + self.translation) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale - self.translation

    @classmethod
    def identity(cls) -> "NormalizationTransform":
        return cls(translation=np.zeros(3), scale=1.0)


@dataclass
class ManifoldReport:
    non_manifold_edges: list[tuple[int, int]] = field(default_factory=list)
    boundary_edges: list[tuple[int, int]] = field(default_factory=list)

    @property
    def is_edge_manifold(self) -> bool:
        return not self.non_manifold_edges


def normalize_unit_bbox(mesh: Mesh) -> tuple[Mesh, NormalizationTransform]:
    """Anchor the bbox min corner at the origin and scale the largest extent to 1."""
    lo, hi = mesh.bbox()
    extent = hi - lo
    largest = float(extent.max())
    if largest <= 0.0:
        raise MeshError("zero-extent mesh cannot be normalized")
    transform = NormalizationTransform(translation=-lo, scale=1.0 / largest)
    out = Mesh(transform.apply(mesh.vertices), mesh.faces, validate=False)
    return out, transform


def validate_edge_manifold(mesh: Mesh) -> ManifoldReport:
    report = ManifoldReport()
    for edge, count in sorted(mesh.edge_face_count.items()):
        if count == 1:
            report.boundary_edges.append(edge)
        elif count > 2:
            report.non_manifold_edges.append(edge)
    return report


def raw_size_bits(mesh: Mesh) -> float:
    """Uncompressed size model: 32 bits per coordinate plus 3 log2(v)-bit indices per face."""
    v = mesh.n_vertices
    f = mesh.n_faces
    if v < 1:
        raise MeshError("raw size undefined for empty mesh")
    return 32.0 * 3 * v + 3.0 * f * math.log2(v)


def raw_size_bytes(mesh: Mesh) -> int:
    return math.ceil(raw_size_bits(mesh) / 8.0)


def face_area_and_normal(mesh: Mesh, face: int) -> tuple[float, np.ndarray]:
    """Area and unit normal of one face; degenerate faces get a zero normal."""
    if not 0 <= face < mesh.n_faces:
        raise IndexError(f"face {face} out of range")
    return float(mesh.face_areas[face]), mesh.face_normals[face].copy()


def degenerate_faces(mesh: Mesh, tol: float = DEGENERATE_AREA_TOL) -> np.ndarray:
    """Indices of faces whose area falls below ``tol`` (normalized units assumed)."""
    return np.nonzero(mesh.face_areas < tol)[0]
