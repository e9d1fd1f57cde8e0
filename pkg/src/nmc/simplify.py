"""QSLIM decimation with simultaneous per-collapse UV flattening.

Every committed collapse stores two charts over the edge's combined 1-ring,
flattened into the same fixed convex boundary polygon: the pre-collapse
triangulation and the post-collapse fan. Walking these chart correspondences
backwards maps any surface point of the decimated mesh onto the original
surface; the coarse-to-original map is the composition over all collapses.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, MeshError, validate_edge_manifold

_SINGULAR_DET = 1e-12
_BARY_EPS = 1e-12
_MAX_REJECTIONS = 3
_REJECT_PENALTY = 10.0


class NonManifoldMeshError(MeshError):
    def __init__(self, report):
        self.report = report
        super().__init__(
            f"mesh is not edge-manifold ({len(report.non_manifold_edges)} offending edges)"
        )


class CollapseRejected(Exception):
    """An edge collapse failed a validity or chart-injectivity check."""


class _StaleEdge(Exception):
    """Heap entry refers to an edge that no longer exists."""


@dataclass(frozen=True)
class SurfacePoint:
    """A point on a mesh surface: face index plus barycentric coordinates."""

    face: int
    bary: tuple[float, float, float]

    def __post_init__(self):
        b = self.bary
        if min(b) < -1e-9 or abs(sum(b) - 1.0) > 1e-7:
            raise ValueError(f"invalid barycentric coordinates {b}")

    def position(self, mesh: Mesh) -> np.ndarray:
        a, b, c = mesh.faces[self.face]
        w = self.bary
        return (
            w[0] * mesh.vertices[a] + w[1] * mesh.vertices[b] + w[2] * mesh.vertices[c]
        )


def face_plane_quadric(p0, p1, p2) -> np.ndarray:
    """Area-weighted plane quadric of a triangle as a symmetric 4x4 matrix."""
    e1 = p1 - p0
    e2 = p2 - p0
    cx = e1[1] * e2[2] - e1[2] * e2[1]
    cy = e1[2] * e2[0] - e1[0] * e2[2]
    cz = e1[0] * e2[1] - e1[1] * e2[0]
    norm = math.sqrt(cx * cx + cy * cy + cz * cz)
    if norm <= 0.0:
        return np.zeros((4, 4))
    n = np.array([cx / norm, cy / norm, cz / norm])
    d = -float(n @ p0)
    plane = np.array([n[0], n[1], n[2], d])
    return 0.5 * norm * np.outer(plane, plane)


def quadric_error(quadric: np.ndarray, position) -> float:
    x, y, z = float(position[0]), float(position[1]), float(position[2])
    q = quadric
    err = (
        q[0, 0] * x * x + q[1, 1] * y * y + q[2, 2] * z * z
        + 2.0 * (q[0, 1] * x * y + q[0, 2] * x * z + q[1, 2] * y * z)
        + 2.0 * (q[0, 3] * x + q[1, 3] * y + q[2, 3] * z)
        + q[3, 3]
    )
    return max(float(err), 0.0)


def _cot(apex, p, q) -> float:
    ux, uy, uz = p[0] - apex[0], p[1] - apex[1], p[2] - apex[2]
    vx, vy, vz = q[0] - apex[0], q[1] - apex[1], q[2] - apex[2]
    cx = uy * vz - uz * vy
    cy = uz * vx - ux * vz
    cz = ux * vy - uy * vx
    norm = math.sqrt(cx * cx + cy * cy + cz * cz)
    if norm < 1e-300:
        return 0.0
    return (ux * vx + uy * vy + uz * vz) / norm


def _signed_area(a, b, c) -> float:
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


@dataclass
class CollapseRecord:
    """One edge collapse with its pre/post UV charts over the combined 1-ring."""

    edge: tuple[int, int]
    kept_vertex: int
    new_position: np.ndarray
    pre_face_ids: np.ndarray          # (P,) face ids valid before the collapse, ascending
    pre_tris_uv: np.ndarray           # (P, 3, 2) chart corners, face vertex order
    post_tris: list                   # [(vertex triple, (3, 2) uv array), ...]
    post_face_ids: np.ndarray | None = None   # assigned at commit, consecutive
    post_uv_array: np.ndarray | None = field(default=None, repr=False)
    _pre_origin: np.ndarray | None = field(default=None, repr=False)
    _pre_basis_inv: np.ndarray | None = field(default=None, repr=False)

    def finalize(self, face_ids: np.ndarray) -> None:
        self.post_face_ids = face_ids
        self.post_uv_array = np.stack([uv for _, uv in self.post_tris])
        origin = self.pre_tris_uv[:, 0, :]
        basis = np.stack(
            [self.pre_tris_uv[:, 1, :] - origin, self.pre_tris_uv[:, 2, :] - origin],
            axis=2,
        )  # (P, 2, 2), columns are the two chart edge vectors
        det = basis[:, 0, 0] * basis[:, 1, 1] - basis[:, 0, 1] * basis[:, 1, 0]
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        inv = np.empty_like(basis)
        inv[:, 0, 0] = basis[:, 1, 1] / det
        inv[:, 0, 1] = -basis[:, 0, 1] / det
        inv[:, 1, 0] = -basis[:, 1, 0] / det
        inv[:, 1, 1] = basis[:, 0, 0] / det
        self._pre_origin = origin
        self._pre_basis_inv = inv

    def post_uv(self, face_id: int) -> np.ndarray:
        row = face_id - int(self.post_face_ids[0])
        return self.post_uv_array[row]

    def locate_pre_many(self, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized chart lookup: (n, 2) uv points -> (face ids, (n, 3) barys)."""
        rel = uv[:, None, :] - self._pre_origin[None, :, :]          # (n, P, 2)
        lam = np.einsum("pij,npj->npi", self._pre_basis_inv, rel)    # (n, P, 2)
        bary = np.empty(lam.shape[:2] + (3,))
        bary[:, :, 1] = lam[:, :, 0]
        bary[:, :, 2] = lam[:, :, 1]
        bary[:, :, 0] = 1.0 - lam[:, :, 0] - lam[:, :, 1]
        mins = bary.min(axis=2)                                      # (n, P)
        inside = mins >= -_BARY_EPS
        has = inside.any(axis=1)
        first_inside = inside.argmax(axis=1)       # first hit in ascending face id
        nearest = mins.argmax(axis=1)              # fallback: least-negative corner
        pick = np.where(has, first_inside, nearest)
        rows = np.arange(len(uv))
        b = np.clip(bary[rows, pick], 0.0, None)
        b /= b.sum(axis=1, keepdims=True)
        return self.pre_face_ids[pick], b

    def locate_pre(self, uv: np.ndarray) -> tuple[int, np.ndarray]:
        fids, barys = self.locate_pre_many(uv.reshape(1, 2))
        return int(fids[0]), barys[0]

    def chart_boundary_area_gap(self) -> float:
        """|sum of pre UV areas - sum of post UV areas|; zero for a shared boundary."""
        pre = sum(_signed_area(*tri) for tri in self.pre_tris_uv)
        post = sum(_signed_area(*uv) for _, uv in self.post_tris)
        return abs(float(pre - post))


class SspMap:
    """Composed bijection from the coarse surface back to the original surface."""

    def __init__(self, original, coarse, records, created_by, coarse_face_ids,
                 requested_target=None, stopped_early=False):
        self.original = original
        self.coarse = coarse
        self.records = records
        self.created_by = created_by
        self.coarse_face_ids = np.asarray(coarse_face_ids, dtype=np.int64)
        self.requested_target = requested_target
        self.stopped_early = stopped_early
        total = max(
            [len(original.faces)]
            + [int(r.post_face_ids[-1]) + 1 for r in records if len(r.post_face_ids)]
        )
        creator = np.full(total, -1, dtype=np.int64)
        for fid, rec in created_by.items():
            creator[fid] = rec
        self._creator = creator

    def replace_coarse(self, coarse: Mesh) -> None:
        """Swap the coarse geometry (e.g. float32-rounded); topology must match."""
        if coarse.faces.shape != self.coarse.faces.shape or not np.array_equal(
            coarse.faces, self.coarse.faces
        ):
            raise MeshError("replacement coarse mesh changes topology")
        self.coarse = coarse

    def trace_many(self, faces, barys) -> tuple[np.ndarray, np.ndarray]:
        """Chase coarse surface points back to (original face, bary), vectorized.

        Sweeps the collapse records newest to oldest; every point whose current
        face was created by the record at hand steps through that record's
        charts. Identical to per-point iteration, batched.
        """
        fid = self.coarse_face_ids[np.asarray(faces, dtype=np.int64)]
        bary = np.array(barys, dtype=np.float64).reshape(-1, 3)
        creator = self._creator
        owner = creator[fid]
        for rec_idx in range(len(self.records) - 1, -1, -1):
            sel = np.nonzero(owner == rec_idx)[0]
            if not len(sel):
                continue
            rec = self.records[rec_idx]
            rows = fid[sel] - int(rec.post_face_ids[0])
            uv = np.einsum("nj,njk->nk", bary[sel], rec.post_uv_array[rows])
            new_fid, new_bary = rec.locate_pre_many(uv)
            fid[sel] = new_fid
            bary[sel] = new_bary
            owner[sel] = creator[new_fid]
        return fid, bary

    def map_points(self, faces, barys) -> np.ndarray:
        fid, bary = self.trace_many(faces, barys)
        tri = self.original.vertices[self.original.faces[fid]]
        return np.einsum("nj,njk->nk", bary, tri)

    def displacements(self, faces, barys) -> np.ndarray:
        faces = np.asarray(faces, dtype=np.int64)
        bary = np.asarray(barys, dtype=np.float64).reshape(-1, 3)
        on_coarse = np.einsum(
            "nj,njk->nk", bary, self.coarse.vertices[self.coarse.faces[faces]]
        )
        return self.map_points(faces, bary) - on_coarse

    def trace(self, p: SurfacePoint) -> tuple[int, np.ndarray]:
        fid, bary = self.trace_many([p.face], [p.bary])
        return int(fid[0]), bary[0]

    def map_point(self, p: SurfacePoint) -> np.ndarray:
        return self.map_points([p.face], [p.bary])[0]

    def displacement(self, p: SurfacePoint) -> np.ndarray:
        return self.map_point(p) - p.position(self.coarse)


def map_point(ssp_map: SspMap, p: SurfacePoint) -> np.ndarray:
    return ssp_map.map_point(p)


def displacement(ssp_map: SspMap, p: SurfacePoint) -> np.ndarray:
    return ssp_map.displacement(p)


class DecimationState:
    """Mutable mesh state for greedy edge collapsing with chart recording.

    ``max_valence`` bounds the merged vertex's ring size; collapses that would
    exceed it are rejected. This keeps charts small and ring fans well shaped.
    """

    def __init__(self, mesh: Mesh, max_valence: int = 24):
        self.max_valence = max_valence
        report = validate_edge_manifold(mesh)
        if not report.is_edge_manifold:
            raise NonManifoldMeshError(report)
        self.mesh = mesh
        self.positions = mesh.vertices.copy()
        self.vertex_alive = np.ones(mesh.n_vertices, dtype=bool)
        self.face_verts: list = [tuple(int(x) for x in f) for f in mesh.faces]
        self.vfaces: list[set[int]] = [set() for _ in range(mesh.n_vertices)]
        for fid, (a, b, c) in enumerate(self.face_verts):
            self.vfaces[a].add(fid)
            self.vfaces[b].add(fid)
            self.vfaces[c].add(fid)
        self.quadrics = np.zeros((mesh.n_vertices, 4, 4))
        for a, b, c in self.face_verts:
            k = face_plane_quadric(self.positions[a], self.positions[b], self.positions[c])
            self.quadrics[a] += k
            self.quadrics[b] += k
            self.quadrics[c] += k
        self.boundary_vertex = np.zeros(mesh.n_vertices, dtype=bool)
        for (a, b) in report.boundary_edges:
            self.boundary_vertex[a] = True
            self.boundary_vertex[b] = True
        self.n_alive = mesh.n_vertices
        self.records: list[CollapseRecord] = []
        self.created_by: dict[int, int] = {}
        self.rejections: dict[tuple[int, int], int] = {}

    # -- topology queries ---------------------------------------------------

    def _shared_faces(self, u: int, v: int) -> list[int]:
        return sorted(self.vfaces[u] & self.vfaces[v])

    def _vertex_neighbors(self, u: int) -> set[int]:
        out = set()
        for fid in self.vfaces[u]:
            out.update(self.face_verts[fid])
        out.discard(u)
        return out

    def current_edges(self) -> list[tuple[int, int]]:
        edges = set()
        for verts in self.face_verts:
            if verts is None:
                continue
            a, b, c = verts
            for x, y in ((a, b), (b, c), (c, a)):
                edges.add((x, y) if x < y else (y, x))
        return sorted(edges)

    # -- collapse candidate geometry -----------------------------------------

    def optimal_position(self, u: int, v: int) -> np.ndarray:
        q = self.quadrics[u] + self.quadrics[v]
        pu, pv = self.positions[u], self.positions[v]
        mid = 0.5 * (pu + pv)
        a00, a01, a02 = q[0, 0], q[0, 1], q[0, 2]
        a11, a12, a22 = q[1, 1], q[1, 2], q[2, 2]
        b0, b1, b2 = -q[0, 3], -q[1, 3], -q[2, 3]
        det = (
            a00 * (a11 * a22 - a12 * a12)
            - a01 * (a01 * a22 - a12 * a02)
            + a02 * (a01 * a12 - a11 * a02)
        )
        if abs(det) >= _SINGULAR_DET:
            x = (
                b0 * (a11 * a22 - a12 * a12)
                - a01 * (b1 * a22 - a12 * b2)
                + a02 * (b1 * a12 - a11 * b2)
            ) / det
            y = (
                a00 * (b1 * a22 - b2 * a12)
                - b0 * (a01 * a22 - a12 * a02)
                + a02 * (a01 * b2 - b1 * a02)
            ) / det
            z = (
                a00 * (a11 * b2 - a12 * b1)
                - a01 * (a01 * b2 - b1 * a02)
                + b0 * (a01 * a12 - a11 * a02)
            ) / det
            opt = np.array([x, y, z])
            # reject wildly ill-conditioned solutions in favor of local picks
            edge_len = math.dist(pu, pv)
            if math.dist(opt, mid) <= 10.0 * edge_len + 1e-6:
                return opt
        candidates = (pu, pv, mid)
        errors = [quadric_error(q, c) for c in candidates]
        return candidates[int(np.argmin(errors))].copy()

    def edge_cost(self, u: int, v: int) -> tuple[float, np.ndarray]:
        position = self.optimal_position(u, v)
        err = quadric_error(self.quadrics[u] + self.quadrics[v], position)
        key = (u, v) if u < v else (v, u)
        err *= _REJECT_PENALTY ** self.rejections.get(key, 0)
        return err, position

    # -- chart construction ---------------------------------------------------

    def _patch_boundary_cycle(self, face_ids) -> list[int] | None:
        directed: dict[tuple[int, int], int] = {}
        for fid in face_ids:
            a, b, c = self.face_verts[fid]
            for x, y in ((a, b), (b, c), (c, a)):
                if (x, y) in directed:
                    return None  # inconsistent winding
                directed[(x, y)] = fid
        nxt: dict[int, int] = {}
        n_boundary = 0
        for (x, y) in directed:
            if (y, x) not in directed:
                if x in nxt:
                    return None  # pinched boundary
                nxt[x] = y
                n_boundary += 1
        if not nxt:
            return None
        start = min(nxt)
        cycle = [start]
        cur = nxt[start]
        while cur != start:
            cycle.append(cur)
            if cur not in nxt or len(cycle) > n_boundary:
                return None
            cur = nxt[cur]
        if len(cycle) != n_boundary:
            return None  # more than one boundary loop
        return cycle

    @staticmethod
    def _flatten(face_triples, pos, boundary_uv, interior):
        """Harmonic UVs for interior vertices inside a fixed boundary polygon.

        Tries cotangent weights first, then uniform weights; returns a
        vertex -> (u, v) dict or None if either pass produces a flipped
        triangle. ``pos`` maps vertex id -> 3D coordinate tuple.
        """
        for mode in (0, 1):  # 0 = cotangent, 1 = uniform
            weights: dict[tuple[int, int], float] = {}
            for (a, b, c) in face_triples:
                pa, pb, pc = pos[a], pos[b], pos[c]
                for x, y, w in (
                    (a, b, _cot(pc, pa, pb) if mode == 0 else 1.0),
                    (b, c, _cot(pa, pb, pc) if mode == 0 else 1.0),
                    (c, a, _cot(pb, pc, pa) if mode == 0 else 1.0),
                ):
                    key = (x, y) if x < y else (y, x)
                    weights[key] = weights.get(key, 0.0) + w
            uv = dict(boundary_uv)
            ok = DecimationState._solve_interior(weights, uv, interior)
            if not ok:
                continue
            flipped = False
            for (a, b, c) in face_triples:
                if _signed_area(uv[a], uv[b], uv[c]) <= 0.0:
                    flipped = True
                    break
            if not flipped:
                return uv
        return None

    @staticmethod
    def _conformal_chart(face_triples, pos, cycle):
        """Free-boundary least-squares conformal flattening of a disk patch.

        Low distortion is what keeps the composed coarse-to-original map
        smooth: charts close to isometric make consecutive collapses nearly
        cancel. Two boundary vertices are pinned to fix scale and rotation.
        Returns vertex -> (u, v) or None when the solve degenerates or flips.
        """
        verts = sorted({x for tri in face_triples for x in tri})
        index = {x: i for i, x in enumerate(verts)}
        n = len(verts)
        pin_a = cycle[0]
        pin_b = cycle[len(cycle) // 2]
        span = math.dist(pos[pin_a], pos[pin_b])
        if span <= 0.0:
            return None
        rows = np.zeros((2 * len(face_triples), 2 * n))
        for r, (a, b, c) in enumerate(face_triples):
            pa = np.array(pos[a])
            e1 = np.array(pos[b]) - pa
            xj = np.linalg.norm(e1)
            if xj < 1e-300:
                return None
            ex = e1 / xj
            e2 = np.array(pos[c]) - pa
            xk = float(e2 @ ex)
            yk = float(np.linalg.norm(e2 - xk * ex))
            area = 0.5 * xj * yk
            if area < 1e-300:
                return None
            w = 1.0 / math.sqrt(2.0 * area)
            local = {a: complex(0.0, 0.0), b: complex(xj, 0.0), c: complex(xk, yk)}
            opposite = {
                a: local[c] - local[b],
                b: local[a] - local[c],
                c: local[b] - local[a],
            }
            for vid, e in opposite.items():
                col = 2 * index[vid]
                ew = e * w
                rows[2 * r, col] += ew.real
                rows[2 * r, col + 1] -= ew.imag
                rows[2 * r + 1, col] += ew.imag
                rows[2 * r + 1, col + 1] += ew.real
        pins = {pin_a: (0.0, 0.0), pin_b: (span, 0.0)}
        pin_cols = []
        rhs = np.zeros(2 * len(face_triples))
        for vid, (pu, pv) in pins.items():
            cu, cv = 2 * index[vid], 2 * index[vid] + 1
            rhs -= rows[:, cu] * pu + rows[:, cv] * pv
            pin_cols += [cu, cv]
        free_cols = [c for c in range(2 * n) if c not in pin_cols]
        sol, *_ = np.linalg.lstsq(rows[:, free_cols], rhs, rcond=None)
        coords = np.zeros(2 * n)
        coords[free_cols] = sol
        for vid, (pu, pv) in pins.items():
            coords[2 * index[vid]] = pu
            coords[2 * index[vid] + 1] = pv
        uv = {vid: (coords[2 * i], coords[2 * i + 1]) for vid, i in index.items()}
        total = sum(_signed_area(uv[a], uv[b], uv[c]) for a, b, c in face_triples)
        if total < 0.0:  # mirrored solution; flip one axis
            uv = {vid: (p[0], -p[1]) for vid, p in uv.items()}
        for a, b, c in face_triples:
            if _signed_area(uv[a], uv[b], uv[c]) <= 0.0:
                return None
        return uv

    @staticmethod
    def _solve_interior(weights, uv, interior) -> bool:
        if len(interior) == 1:
            vid = interior[0]
            sw = su = sv = 0.0
            for (x, y), w in weights.items():
                nb = None
                if x == vid:
                    nb = y
                elif y == vid:
                    nb = x
                if nb is None or nb == vid:
                    continue
                sw += w
                su += w * uv[nb][0]
                sv += w * uv[nb][1]
            if abs(sw) < 1e-300:
                return False
            uv[vid] = (su / sw, sv / sw)
            return True
        if len(interior) == 2:
            p, q = interior
            wpp = wqq = wpq = 0.0
            rp_u = rp_v = rq_u = rq_v = 0.0
            for (x, y), w in weights.items():
                if x == p and y == q or x == q and y == p:
                    wpq += w
                    wpp += w
                    wqq += w
                elif x == p or y == p:
                    nb = y if x == p else x
                    wpp += w
                    rp_u += w * uv[nb][0]
                    rp_v += w * uv[nb][1]
                elif x == q or y == q:
                    nb = y if x == q else x
                    wqq += w
                    rq_u += w * uv[nb][0]
                    rq_v += w * uv[nb][1]
            det = wpp * wqq - wpq * wpq
            if abs(det) < 1e-300:
                return False
            uv[p] = (
                (rp_u * wqq + wpq * rq_u) / det,
                (rp_v * wqq + wpq * rq_v) / det,
            )
            uv[q] = (
                (wpp * rq_u + wpq * rp_u) / det,
                (wpp * rq_v + wpq * rp_v) / det,
            )
            return True
        raise ValueError("expected one or two interior vertices")

    def flatten_collapse_neighborhood(self, edge, new_position=None) -> CollapseRecord:
        """Build the chart pair for collapsing ``edge``; raises CollapseRejected."""
        u, v = int(edge[0]), int(edge[1])
        if u > v:
            u, v = v, u
        if not (self.vertex_alive[u] and self.vertex_alive[v]):
            raise _StaleEdge()
        shared = self._shared_faces(u, v)
        if not shared:
            raise _StaleEdge()
        if len(shared) == 1:
            raise CollapseRejected("boundary edge")
        if len(shared) > 2:
            raise CollapseRejected("non-manifold edge")
        if self.boundary_vertex[u] or self.boundary_vertex[v]:
            raise CollapseRejected("endpoint on mesh boundary")
        wings = set()
        for fid in shared:
            for x in self.face_verts[fid]:
                if x != u and x != v:
                    wings.add(x)
        if len(wings) != 2:
            raise CollapseRejected("degenerate wing configuration")
        common = self._vertex_neighbors(u) & self._vertex_neighbors(v)
        if common != wings:
            raise CollapseRejected("link condition violated")

        if new_position is None:
            new_position = self.optimal_position(u, v)
        new_position = np.asarray(new_position, dtype=np.float64)

        patch = sorted(self.vfaces[u] | self.vfaces[v])
        cycle = self._patch_boundary_cycle(patch)
        if cycle is None:
            raise CollapseRejected("patch is not a topological disk")
        if len(cycle) > self.max_valence:
            raise CollapseRejected("merged vertex would exceed the valence cap")
        patch_vertices = set()
        for fid in patch:
            patch_vertices.update(self.face_verts[fid])
        if set(cycle) != patch_vertices - {u, v}:
            raise CollapseRejected("interior vertex leaked onto patch boundary")

        pos = {x: tuple(self.positions[x]) for x in patch_vertices}
        pre_triples = [self.face_verts[fid] for fid in patch]
        post_pos = dict(pos)
        post_pos[u] = tuple(new_position)
        post_sources = [fid for fid in patch if fid not in shared]
        post_triples = []
        for fid in post_sources:
            a, b, c = self.face_verts[fid]
            post_triples.append(tuple(u if x == v else x for x in (a, b, c)))

        # primary construction: low-distortion conformal pre chart with a free
        # boundary, post chart flattened harmonically into the same polygon
        uv_pre = self._conformal_chart(pre_triples, pos, cycle)
        uv_post = None
        if uv_pre is not None:
            boundary_uv = {vid: uv_pre[vid] for vid in cycle}
            uv_post = self._flatten(post_triples, post_pos, boundary_uv, [u])
        if uv_post is None:
            # fallback: fixed convex boundary (circle, arc-length parameterized);
            # Tutte guarantees injectivity for both charts on valid disks
            seg = []
            for i, vid in enumerate(cycle):
                seg.append(math.dist(pos[vid], pos[cycle[(i + 1) % len(cycle)]]))
            total = sum(seg)
            if total <= 0.0:
                raise CollapseRejected("degenerate boundary polygon")
            boundary_uv = {}
            acc = 0.0
            for vid, s in zip(cycle, seg):
                t = 2.0 * math.pi * acc / total
                boundary_uv[vid] = (math.cos(t), math.sin(t))
                acc += s
            uv_pre = self._flatten(pre_triples, pos, boundary_uv, [u, v])
            if uv_pre is None:
                raise CollapseRejected("flipped triangle in pre-collapse chart")
            uv_post = self._flatten(post_triples, post_pos, boundary_uv, [u])
            if uv_post is None:
                raise CollapseRejected("flipped triangle in post-collapse chart")

        # 3D sanity: surviving faces must not flip their normals
        for fid, tri in zip(post_sources, post_triples):
            a, b, c = self.face_verts[fid]
            if _normal_dot(pos[a], pos[b], pos[c],
                           post_pos[tri[0]], post_pos[tri[1]], post_pos[tri[2]]) <= 0.0:
                raise CollapseRejected("3D normal flip")

        pre_uv = np.array([[uv_pre[x] for x in verts] for verts in pre_triples])
        post_entries = [
            (tri, np.array([uv_post[x] for x in tri])) for tri in post_triples
        ]
        return CollapseRecord(
            edge=(u, v),
            kept_vertex=u,
            new_position=new_position,
            pre_face_ids=np.array(patch, dtype=np.int64),
            pre_tris_uv=pre_uv,
            post_tris=post_entries,
        )

    # -- committing -----------------------------------------------------------

    def commit(self, record: CollapseRecord) -> None:
        u, v = record.edge
        for fid in record.pre_face_ids:
            fid = int(fid)
            for x in self.face_verts[fid]:
                self.vfaces[x].discard(fid)
            self.face_verts[fid] = None
        new_ids = []
        record_index = len(self.records)
        for tri, _ in record.post_tris:
            fid = len(self.face_verts)
            self.face_verts.append(tri)
            for x in tri:
                self.vfaces[x].add(fid)
            self.created_by[fid] = record_index
            new_ids.append(fid)
        record.finalize(np.array(new_ids, dtype=np.int64))
        self.records.append(record)
        self.positions[u] = record.new_position
        self.quadrics[u] = self.quadrics[u] + self.quadrics[v]
        self.vertex_alive[v] = False
        self.n_alive -= 1

    def build_coarse(self) -> tuple[Mesh, np.ndarray]:
        alive = np.nonzero(self.vertex_alive)[0]
        old2new = {int(o): i for i, o in enumerate(alive)}
        face_ids = [fid for fid, verts in enumerate(self.face_verts) if verts is not None]
        faces = np.array(
            [[old2new[x] for x in self.face_verts[fid]] for fid in face_ids],
            dtype=np.int64,
        )
        coarse = Mesh(self.positions[alive], faces)
        return coarse, np.array(face_ids, dtype=np.int64)


def _normal_dot(a0, b0, c0, a1, b1, c1) -> float:
    u0 = (b0[0] - a0[0], b0[1] - a0[1], b0[2] - a0[2])
    v0 = (c0[0] - a0[0], c0[1] - a0[1], c0[2] - a0[2])
    u1 = (b1[0] - a1[0], b1[1] - a1[1], b1[2] - a1[2])
    v1 = (c1[0] - a1[0], c1[1] - a1[1], c1[2] - a1[2])
    n0 = (
        u0[1] * v0[2] - u0[2] * v0[1],
        u0[2] * v0[0] - u0[0] * v0[2],
        u0[0] * v0[1] - u0[1] * v0[0],
    )
    n1 = (
        u1[1] * v1[2] - u1[2] * v1[1],
        u1[2] * v1[0] - u1[0] * v1[2],
        u1[0] * v1[1] - u1[1] * v1[0],
    )
    return n0[0] * n1[0] + n0[1] * n1[1] + n0[2] * n1[2]


def flatten_collapse_neighborhood(state: DecimationState, edge, new_position=None):
    return state.flatten_collapse_neighborhood(edge, new_position)


def dump_collapse_records(ssp_map: SspMap, path) -> None:
    """Diagnostic dump of the collapse history, one JSON object per line."""
    import json

    with open(path, "w") as fh:
        for i, rec in enumerate(ssp_map.records):
            fh.write(json.dumps({
                "index": i,
                "edge": [int(rec.edge[0]), int(rec.edge[1])],
                "kept_vertex": rec.kept_vertex,
                "new_position": [float(x) for x in rec.new_position],
                "pre_faces": rec.pre_face_ids.tolist(),
                "post_faces": rec.post_face_ids.tolist(),
                "boundary_area_gap": rec.chart_boundary_area_gap(),
            }) + "\n")


def qslim_decimate_with_ssp(
    mesh: Mesh, target_vertices: int, max_valence: int = 24
) -> tuple[Mesh, SspMap]:
    """Greedy quadric-error edge collapsing down to ``target_vertices``.

    Stops early (with a warning) once no legal collapse remains; the returned
    map is total over the coarse surface either way.
    """
    if target_vertices < 3:
        raise ValueError("target vertex count must be at least 3")
    if target_vertices > mesh.n_vertices:
        raise ValueError("target vertex count exceeds input vertex count")
    state = DecimationState(mesh, max_valence=max_valence)

    heap: list = []
    stamp: dict[tuple[int, int], int] = {}

    def push(u: int, v: int) -> None:
        key = (u, v) if u < v else (v, u)
        if state.rejections.get(key, 0) >= _MAX_REJECTIONS:
            return  # frozen
        cost, position = state.edge_cost(*key)
        stamp[key] = stamp.get(key, 0) + 1
        heapq.heappush(heap, (cost, key[0], key[1], stamp[key], position))

    for (u, v) in state.current_edges():
        push(u, v)

    while state.n_alive > target_vertices and heap:
        cost, u, v, entry_stamp, position = heapq.heappop(heap)
        key = (u, v)
        if stamp.get(key) != entry_stamp:
            continue
        try:
            record = state.flatten_collapse_neighborhood(key, position)
        except _StaleEdge:
            continue
        except CollapseRejected:
            state.rejections[key] = state.rejections.get(key, 0) + 1
            if state.rejections[key] < _MAX_REJECTIONS:
                push(u, v)
            continue
        state.commit(record)
        # refresh candidates around the surviving vertex
        for nb in sorted(state._vertex_neighbors(u)):
            push(u, nb)

    coarse, coarse_face_ids = state.build_coarse()
    stopped_early = state.n_alive > target_vertices
    if stopped_early:
        warnings.warn(
            f"decimation stopped early at {state.n_alive} vertices "
            f"(target {target_vertices}): no legal collapse remained"
        )
    if coarse.euler_characteristic() != mesh.euler_characteristic() or (
        coarse.connected_component_count() != mesh.connected_component_count()
    ):
        warnings.warn(
            "coarse mesh changed topology (Euler characteristic or component "
            "count); thin structures may not survive this simplification level"
        )
    return coarse, SspMap(
        original=mesh,
        coarse=coarse,
        records=state.records,
        created_by=state.created_by,
        coarse_face_ids=coarse_face_ids,
        requested_target=target_vertices,
        stopped_early=stopped_early,
    )
