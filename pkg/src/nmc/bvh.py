"""AABB tree over triangles with exact closest-point queries (numba kernels)."""

from __future__ import annotations

import numpy as np
from numba import njit

_LEAF_SIZE = 8


@njit(cache=True)
def _closest_point_on_triangle(a, b, c, q):
    # Region walk from "Real-Time Collision Detection" (Ericson 2004).
    ab = b - a
    ac = c - a
    ap = q - a
    d1 = ab[0] * ap[0] + ab[1] * ap[1] + ab[2] * ap[2]
    d2 = ac[0] * ap[0] + ac[1] * ap[1] + ac[2] * ap[2]
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy()
    bp = q - b
    d3 = ab[0] * bp[0] + ab[1] * bp[1] + ab[2] * bp[2]
    d4 = ac[0] * bp[0] + ac[1] * bp[1] + ac[2] * bp[2]
    if d3 >= 0.0 and d4 <= d3:
        return b.copy()
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        denom = d1 - d3
        v = 0.5 if denom == 0.0 else d1 / denom
        return a + v * ab
    cp = q - c
    d5 = ab[0] * cp[0] + ab[1] * cp[1] + ab[2] * cp[2]
    d6 = ac[0] * cp[0] + ac[1] * cp[1] + ac[2] * cp[2]
    if d6 >= 0.0 and d5 <= d6:
        return c.copy()
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        denom = d2 - d6
        w = 0.5 if denom == 0.0 else d2 / denom
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        denom = (d4 - d3) + (d5 - d6)
        w = 0.5 if denom == 0.0 else (d4 - d3) / denom
        return b + w * (c - b)
    denom = va + vb + vc
    if denom == 0.0:
        return a.copy()
    v = vb / denom
    w = vc / denom
    return a + ab * v + ac * w


@njit(cache=True)
def _sq_dist(p, q):
    dx = p[0] - q[0]
    dy = p[1] - q[1]
    dz = p[2] - q[2]
    return dx * dx + dy * dy + dz * dz


@njit(cache=True)
def _aabb_sq_dist(lo, hi, q):
    d = 0.0
    for k in range(3):
        if q[k] < lo[k]:
            e = lo[k] - q[k]
            d += e * e
        elif q[k] > hi[k]:
            e = q[k] - hi[k]
            d += e * e
    return d


@njit(cache=True)
def _query_one(tris, order, node_lo, node_hi, node_left, node_right, node_start, node_count, q):
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    top = 1
    best_d2 = np.inf
    best_face = -1
    best_pt = np.zeros(3)
    while top > 0:
        top -= 1
        node = stack[top]
        if _aabb_sq_dist(node_lo[node], node_hi[node], q) >= best_d2:
            continue
        left = node_left[node]
        if left < 0:
            start = node_start[node]
            for i in range(start, start + node_count[node]):
                fi = order[i]
                cp = _closest_point_on_triangle(tris[fi, 0], tris[fi, 1], tris[fi, 2], q)
                d2 = _sq_dist(cp, q)
                if d2 < best_d2 or (d2 == best_d2 and fi < best_face):
                    best_d2 = d2
                    best_face = fi
                    best_pt = cp
        else:
            right = node_right[node]
            dl = _aabb_sq_dist(node_lo[left], node_hi[left], q)
            dr = _aabb_sq_dist(node_lo[right], node_hi[right], q)
            # push the farther child first so the nearer one is visited next
            if dl <= dr:
                stack[top] = right
                stack[top + 1] = left
            else:
                stack[top] = left
                stack[top + 1] = right
            top += 2
    return best_d2, best_face, best_pt


@njit(cache=True)
def _query_many(tris, order, node_lo, node_hi, node_left, node_right, node_start, node_count, queries):
    n = queries.shape[0]
    dists = np.empty(n)
    faces = np.empty(n, dtype=np.int64)
    points = np.empty((n, 3))
    for i in range(n):
        d2, fi, pt = _query_one(
            tris, order, node_lo, node_hi, node_left, node_right, node_start, node_count, queries[i]
        )
        dists[i] = np.sqrt(d2)
        faces[i] = fi
        points[i] = pt
    return dists, faces, points


@njit(cache=True)
def brute_force_closest(tris, queries):
    """Reference oracle: scan every triangle for every query."""
    n = queries.shape[0]
    m = tris.shape[0]
    dists = np.empty(n)
    faces = np.empty(n, dtype=np.int64)
    points = np.empty((n, 3))
    for i in range(n):
        q = queries[i]
        best_d2 = np.inf
        best_face = -1
        best_pt = np.zeros(3)
        for fi in range(m):
            cp = _closest_point_on_triangle(tris[fi, 0], tris[fi, 1], tris[fi, 2], q)
            d2 = _sq_dist(cp, q)
            if d2 < best_d2 or (d2 == best_d2 and fi < best_face):
                best_d2 = d2
                best_face = fi
                best_pt = cp
        dists[i] = np.sqrt(best_d2)
        faces[i] = best_face
        points[i] = best_pt
    return dists, faces, points


class TriangleBvh:
    """Median-split AABB hierarchy. Query results match brute force exactly."""

    def __init__(self, triangles: np.ndarray):
        tris = np.ascontiguousarray(triangles, dtype=np.float64)
        if tris.ndim != 3 or tris.shape[1:] != (3, 3) or tris.shape[0] == 0:
            raise ValueError("need a non-empty (m, 3, 3) triangle array")
        self.triangles = tris
        m = tris.shape[0]
        centroids = tris.mean(axis=1)
        tri_lo = tris.min(axis=1)
        tri_hi = tris.max(axis=1)

        order = np.arange(m, dtype=np.int64)
        lo, hi, left, right, start, count = [], [], [], [], [], []

        def new_node():
            lo.append(np.zeros(3))
            hi.append(np.zeros(3))
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            return len(lo) - 1

        root = new_node()
        work = [(root, 0, m)]
        while work:
            node, s, e = work.pop()
            idx = order[s:e]
            lo[node] = tri_lo[idx].min(axis=0)
            hi[node] = tri_hi[idx].max(axis=0)
            if e - s <= _LEAF_SIZE:
                start[node] = s
                count[node] = e - s
                continue
            axis = int(np.argmax(hi[node] - lo[node]))
            # stable sort keeps splits deterministic under coordinate ties
            order[s:e] = idx[np.argsort(centroids[idx, axis], kind="stable")]
            mid = (s + e) // 2
            l, r = new_node(), new_node()
            left[node] = l
            right[node] = r
            work.append((l, s, mid))
            work.append((r, mid, e))

        self._order = order
        self._lo = np.array(lo)
        self._hi = np.array(hi)
        self._left = np.array(left, dtype=np.int64)
        self._right = np.array(right, dtype=np.int64)
        self._start = np.array(start, dtype=np.int64)
        self._count = np.array(count, dtype=np.int64)

    def query(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Closest surface hit for each query point: (distances, face ids, foot points)."""
        q = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        return _query_many(
            self.triangles, self._order, self._lo, self._hi,
            self._left, self._right, self._start, self._count, q,
        )
