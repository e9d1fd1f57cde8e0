"""Synthetic test meshes: cubes, grids, icospheres and bumpy variants."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def cube(edge: float = 1.0) -> Mesh:
    v = np.array(
        [
            [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
            [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
        ],
        dtype=np.float64,
    ) * edge
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],
            [4, 5, 6], [4, 6, 7],
            [0, 1, 5], [0, 5, 4],
            [1, 2, 6], [1, 6, 5],
            [2, 3, 7], [2, 7, 6],
            [3, 0, 4], [3, 4, 7],
        ],
        dtype=np.int64,
    )
    return Mesh(v, f)


def box(dx: float, dy: float, dz: float) -> Mesh:
    m = cube()
    return Mesh(m.vertices * np.array([dx, dy, dz]), m.faces)


def grid(n: int, z_fn=None) -> Mesh:
    """(n+1)^2-vertex triangulated unit square in the z=0 plane (or z = z_fn(x, y))."""
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    zz = z_fn(xx, yy) if z_fn is not None else np.zeros_like(xx)
    v = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    faces = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b = a + 1
            c = a + (n + 1)
            d = c + 1
            faces.append([a, c, b])
            faces.append([b, c, d])
    return Mesh(v, np.array(faces, dtype=np.int64))


def icosphere(subdivisions: int = 3, radius: float = 0.5) -> Mesh:
    """Icosahedron subdivided ``subdivisions`` times, vertices projected to a sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    v /= np.linalg.norm(v, axis=1)[:, None]
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}
        verts = list(v)

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = verts[a] + verts[b]
                p = p / np.linalg.norm(p)
                midpoint[key] = len(verts)
                verts.append(p)
            return midpoint[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
        v = np.array(verts)
        f = np.array(nf, dtype=np.int64)
    return Mesh(v * radius, f)


def bumpy_icosphere(
    subdivisions: int = 5,
    radius: float = 0.5,
    amplitude: float = 0.03,
    frequency: float = 9.0,
) -> Mesh:
    """Icosphere displaced radially by a smooth analytic bump field.

    Deterministic by construction (no RNG), so test assets rebuild identically.
    """
    base = icosphere(subdivisions, radius)
    v = base.vertices
    n = v / np.linalg.norm(v, axis=1)[:, None]
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    bump = (
        np.sin(frequency * x) * np.sin(frequency * y)
        + 0.7 * np.sin(frequency * 1.31 * y) * np.sin(frequency * 0.83 * z)
        + 0.5 * np.sin(frequency * 0.71 * z) * np.sin(frequency * 1.17 * x)
    )
    displaced = v + amplitude * bump[:, None] * n
    return Mesh(displaced, base.faces)
