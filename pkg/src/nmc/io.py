"""OBJ and PLY (ascii / binary little-endian) readers and writers.

Only vertex positions and triangle connectivity survive a round trip; UVs,
colors and normals are dropped with a warning.
"""

from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np

from .mesh import Mesh, MeshError


class MeshParseError(MeshError):
    """Raised when a mesh file cannot be parsed."""


def load_mesh(path, triangulate_quads: bool = False) -> Mesh:
    """Load an OBJ or PLY file, dispatching on extension and content."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return load_obj(path, triangulate_quads=triangulate_quads)
    if suffix == ".ply":
        return load_ply(path, triangulate_quads=triangulate_quads)
    raise MeshParseError(f"unsupported mesh format: {path.name}")


def save_mesh(mesh: Mesh, path, binary: bool = True) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        save_obj(mesh, path)
    elif suffix == ".ply":
        save_ply(mesh, path, binary=binary)
    else:
        raise MeshParseError(f"unsupported mesh format: {path.name}")


def _fan_triangulate(indices: list[int], triangulate_quads: bool, where: str) -> list[tuple[int, int, int]]:
    if len(indices) == 3:
        return [(indices[0], indices[1], indices[2])]
    if len(indices) < 3:
        raise MeshParseError(f"{where}: face with fewer than 3 vertices")
    if not triangulate_quads:
        raise MeshParseError(
            f"{where}: non-triangle face with {len(indices)} vertices "
            "(pass triangulate_quads=True to fan-triangulate)"
        )
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def load_obj(path, triangulate_quads: bool = False) -> Mesh:
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    dropped = set()
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tag, _, rest = line.partition(" ")
            if tag == "v":
                parts = rest.split()
                if len(parts) < 3:
                    raise MeshParseError(f"{path}:{lineno}: malformed vertex record")
                vertices.append((float(parts[0]), float(parts[1]), float(parts[2])))
                if len(parts) > 3:
                    dropped.add("vertex colors")
            elif tag == "f":
                idx = []
                for chunk in rest.split():
                    head = chunk.split("/")[0]
                    if "/" in chunk:
                        dropped.add("texture/normal indices")
                    i = int(head)
                    if i == 0:
                        raise MeshParseError(f"{path}:{lineno}: OBJ indices are 1-based, got 0")
                    if i < 0:
                        raise MeshParseError(f"{path}:{lineno}: relative OBJ indices unsupported")
                    idx.append(i - 1)
                faces.extend(_fan_triangulate(idx, triangulate_quads, f"{path}:{lineno}"))
            elif tag in ("vt", "vn", "usemtl", "mtllib", "o", "g", "s", "l", "p"):
                if tag in ("vt", "vn"):
                    dropped.add({"vt": "texture coordinates", "vn": "normals"}[tag])
            else:
                raise MeshParseError(f"{path}:{lineno}: unrecognized record '{tag}'")
    if dropped:
        warnings.warn(f"{path}: dropped non-position attributes: {', '.join(sorted(dropped))}")
    mesh = Mesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                np.array(faces, dtype=np.int64).reshape(-1, 3))
    return mesh


def save_obj(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.faces.tolist():
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


_PLY_SCALAR = {
    "char": "b", "int8": "b",
    "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h",
    "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i",
    "uint": "I", "uint32": "I",
    "float": "f", "float32": "f",
    "double": "d", "float64": "d",
}


def _parse_ply_header(fh) -> tuple[str, list[tuple[str, int, list]], int]:
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise MeshParseError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements: list[tuple[str, int, list]] = []
    while True:
        line = fh.readline()
        if not line:
            raise MeshParseError("unterminated PLY header")
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] == "ascii":
                fmt = "ascii"
            elif tokens[1] == "binary_little_endian":
                fmt = "binary"
            else:
                raise MeshParseError(f"unsupported PLY format: {tokens[1]}")
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise MeshParseError("PLY property before any element")
            if tokens[1] == "list":
                elements[-1][2].append(("list", tokens[2], tokens[3], tokens[4]))
            else:
                elements[-1][2].append(("scalar", tokens[1], tokens[2]))
        elif tokens[0] == "end_header":
            break
        else:
            raise MeshParseError(f"unrecognized PLY header line: {line!r}")
    if fmt is None:
        raise MeshParseError("PLY header missing format line")
    return fmt, elements, fh.tell()


def load_ply(path, triangulate_quads: bool = False) -> Mesh:
    with open(path, "rb") as fh:
        fmt, elements, _ = _parse_ply_header(fh)
        vertices = None
        faces: list[tuple[int, int, int]] = []
        dropped = set()
        for name, count, props in elements:
            if fmt == "ascii":
                rows = [fh.readline().split() for _ in range(count)]
                if name == "vertex":
                    vertices, extra = _ascii_vertices(rows, props)
                    dropped |= extra
                elif name == "face":
                    faces = _ascii_faces(rows, props, triangulate_quads)
                else:
                    dropped.add(f"element {name}")
            else:
                if name == "vertex":
                    vertices, extra = _binary_vertices(fh, count, props)
                    dropped |= extra
                elif name == "face":
                    faces = _binary_faces(fh, count, props, triangulate_quads)
                else:
                    _skip_binary_element(fh, count, props)
                    dropped.add(f"element {name}")
    if vertices is None:
        raise MeshParseError(f"{path}: PLY file has no vertex element")
    if dropped:
        warnings.warn(f"{path}: dropped non-position attributes: {', '.join(sorted(dropped))}")
    return Mesh(vertices, np.array(faces, dtype=np.int64).reshape(-1, 3))


def _vertex_columns(props):
    cols = {}
    extra = set()
    for i, p in enumerate(props):
        if p[0] != "scalar":
            raise MeshParseError("list property in vertex element unsupported")
        if p[2] in ("x", "y", "z"):
            cols[p[2]] = i
        else:
            extra.add(f"vertex property {p[2]}")
    if sorted(cols) != ["x", "y", "z"]:
        raise MeshParseError("PLY vertex element lacks x/y/z properties")
    return cols, extra


def _ascii_vertices(rows, props):
    cols, extra = _vertex_columns(props)
    out = np.empty((len(rows), 3), dtype=np.float64)
    for r, row in enumerate(rows):
        out[r, 0] = float(row[cols["x"]])
        out[r, 1] = float(row[cols["y"]])
        out[r, 2] = float(row[cols["z"]])
    return out, extra


def _ascii_faces(rows, props, triangulate_quads):
    if len(props) != 1 or props[0][0] != "list":
        raise MeshParseError("PLY face element must be a single index list property")
    faces = []
    for r, row in enumerate(rows):
        n = int(row[0])
        idx = [int(t) for t in row[1 : 1 + n]]
        faces.extend(_fan_triangulate(idx, triangulate_quads, f"face {r}"))
    return faces


def _binary_vertices(fh, count, props):
    cols, extra = _vertex_columns(props)
    fmt = "<" + "".join(_PLY_SCALAR[p[1]] for p in props)
    size = struct.calcsize(fmt)
    data = fh.read(size * count)
    if len(data) != size * count:
        raise MeshParseError("truncated PLY vertex data")
    out = np.empty((count, 3), dtype=np.float64)
    for r, rec in enumerate(struct.iter_unpack(fmt, data)):
        out[r, 0] = rec[cols["x"]]
        out[r, 1] = rec[cols["y"]]
        out[r, 2] = rec[cols["z"]]
    return out, extra


def _binary_faces(fh, count, props, triangulate_quads):
    if len(props) != 1 or props[0][0] != "list":
        raise MeshParseError("PLY face element must be a single index list property")
    _, count_type, index_type, _ = props[0]
    cfmt = "<" + _PLY_SCALAR[count_type]
    ifmt = _PLY_SCALAR[index_type]
    csize = struct.calcsize(cfmt)
    isize = struct.calcsize("<" + ifmt)
    faces = []
    for r in range(count):
        raw = fh.read(csize)
        if len(raw) != csize:
            raise MeshParseError("truncated PLY face data")
        n = struct.unpack(cfmt, raw)[0]
        raw = fh.read(isize * n)
        if len(raw) != isize * n:
            raise MeshParseError("truncated PLY face data")
        idx = list(struct.unpack(f"<{n}{ifmt}", raw))
        faces.extend(_fan_triangulate(idx, triangulate_quads, f"face {r}"))
    return faces


def _skip_binary_element(fh, count, props):
    if any(p[0] == "list" for p in props):
        raise MeshParseError("cannot skip binary element with list properties")
    fmt = "<" + "".join(_PLY_SCALAR[p[1]] for p in props)
    fh.seek(struct.calcsize(fmt) * count, 1)


def save_ply(mesh: Mesh, path, binary: bool = True) -> None:
    """Write PLY with float64 positions; binary little-endian by default."""
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {mesh.n_faces}",
        "property list uchar uint32 vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
            if mesh.n_faces:
                rec = np.empty(mesh.n_faces, dtype=[("n", "u1"), ("idx", "<u4", 3)])
                rec["n"] = 3
                rec["idx"] = mesh.faces
                fh.write(rec.tobytes())
        else:
            lines = []
            for x, y, z in mesh.vertices.tolist():
                lines.append(f"{x!r} {y!r} {z!r}")
            for a, b, c in mesh.faces.tolist():
                lines.append(f"3 {a} {b} {c}")
            fh.write(("\n".join(lines) + "\n").encode("ascii"))
