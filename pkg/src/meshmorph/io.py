"""Gmsh MSH 2.2 (ASCII) input/output and legacy VTK output."""
import numpy as np

from .errors import MeshError, MeshFormatError
from .mesh import (
    SimplicialMesh,
    check_closed_manifold,
    orient_boundary_facets,
    signed_volumes,
)

# gmsh element type -> number of nodes
_GMSH_NODES = {1: 2, 2: 3, 4: 4, 15: 1}
_VTK_CELL = {2: 5, 3: 10}


def _sections(lines):
    """Yield (name, start_line_no, body) for every $Section ... $EndSection."""
    i = 0
    while i < len(lines):
        s = lines[i].strip()
        if not s:
            i += 1
            continue
        if not s.startswith("$") or s.startswith("$End"):
            raise MeshFormatError(f"unexpected content {s!r}", i + 1)
        name = s[1:]
        end = "$End" + name
        j = i + 1
        while j < len(lines) and lines[j].strip() != end:
            j += 1
        if j == len(lines):
            raise MeshFormatError(f"section ${name} not terminated", i + 1)
        yield name, i + 2, lines[i + 1:j]
        i = j + 1


def load_msh(path):
    """Read an ASCII Gmsh 2.2 file into a validated, positively oriented mesh.

    Triangles (type 2) become cells in 2D; when tetrahedra (type 4) are
    present they are the cells and triangles are the boundary facets.  The
    first element tag is the physical marker.  Point elements (type 15) are
    ignored; nodes not used by any cell are dropped.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    nodes = elements = None
    for name, first, body in _sections(lines):
        if name == "MeshFormat":
            parts = body[0].split() if body else []
            if len(parts) < 3 or parts[0] not in ("2.2", "2.1", "2"):
                raise MeshFormatError(f"unsupported mesh format {body[:1]}", first)
            if parts[1] != "0":
                raise MeshFormatError("binary MSH files are not supported", first)
        elif name == "Nodes":
            nodes = _parse_nodes(body, first)
        elif name == "Elements":
            elements = _parse_elements(body, first)
    if nodes is None or elements is None:
        raise MeshFormatError("missing $Nodes or $Elements section")
    ids, coords = nodes
    index = {nid: k for k, nid in enumerate(ids)}

    def remap(conn, line):
        try:
            return [index[c] for c in conn]
        except KeyError as exc:
            raise MeshFormatError(f"element references unknown node {exc.args[0]}", line) from None

    by_type = {1: [], 2: [], 4: []}
    tags = {1: [], 2: [], 4: []}
    for etype, tag, conn, line in elements:
        if etype == 15:
            continue
        by_type[etype].append(remap(conn, line))
        tags[etype].append(tag)

    if by_type[4]:
        dim, ctype, ftype = 3, 4, 2
        pts = coords
    elif by_type[2]:
        dim, ctype, ftype = 2, 2, 1
        pts = coords[:, :2]
    else:
        raise MeshFormatError("no triangle or tetrahedron elements found")
    cells = np.array(by_type[ctype], dtype=np.int64)
    facets = np.array(by_type[ftype], dtype=np.int64).reshape(-1, dim)
    markers = np.array(tags[ftype], dtype=np.int64)

    used = np.unique(cells)
    if len(facets) and not np.all(np.isin(facets, used)):
        raise MeshError("boundary element references a vertex not used by any cell")
    renum = -np.ones(len(pts), dtype=np.int64)
    renum[used] = np.arange(len(used))
    pts = pts[used]
    cells = renum[cells]
    facets = renum[facets]

    vol = signed_volumes(pts, cells)
    if np.any(vol == 0):
        raise MeshError(f"{int(np.sum(vol == 0))} degenerate (zero volume) cells")
    flip = vol < 0
    cells[flip, 0], cells[flip, 1] = cells[flip, 1].copy(), cells[flip, 0].copy()

    mesh = SimplicialMesh(pts, cells, facets, markers)
    mesh.validate()
    mesh.boundary_facets = orient_boundary_facets(mesh)
    check_closed_manifold(mesh.boundary_facets, dim)
    return mesh


def _parse_nodes(body, first):
    try:
        n = int(body[0])
    except (IndexError, ValueError):
        raise MeshFormatError("bad node count", first) from None
    if len(body) < n + 1:
        raise MeshFormatError("truncated $Nodes section", first)
    ids = np.empty(n, dtype=np.int64)
    xyz = np.empty((n, 3))
    for k in range(n):
        parts = body[k + 1].split()
        try:
            ids[k] = int(parts[0])
            xyz[k] = [float(v) for v in parts[1:4]]
        except (IndexError, ValueError):
            raise MeshFormatError(f"cannot parse node {body[k + 1]!r}", first + k + 1) from None
    return ids, xyz


def _parse_elements(body, first):
    try:
        n = int(body[0])
    except (IndexError, ValueError):
        raise MeshFormatError("bad element count", first) from None
    if len(body) < n + 1:
        raise MeshFormatError("truncated $Elements section", first)
    out = []
    for k in range(n):
        line = first + k + 1
        try:
            parts = [int(v) for v in body[k + 1].split()]
            etype, ntags = parts[1], parts[2]
        except (IndexError, ValueError):
            raise MeshFormatError(f"cannot parse element {body[k + 1]!r}", line) from None
        if etype not in _GMSH_NODES:
            raise MeshFormatError(f"unsupported element type {etype}", line)
        conn = parts[3 + ntags:]
        if len(conn) != _GMSH_NODES[etype]:
            raise MeshFormatError(
                f"element type {etype} needs {_GMSH_NODES[etype]} nodes, got {len(conn)}", line
            )
        tag = parts[3] if ntags > 0 else 0
        out.append((etype, tag, conn, line))
    return out


def save_msh(mesh, path):
    """Write ``mesh`` as ASCII Gmsh 2.2 (facets first, then cells)."""
    ftype, ctype = (1, 2) if mesh.dim == 2 else (2, 4)
    with open(path, "w") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n")
        fh.write(f"{mesh.n_vertices}\n")
        for k, x in enumerate(mesh.vertices):
            xyz = list(x) + [0.0] * (3 - mesh.dim)
            fh.write(f"{k + 1} " + " ".join(repr(float(c)) for c in xyz) + "\n")
        fh.write("$EndNodes\n$Elements\n")
        fh.write(f"{len(mesh.boundary_facets) + mesh.n_cells}\n")
        eid = 1
        for f, m in zip(mesh.boundary_facets, mesh.markers):
            fh.write(f"{eid} {ftype} 2 {m} {m} " + " ".join(str(v + 1) for v in f) + "\n")
            eid += 1
        for c in mesh.cells:
            fh.write(f"{eid} {ctype} 2 0 0 " + " ".join(str(v + 1) for v in c) + "\n")
            eid += 1
        fh.write("$EndElements\n")


def _pad3(a):
    a = np.asarray(a, dtype=float)
    if a.shape[1] == 3:
        return a
    return np.column_stack([a, np.zeros((len(a), 3 - a.shape[1]))])


def _fmt(x):
    return repr(float(x))


def write_vtk(mesh, fields=None, path=None, cell_fields=None, title="meshmorph"):
    """Write a legacy ASCII VTK unstructured grid.

    ``fields`` maps names to per-vertex arrays, shape (N,) for scalars or
    (N, dim) for vectors; blocks appear in insertion order.  ``cell_fields``
    does the same for per-cell data.
    """
    fields = dict(fields or {})
    cell_fields = dict(cell_fields or {})
    for name, arr in fields.items():
        if len(arr) != mesh.n_vertices:
            raise MeshError(f"field {name!r} has {len(arr)} values for {mesh.n_vertices} vertices")
    for name, arr in cell_fields.items():
        if len(arr) != mesh.n_cells:
            raise MeshError(f"cell field {name!r} has {len(arr)} values for {mesh.n_cells} cells")
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {mesh.n_vertices} double")
    out.extend(" ".join(_fmt(c) for c in x) for x in _pad3(mesh.vertices))
    k = mesh.dim + 1
    out.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (k + 1)}")
    out.extend(f"{k} " + " ".join(str(v) for v in c) for c in mesh.cells)
    out.append(f"CELL_TYPES {mesh.n_cells}")
    out.extend([str(_VTK_CELL[mesh.dim])] * mesh.n_cells)
    for header, n, data in (("POINT_DATA", mesh.n_vertices, fields), ("CELL_DATA", mesh.n_cells, cell_fields)):
        if not data:
            continue
        out.append(f"{header} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise MeshError(f"field {name!r} has non-finite values")
            if arr.ndim == 1:
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(_fmt(v) for v in arr)
            else:
                out.append(f"VECTORS {name} double")
                out.extend(" ".join(_fmt(c) for c in v) for v in _pad3(arr))
    text = "\n".join(out) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def read_vtk(path):
    """Parse a file produced by :func:`write_vtk`.

    Returns ``(points (N, 3), cells, point_data, cell_data)``.
    """
    with open(path) as fh:
        tok = fh.read().split("\n")
    i = 4
    points = cells = None
    data = {"POINT_DATA": {}, "CELL_DATA": {}}
    current = None
    while i < len(tok):
        words = tok[i].split()
        i += 1
        if not words:
            continue
        head = words[0]
        if head == "POINTS":
            n = int(words[1])
            points = np.array([[float(v) for v in tok[i + k].split()] for k in range(n)])
            i += n
        elif head == "CELLS":
            n = int(words[1])
            cells = np.array([[int(v) for v in tok[i + k].split()[1:]] for k in range(n)])
            i += n
        elif head == "CELL_TYPES":
            i += int(words[1])
        elif head in ("POINT_DATA", "CELL_DATA"):
            current = head
            count = int(words[1])
        elif head == "SCALARS":
            i += 1  # LOOKUP_TABLE
            data[current][words[1]] = np.array([float(tok[i + k]) for k in range(count)])
            i += count
        elif head == "VECTORS":
            data[current][words[1]] = np.array(
                [[float(v) for v in tok[i + k].split()] for k in range(count)]
            )
            i += count
        else:
            raise MeshFormatError(f"unexpected VTK keyword {head!r}", i)
    return points, cells, data["POINT_DATA"], data["CELL_DATA"]
