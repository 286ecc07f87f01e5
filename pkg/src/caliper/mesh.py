"""Hexahedral meshes: structured generators, text I/O, validation.

Units are millimeters.  Node ordering follows the canonical Hex8
convention (counterclockwise bottom face, then top face); see
quadrature.VERTEX_XI.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quadrature
from .errors import (
    GenerationError,
    InvalidArgumentError,
    MeshParseError,
    MeshValidationError,
)

__all__ = [
    "HexMesh",
    "FACE_TABLE",
    "generate_box",
    "generate_plate_with_hole",
    "save_mesh",
    "load_mesh",
    "validate_mesh",
]

# Local faces of a Hex8, ordered so the right-hand rule gives the
# outward normal: zmin, zmax, ymin, xmax, ymax, xmin.
FACE_TABLE = np.array(
    [
        [0, 3, 2, 1],
        [4, 5, 6, 7],
        [0, 1, 5, 4],
        [1, 2, 6, 5],
        [2, 3, 7, 6],
        [0, 4, 7, 3],
    ]
)

_BOX_FACE_INDEX = {"zmin": 0, "zmax": 1, "ymin": 2, "xmax": 3, "ymax": 4, "xmin": 5}


@dataclass(frozen=True)
class HexMesh:
    """Immutable Hex8 mesh with named boundary node and side sets."""

    node_coords: np.ndarray  # (N, 3)
    elements: np.ndarray  # (E, 8) int
    node_sets: dict = field(default_factory=dict)
    side_sets: dict = field(default_factory=dict)

    def __post_init__(self):
        coords = np.ascontiguousarray(np.asarray(self.node_coords, dtype=np.float64))
        elems = np.ascontiguousarray(np.asarray(self.elements, dtype=np.int64))
        coords.setflags(write=False)
        elems.setflags(write=False)
        object.__setattr__(self, "node_coords", coords)
        object.__setattr__(self, "elements", elems)
        sets = {}
        for name, ids in self.node_sets.items():
            arr = np.asarray(sorted(int(i) for i in np.asarray(ids).ravel()), dtype=np.int64)
            arr.setflags(write=False)
            sets[name] = arr
        object.__setattr__(self, "node_sets", sets)

    @property
    def n_nodes(self):
        return self.node_coords.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def bounding_box(self):
        return self.node_coords.min(axis=0), self.node_coords.max(axis=0)

    def node_set(self, name):
        try:
            ids = self.node_sets[name]
        except KeyError:
            raise InvalidArgumentError(f"mesh has no node set {name!r}") from None
        if ids.size == 0:
            raise InvalidArgumentError(f"node set {name!r} is empty")
        return ids


def validate_mesh(mesh):
    """Check connectivity bounds and positive Jacobians; raise listing failures."""
    failures = []
    if mesh.elements.size and (
        mesh.elements.min() < 0 or mesh.elements.max() >= mesh.n_nodes
    ):
        bad = np.argwhere(
            (mesh.elements < 0) | (mesh.elements >= mesh.n_nodes)
        )
        e, slot = bad[0]
        failures.append(
            f"connectivity index {mesh.elements[e, slot]} out of range "
            f"[0, {mesh.n_nodes}) in element {e}"
        )
    for name, ids in mesh.node_sets.items():
        if ids.size and (ids.min() < 0 or ids.max() >= mesh.n_nodes):
            failures.append(f"node set {name!r} references out-of-range node")
    if not failures:
        _, det_j = quadrature.element_jacobians(mesh.node_coords, mesh.elements)
        bad = np.argwhere(det_j <= 0.0)
        for e, q in bad[:5]:
            failures.append(f"detJ <= 0 in element {e} (gauss point {q})")
    if failures:
        raise MeshValidationError(failures)


def generate_box(lengths, divisions):
    """Structured box on [0, L] per axis with the given element divisions.

    Creates node sets xmin/xmax/ymin/ymax/zmin/zmax on the six faces and
    matching side sets.
    """
    lengths = np.asarray(lengths, dtype=np.float64)
    divisions = tuple(int(d) for d in divisions)
    if lengths.shape != (3,) or np.any(lengths <= 0.0):
        raise InvalidArgumentError(f"box lengths must be positive, got {lengths}")
    if len(divisions) != 3 or any(d < 1 for d in divisions):
        raise InvalidArgumentError(f"divisions must be >= 1, got {divisions}")

    nx, ny, nz = divisions
    axes = [np.linspace(0.0, lengths[k], divisions[k] + 1) for k in range(3)]
    # node id = ix + (nx+1) * (iy + (ny+1) * iz)
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    coords = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    def nid(ix, iy, iz):
        return ix + (nx + 1) * (iy + (ny + 1) * iz)

    ex, ey, ez = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ex, ey, ez = ex.ravel(), ey.ravel(), ez.ravel()
    base = nid(ex, ey, ez)
    dx, dy = 1, nx + 1
    dz = (nx + 1) * (ny + 1)
    elements = np.stack(
        [
            base,
            base + dx,
            base + dx + dy,
            base + dy,
            base + dz,
            base + dx + dz,
            base + dx + dy + dz,
            base + dy + dz,
        ],
        axis=1,
    )

    ids = np.arange(coords.shape[0])
    node_sets = {
        "xmin": ids[coords[:, 0] == 0.0],
        "xmax": ids[coords[:, 0] == lengths[0]],
        "ymin": ids[coords[:, 1] == 0.0],
        "ymax": ids[coords[:, 1] == lengths[1]],
        "zmin": ids[coords[:, 2] == 0.0],
        "zmax": ids[coords[:, 2] == lengths[2]],
    }
    eids = np.arange(elements.shape[0])
    side_sets = {
        "xmin": [(int(e), _BOX_FACE_INDEX["xmin"]) for e in eids[ex == 0]],
        "xmax": [(int(e), _BOX_FACE_INDEX["xmax"]) for e in eids[ex == nx - 1]],
        "ymin": [(int(e), _BOX_FACE_INDEX["ymin"]) for e in eids[ey == 0]],
        "ymax": [(int(e), _BOX_FACE_INDEX["ymax"]) for e in eids[ey == ny - 1]],
        "zmin": [(int(e), _BOX_FACE_INDEX["zmin"]) for e in eids[ez == 0]],
        "zmax": [(int(e), _BOX_FACE_INDEX["zmax"]) for e in eids[ez == nz - 1]],
    }
    return HexMesh(coords, elements, node_sets, side_sets)


def _square_perimeter_points(width, height, n_side):
    """Counterclockwise perimeter walk with n_side segments per side,
    starting at the (0, 0) corner."""
    t = np.arange(n_side) / n_side
    bottom = np.stack([width * t, np.zeros(n_side)], axis=1)
    right = np.stack([np.full(n_side, width), height * t], axis=1)
    top = np.stack([width * (1.0 - t), np.full(n_side, height)], axis=1)
    left = np.stack([np.zeros(n_side), height * (1.0 - t)], axis=1)
    return np.concatenate([bottom, right, top, left], axis=0)


def generate_plate_with_hole(width, height, thickness, hole_radius, refinement=1):
    """Square plate with a centered circular hole, meshed as an all-hex
    O-grid ring between the hole circle and the outer rectangle.

    `refinement` scales radial, circumferential, and through-thickness
    divisions; refinement=1 lands in the few-hundred-element range.
    """
    if min(width, height, thickness) <= 0.0 or hole_radius <= 0.0:
        raise InvalidArgumentError("plate dimensions must be positive")
    if 2.0 * hole_radius >= min(width, height):
        raise InvalidArgumentError(
            f"hole diameter {2 * hole_radius} does not fit in plate "
            f"{width} x {height}"
        )
    refinement = int(refinement)
    if refinement < 0:
        raise InvalidArgumentError("refinement must be >= 0")
    n_r = 2 + refinement
    n_side = 6 + 4 * refinement
    n_z = 1 + refinement

    center = np.array([0.5 * width, 0.5 * height])
    outer = _square_perimeter_points(width, height, n_side)
    rel = outer - center
    theta = np.arctan2(rel[:, 1], rel[:, 0])
    inner = center + hole_radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)

    m = outer.shape[0]  # nodes per ring
    rings = np.linspace(0.0, 1.0, n_r + 1)
    plane = inner[None, :, :] + rings[:, None, None] * (outer - inner)[None, :, :]
    plane = plane.reshape(-1, 2)  # ring-major: (n_r+1) * m

    zs = np.linspace(0.0, thickness, n_z + 1)
    n_plane = plane.shape[0]
    coords = np.concatenate(
        [
            np.concatenate([plane, np.full((n_plane, 1), z)], axis=1)
            for z in zs
        ],
        axis=0,
    )

    def nid(layer, ring, j):
        return layer * n_plane + ring * m + (j % m)

    elements = []
    for k in range(n_z):
        for i in range(n_r):
            for j in range(m):
                q00 = nid(k, i, j)
                q10 = nid(k, i + 1, j)
                q11 = nid(k, i + 1, j + 1)
                q01 = nid(k, i, j + 1)
                elements.append(
                    [q00, q10, q11, q01,
                     q00 + n_plane, q10 + n_plane, q11 + n_plane, q01 + n_plane]
                )
    elements = np.asarray(elements, dtype=np.int64)

    _, det_j = quadrature.element_jacobians(coords, elements)
    if np.min(det_j) <= 0.0:
        e = int(np.argwhere(det_j <= 0.0)[0][0])
        raise GenerationError(
            f"plate mesher produced a degenerate element {e}", element=e
        )

    tol = 1e-9
    ids = np.arange(coords.shape[0])
    node_sets = {
        "hole": ids[(ids % n_plane) < m],
        "xmin": ids[np.abs(coords[:, 0]) < tol],
        "xmax": ids[np.abs(coords[:, 0] - width) < tol],
        "ymin": ids[np.abs(coords[:, 1]) < tol],
        "ymax": ids[np.abs(coords[:, 1] - height) < tol],
        "zmin": ids[np.abs(coords[:, 2]) < tol],
        "zmax": ids[np.abs(coords[:, 2] - thickness) < tol],
    }
    return HexMesh(coords, elements, node_sets)


def save_mesh(mesh, path):
    """Write the versioned whitespace-delimited text format."""
    lines = ["caliper-mesh v1", f"nodes {mesh.n_nodes}"]
    for i, (x, y, z) in enumerate(mesh.node_coords):
        lines.append(f"{i} {float(x)!r} {float(y)!r} {float(z)!r}")
    lines.append(f"elements {mesh.n_elements}")
    for conn in mesh.elements:
        lines.append(" ".join(str(int(n)) for n in conn))
    for name in sorted(mesh.node_sets):
        ids = mesh.node_sets[name]
        lines.append(f"nodeset {name} {ids.size}")
        lines.append(" ".join(str(int(n)) for n in ids))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


class _TokenStream:
    def __init__(self, text):
        self.tokens = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.tokens.append((tok, lineno))
        self.pos = 0
        self.last_line = 0

    def next(self, field):
        if self.pos >= len(self.tokens):
            raise MeshParseError("unexpected end of file", line=self.last_line, field=field)
        tok, line = self.tokens[self.pos]
        self.pos += 1
        self.last_line = line
        return tok, line

    def expect_int(self, field):
        tok, line = self.next(field)
        try:
            return int(tok)
        except ValueError:
            raise MeshParseError(f"expected integer, got {tok!r}", line=line, field=field) from None

    def expect_float(self, field):
        tok, line = self.next(field)
        try:
            return float(tok)
        except ValueError:
            raise MeshParseError(f"expected number, got {tok!r}", line=line, field=field) from None

    def expect_keyword(self, word):
        tok, line = self.next(word)
        if tok != word:
            raise MeshParseError(f"expected {word!r}, got {tok!r}", line=line, field=word)


def load_mesh(path):
    """Parse, then validate; load(save(m)) is bit-exact on coordinates
    and connectivity."""
    with open(path) as fh:
        text = fh.read()
    stream = _TokenStream(text)
    stream.expect_keyword("caliper-mesh")
    tok, line = stream.next("version")
    if tok != "v1":
        raise MeshParseError(f"unsupported version {tok!r}", line=line, field="version")

    stream.expect_keyword("nodes")
    n_nodes = stream.expect_int("nodes")
    coords = np.empty((n_nodes, 3))
    for i in range(n_nodes):
        nid = stream.expect_int("node id")
        if nid != i:
            raise MeshParseError(
                f"node ids must be consecutive from 0, got {nid}",
                line=stream.last_line,
                field="node id",
            )
        for k in range(3):
            coords[i, k] = stream.expect_float("coordinate")

    stream.expect_keyword("elements")
    n_elements = stream.expect_int("elements")
    elements = np.empty((n_elements, 8), dtype=np.int64)
    for e in range(n_elements):
        for k in range(8):
            elements[e, k] = stream.expect_int("connectivity")

    node_sets = {}
    while stream.pos < len(stream.tokens):
        stream.expect_keyword("nodeset")
        name, _ = stream.next("nodeset name")
        count = stream.expect_int("nodeset count")
        node_sets[name] = np.array(
            [stream.expect_int("nodeset id") for _ in range(count)], dtype=np.int64
        )

    mesh = HexMesh(coords, elements, node_sets)
    validate_mesh(mesh)
    return mesh
