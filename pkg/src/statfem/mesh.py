"""Interval and triangular meshes with essential-boundary tagging.

Meshes are immutable after construction.  Node coordinates live in an
``(n_nodes, dim)`` array, elements in an ``(n_elements, dim + 1)`` integer
array, and nodes carrying a homogeneous Dirichlet condition are collected in
a frozen set.  The unknowns of every solver in this package are the
coefficients at the non-Dirichlet ("free") nodes, ordered by node index.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

_FORMAT_HEADER = "statfem-mesh v1"
_PLATE_RESOURCE = "plate_hole_208.msh"


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    dirichlet_nodes: frozenset[int]
    h: float

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def free_nodes(self) -> np.ndarray:
        """Sorted indices of non-Dirichlet nodes; the unknown ordering."""
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[list(self.dirichlet_nodes)] = False
        return np.flatnonzero(mask)

    @cached_property
    def free_index(self) -> np.ndarray:
        """Global node index -> position among free nodes, -1 for Dirichlet."""
        idx = np.full(self.n_nodes, -1, dtype=int)
        idx[self.free_nodes] = np.arange(len(self.free_nodes))
        return idx

    @property
    def n_free(self) -> int:
        return len(self.free_nodes)


@dataclass(frozen=True)
class BarycentreSet:
    """Element barycentre coordinates, one row per element."""

    coords: np.ndarray


def _element_diameters(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    if elements.shape[1] == 2:
        return np.abs(nodes[elements[:, 1], 0] - nodes[elements[:, 0], 0])
    a, b, c = (nodes[elements[:, k]] for k in range(3))
    lengths = np.stack(
        [
            np.linalg.norm(b - a, axis=1),
            np.linalg.norm(c - b, axis=1),
            np.linalg.norm(a - c, axis=1),
        ]
    )
    return lengths.max(axis=0)


def triangle_areas(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Signed areas of triangles (positive for counter-clockwise order)."""
    a, b, c = (nodes[elements[:, k]] for k in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def boundary_nodes(nodes: np.ndarray, elements: np.ndarray) -> set[int]:
    """Nodes on the domain boundary.

    In 1D these are nodes used by exactly one segment; in 2D nodes of edges
    owned by exactly one triangle.
    """
    if elements.shape[1] == 2:
        counts = np.bincount(elements.ravel(), minlength=len(nodes))
        return set(np.flatnonzero(counts == 1).tolist())
    edge_count: dict[tuple[int, int], int] = {}
    for tri in elements:
        for i, j in ((0, 1), (1, 2), (2, 0)):
            key = (min(tri[i], tri[j]), max(tri[i], tri[j]))
            edge_count[key] = edge_count.get(key, 0) + 1
    out: set[int] = set()
    for (i, j), count in edge_count.items():
        if count == 1:
            out.add(int(i))
            out.add(int(j))
    return out


def make_mesh(nodes, elements, dirichlet_nodes) -> Mesh:
    """Validate raw arrays and build an immutable mesh.

    Triangles are reoriented counter-clockwise; degenerate elements and
    Dirichlet tags off the boundary are rejected.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    if nodes.ndim != 2 or nodes.shape[1] not in (1, 2):
        raise ValueError(f"nodes must be (n, 1) or (n, 2), got {nodes.shape}")
    elements = np.asarray(elements, dtype=int)
    if elements.ndim != 2 or elements.shape[1] != nodes.shape[1] + 1:
        raise ValueError(
            f"elements must have {nodes.shape[1] + 1} nodes each, got shape {elements.shape}"
        )
    if elements.min(initial=0) < 0 or elements.max(initial=-1) >= len(nodes):
        raise ValueError("element refers to a missing node")

    if elements.shape[1] == 2:
        lengths = nodes[elements[:, 1], 0] - nodes[elements[:, 0], 0]
        flip = lengths < 0
        if np.any(flip):
            elements = elements.copy()
            elements[flip] = elements[flip][:, ::-1]
        if np.any(np.abs(lengths) <= 0):
            raise ValueError("degenerate zero-length segment")
    else:
        areas = triangle_areas(nodes, elements)
        flip = areas < 0
        if np.any(flip):
            elements = elements.copy()
            elements[flip, 1], elements[flip, 2] = (
                elements[flip, 2].copy(),
                elements[flip, 1].copy(),
            )
        if np.any(np.abs(areas) <= 0):
            raise ValueError("degenerate zero-area triangle")

    dirichlet = frozenset(int(i) for i in dirichlet_nodes)
    if dirichlet and (min(dirichlet) < 0 or max(dirichlet) >= len(nodes)):
        raise ValueError("Dirichlet tag refers to a missing node")
    on_boundary = boundary_nodes(nodes, elements)
    stray = dirichlet - on_boundary
    if stray:
        raise ValueError(f"Dirichlet nodes {sorted(stray)} are not on the boundary")

    h = float(_element_diameters(nodes, elements).max())
    nodes = nodes.copy()
    nodes.setflags(write=False)
    elements = elements.copy()
    elements.setflags(write=False)
    return Mesh(nodes=nodes, elements=elements, dirichlet_nodes=dirichlet, h=h)


def build_interval_mesh(n_e: int) -> Mesh:
    """Uniform subdivision of (0, 1) into ``n_e`` segments, endpoints Dirichlet."""
    if n_e < 1:
        raise ValueError(f"need at least one element, got {n_e}")
    nodes = np.linspace(0.0, 1.0, n_e + 1).reshape(-1, 1)
    elements = np.column_stack([np.arange(n_e), np.arange(1, n_e + 1)])
    return make_mesh(nodes, elements, {0, n_e})


def barycentres(mesh: Mesh) -> BarycentreSet:
    """Arithmetic mean of each element's vertex coordinates."""
    coords = mesh.nodes[mesh.elements].mean(axis=1)
    return BarycentreSet(coords=coords)


def quadrisect(mesh: Mesh) -> Mesh:
    """Split every triangle into four using edge midpoints.

    Original nodes keep their indices.  An edge midpoint becomes Dirichlet
    only when its edge lies on the boundary and both endpoints are Dirichlet;
    interior edges between two Dirichlet nodes stay free.
    """
    if mesh.dim != 2:
        raise ValueError("quadrisection needs a triangulation; refine 1D meshes by rebuilding")

    edge_owner_count: dict[tuple[int, int], int] = {}
    for tri in mesh.elements:
        for i, j in ((0, 1), (1, 2), (2, 0)):
            key = (min(tri[i], tri[j]), max(tri[i], tri[j]))
            edge_owner_count[key] = edge_owner_count.get(key, 0) + 1

    new_nodes = [mesh.nodes]
    midpoint_index: dict[tuple[int, int], int] = {}
    next_index = mesh.n_nodes
    dirichlet = set(mesh.dirichlet_nodes)
    midpoints = []
    for key in sorted(edge_owner_count):
        i, j = key
        midpoint_index[key] = next_index
        midpoints.append(0.5 * (mesh.nodes[i] + mesh.nodes[j]))
        if edge_owner_count[key] == 1 and i in mesh.dirichlet_nodes and j in mesh.dirichlet_nodes:
            dirichlet.add(next_index)
        next_index += 1
    new_nodes.append(np.asarray(midpoints).reshape(-1, 2))

    children = []
    for a, b, c in mesh.elements:
        m_ab = midpoint_index[(min(a, b), max(a, b))]
        m_bc = midpoint_index[(min(b, c), max(b, c))]
        m_ca = midpoint_index[(min(c, a), max(c, a))]
        children.extend(
            [
                (a, m_ab, m_ca),
                (m_ab, b, m_bc),
                (m_ca, m_bc, c),
                (m_ab, m_bc, m_ca),
            ]
        )
    return make_mesh(np.vstack(new_nodes), np.asarray(children, dtype=int), dirichlet)


def write_mesh_file(mesh: Mesh, path) -> None:
    """Write the plain-text mesh format (see :func:`read_mesh_file`)."""
    lines = [f"{_FORMAT_HEADER} dim={mesh.dim}", f"nodes {mesh.n_nodes}"]
    for idx in range(mesh.n_nodes):
        coords = " ".join(f"{c:.17g}" for c in mesh.nodes[idx])
        tag = 1 if idx in mesh.dirichlet_nodes else 0
        lines.append(f"{idx} {coords} {tag}")
    lines.append(f"elements {mesh.n_elements}")
    for idx, element in enumerate(mesh.elements):
        lines.append(f"{idx} " + " ".join(str(int(n)) for n in element))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_mesh_text(text: str, origin: str) -> Mesh:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    if not rows or rows[0][:2] != ["statfem-mesh", "v1"] or not rows[0][2].startswith("dim="):
        raise ValueError(f"{origin}: expected header '{_FORMAT_HEADER} dim=<d>'")
    dim = int(rows[0][2].split("=", 1)[1])
    if dim not in (1, 2):
        raise ValueError(f"{origin}: unsupported dimension {dim}")
    if rows[1][0] != "nodes":
        raise ValueError(f"{origin}: missing node block")
    n_nodes = int(rows[1][1])
    nodes = np.empty((n_nodes, dim))
    dirichlet = set()
    for row in rows[2 : 2 + n_nodes]:
        idx = int(row[0])
        nodes[idx] = [float(v) for v in row[1 : 1 + dim]]
        if int(row[1 + dim]):
            dirichlet.add(idx)
    offset = 2 + n_nodes
    if rows[offset][0] != "elements":
        raise ValueError(f"{origin}: missing element block")
    n_elements = int(rows[offset][1])
    elements = np.empty((n_elements, dim + 1), dtype=int)
    for row in rows[offset + 1 : offset + 1 + n_elements]:
        elements[int(row[0])] = [int(v) for v in row[1:]]
    return make_mesh(nodes, elements, dirichlet)


def read_mesh_file(path) -> Mesh:
    """Read the plain-text format: header, node block, element block."""
    path = Path(path)
    return _parse_mesh_text(path.read_text(encoding="utf-8"), str(path))


def build_plate_with_hole(refinement_level: int = 0) -> Mesh:
    """Unit square with a circular hole, refined by repeated quadrisection.

    Level 0 is the bundled 208-element, 125-node base triangulation with the
    outer square edges held at zero and the hole boundary left free.  Each
    level multiplies the element count by four.
    """
    if refinement_level < 0:
        raise ValueError("refinement level must be non-negative")
    ref = resources.files("statfem").joinpath("data").joinpath(_PLATE_RESOURCE)
    if not ref.is_file():
        raise FileNotFoundError(f"bundled base mesh {_PLATE_RESOURCE} is missing")
    mesh = _parse_mesh_text(ref.read_text(encoding="utf-8"), _PLATE_RESOURCE)
    for _ in range(refinement_level):
        mesh = quadrisect(mesh)
    return mesh


def mesh_info(mesh: Mesh) -> dict:
    """Summary used by the command line inspector."""
    info = {
        "dim": mesh.dim,
        "nodes": mesh.n_nodes,
        "elements": mesh.n_elements,
        "dirichlet_nodes": len(mesh.dirichlet_nodes),
        "free_nodes": mesh.n_free,
        "h": mesh.h,
    }
    if mesh.dim == 2:
        info["area"] = float(np.abs(triangle_areas(mesh.nodes, mesh.elements)).sum())
    else:
        info["length"] = float(
            np.abs(mesh.nodes[mesh.elements[:, 1], 0] - mesh.nodes[mesh.elements[:, 0], 0]).sum()
        )
    return info
