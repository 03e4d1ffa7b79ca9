"""Generate the bundled plate-with-hole base mesh.

Builds a 125-node, 208-element triangulation of the unit square with a
circular hole of radius 0.2 centred at (0.5, 0.5).  Nodes sit on six
concentric rings (14 on the hole, then 17, 20, 22, 24 blending outwards,
28 on the square, i.e. seven segments per side) and each annular band is
triangulated by an angular two-pointer merge, giving a + b triangles
between rings of a and b nodes: 42 + 2*(17+20+22+24) = 208.

Boundary conditions: the outer square edges are essential (value pinned to
zero), the hole boundary is left natural.

Run from the repository root:

    python scripts/make_plate_mesh.py
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from statfem.mesh import boundary_nodes, make_mesh, triangle_areas, write_mesh_file

CENTRE = np.array([0.5, 0.5])
HOLE_RADIUS = 0.2
RING_SIZES = [14, 17, 20, 22, 24, 28]
OUT_PATH = Path(__file__).resolve().parents[1] / "src" / "statfem" / "data" / "plate_hole_208.msh"


def square_radius(theta: np.ndarray) -> np.ndarray:
    """Distance from the centre to the unit-square boundary along ``theta``."""
    return 0.5 / np.maximum(np.abs(np.cos(theta)), np.abs(np.sin(theta)))


def ring_points(index: int) -> np.ndarray:
    n = RING_SIZES[index]
    last = len(RING_SIZES) - 1
    if index == last:
        # Outer ring: uniform by perimeter so the four corners are nodes.
        s = np.arange(n) * 4.0 / n
        pts = np.empty((n, 2))
        for k, val in enumerate(s):
            side, frac = int(val), val - int(val)
            if side == 0:
                pts[k] = (frac, 0.0)
            elif side == 1:
                pts[k] = (1.0, frac)
            elif side == 2:
                pts[k] = (1.0 - frac, 1.0)
            else:
                pts[k] = (0.0, 1.0 - frac)
        return pts
    theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    t = index / last
    radius = HOLE_RADIUS + t * (square_radius(theta) - HOLE_RADIUS)
    return CENTRE + radius[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])


def angles_about_centre(pts: np.ndarray) -> np.ndarray:
    rel = pts - CENTRE
    return np.mod(np.arctan2(rel[:, 1], rel[:, 0]), 2.0 * np.pi)


def merge_band(inner_ids, inner_ang, outer_ids, outer_ang):
    """Triangulate the annular band between two rings sorted by angle.

    Two pointers walk both rings in increasing angle relative to the first
    inner node; at each step the ring whose next node comes first is
    advanced, emitting one triangle.  Produces ``m + n`` triangles.
    """
    m, n = len(inner_ids), len(outer_ids)
    # Rotate the outer ring so its first node follows inner node 0 in angle.
    shift = int(np.argmin(np.mod(outer_ang - inner_ang[0], 2.0 * np.pi)))
    outer_ids = np.roll(outer_ids, -shift)
    outer_ang = np.roll(outer_ang, -shift)

    rel_inner = np.mod(inner_ang - inner_ang[0], 2.0 * np.pi)
    rel_outer = np.mod(outer_ang - inner_ang[0], 2.0 * np.pi)

    def next_angle(rel, k):
        size = len(rel)
        return rel[k % size] + 2.0 * np.pi * (k // size)

    tris = []
    ai = bi = 0
    while ai < m or bi < n:
        if ai < m and bi < n:
            advance_inner = next_angle(rel_inner, ai + 1) <= next_angle(rel_outer, bi + 1)
        else:
            advance_inner = ai < m
        if advance_inner:
            tris.append((inner_ids[ai % m], inner_ids[(ai + 1) % m], outer_ids[bi % n]))
            ai += 1
        else:
            tris.append((inner_ids[ai % m], outer_ids[(bi + 1) % n], outer_ids[bi % n]))
            bi += 1
    return tris


def main() -> None:
    rings = [ring_points(k) for k in range(len(RING_SIZES))]
    nodes = np.vstack(rings)
    offsets = np.cumsum([0] + RING_SIZES)

    elements = []
    for k in range(len(RING_SIZES) - 1):
        inner_ids = np.arange(offsets[k], offsets[k + 1])
        outer_ids = np.arange(offsets[k + 1], offsets[k + 2])
        inner_ang = angles_about_centre(nodes[inner_ids])
        outer_ang = angles_about_centre(nodes[outer_ids])
        inner_order = np.argsort(inner_ang)
        outer_order = np.argsort(outer_ang)
        elements.extend(
            merge_band(
                inner_ids[inner_order],
                inner_ang[inner_order],
                outer_ids[outer_order],
                outer_ang[outer_order],
            )
        )

    dirichlet = set(range(offsets[-2], offsets[-1]))  # outer square ring
    mesh = make_mesh(nodes, np.asarray(elements, dtype=int), dirichlet)

    areas = triangle_areas(mesh.nodes, mesh.elements)
    boundary = boundary_nodes(mesh.nodes, mesh.elements)
    expected_boundary = RING_SIZES[0] + RING_SIZES[-1]
    checks = {
        "nodes": (mesh.n_nodes, 125),
        "elements": (mesh.n_elements, 208),
        "boundary nodes": (len(boundary), expected_boundary),
        "dirichlet nodes": (len(mesh.dirichlet_nodes), RING_SIZES[-1]),
    }
    for name, (got, want) in checks.items():
        if got != want:
            raise SystemExit(f"{name}: got {got}, want {want}")
    if areas.min() <= 0:
        raise SystemExit(f"degenerate triangle, min area {areas.min():.3e}")
    hole_area = 0.5 * RING_SIZES[0] * HOLE_RADIUS**2 * np.sin(2 * np.pi / RING_SIZES[0])
    total = areas.sum()
    if abs(total - (1.0 - hole_area)) > 1e-12:
        raise SystemExit(f"area mismatch: {total} vs {1.0 - hole_area}")

    OUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    write_mesh_file(mesh, OUT_PATH)
    print(f"wrote {OUT_PATH}")
    print(
        f"nodes={mesh.n_nodes} elements={mesh.n_elements} h={mesh.h:.4f} "
        f"area={total:.6f} min_area={areas.min():.3e}"
    )


if __name__ == "__main__":
    main()
