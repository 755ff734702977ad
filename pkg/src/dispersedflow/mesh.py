"""
Structured quadrilateral meshes with isoparametric geometry.

Conventions
-----------
Reference element is [-1, 1]^2.  Corner nodes are numbered counterclockwise
starting at (-1, -1).  Geometric Q2 elements append the four edge midpoints
(edge k joins corner k and corner k+1) and the centre node, which is the node
order of the legacy VTK biquadratic quad (cell type 28).  Local edge k is the
edge between corners k and (k + 1) % 4, so edge 0 is eta = -1, edge 1 is
xi = 1, edge 2 is eta = 1 and edge 3 is xi = -1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# reference coordinates of the geometric nodes, in local node order
Q1_NODES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
Q2_NODES = np.array([
    [-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0],
    [0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0],
    [0.0, 0.0],
])
EDGE_CORNERS = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """A conforming 2D quadrilateral mesh.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array
    elements : (n_elements, 4 or 9) int array of geometric node ids
    boundary_facets : (n_facets, 2) int array of (element, local edge)
    facet_markers : tuple of str, one label per boundary facet
    geometric_degree : 1 or 2
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    facet_markers: tuple
    geometric_degree: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.elements.setflags(write=False)
        self.boundary_facets.setflags(write=False)
        if self.elements.shape[1] != (4 if self.geometric_degree == 1 else 9):
            raise MeshError("element connectivity does not match geometric degree")
        if len(self.facet_markers) != len(self.boundary_facets):
            raise MeshError("one marker per boundary facet is required")

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def corners(self) -> np.ndarray:
        return self.elements[:, :4]

    @property
    def markers(self) -> set:
        return set(self.facet_markers)

    def facets_with(self, markers) -> np.ndarray:
        """Boundary facets (element, local edge) carrying one of `markers`."""
        if isinstance(markers, str):
            markers = {markers}
        mask = np.array([m in markers for m in self.facet_markers], dtype=bool)
        return self.boundary_facets[mask]

    # -- geometry -----------------------------------------------------------

    def map_points(self, ref: np.ndarray) -> np.ndarray:
        """Physical coordinates (E, P, 2) of reference points (P, 2)."""
        from .fem.basis import lagrange_basis

        shape = lagrange_basis(self.geometric_degree, ref)[0]
        return np.einsum("pi,eid->epd", shape, self.nodes[self.elements])

    def jacobians(self, ref: np.ndarray) -> np.ndarray:
        """Jacobians (E, P, 2, 2) with J[..., a, r] = d x_a / d xi_r."""
        from .fem.basis import lagrange_basis

        dshape = lagrange_basis(self.geometric_degree, ref)[1]
        return np.einsum("pir,eia->epar", dshape, self.nodes[self.elements])

    def min_jacobian(self, quad_order: int = 6) -> float:
        from .fem.quadrature import gauss_rule

        rule = gauss_rule(quad_order)
        return float(np.linalg.det(self.jacobians(rule.points)).min())

    def area(self, quad_order: int = 6) -> float:
        from .fem.quadrature import gauss_rule

        rule = gauss_rule(quad_order)
        det = np.linalg.det(self.jacobians(rule.points))
        return float(np.sum(det * rule.weights))

    # -- topology -------------------------------------------------------------

    @cached_property
    def edge_table(self):
        """Unique edges as sorted corner pairs, and element -> edge ids (E, 4)."""
        pairs = self.corners[:, EDGE_CORNERS]  # (E, 4, 2)
        keys = np.sort(pairs, axis=2).reshape(-1, 2)
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        return unique, inverse.reshape(-1, 4)

    def check_conformity(self) -> None:
        """Raise MeshError if edges are not shared consistently.

        Interior edges must be shared by exactly two elements traversing them
        in opposite directions and, for Q2 geometry, agreeing on the midside
        node.  Edges owned by a single element must be boundary facets.
        """
        unique, elem_edges = self.edge_table
        n_edges = len(unique)
        counts = np.bincount(elem_edges.ravel(), minlength=n_edges)
        if counts.max() > 2:
            raise MeshError("edge shared by more than two elements")
        pairs = self.corners[:, EDGE_CORNERS]
        first = {}
        for e in range(self.n_elements):
            for k in range(4):
                eid = elem_edges[e, k]
                if eid in first:
                    e0, k0 = first[eid]
                    a0, b0 = pairs[e0, k0]
                    a1, b1 = pairs[e, k]
                    if not (a0 == b1 and b0 == a1):
                        raise MeshError(f"edge {eid} traversed in the same direction twice")
                    if self.geometric_degree == 2 and self.elements[e0, 4 + k0] != self.elements[e, 4 + k]:
                        raise MeshError(f"edge {eid} has mismatched midside nodes")
                else:
                    first[eid] = (e, k)
        boundary = {int(elem_edges[e, k]) for e, k in self.boundary_facets}
        if len(boundary) != len(self.boundary_facets):
            raise MeshError("duplicate boundary facet")
        single = set(np.flatnonzero(counts == 1).tolist())
        if single != boundary:
            raise MeshError("boundary facets do not match the edges owned by one element")


def _merge_nodes(coords: np.ndarray, elements: np.ndarray, scale: float):
    """Merge coincident nodes (block interfaces, periodic seams)."""
    key = np.round(coords / (scale * 1e-9)).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    # keep the first occurrence order for determinism
    order = np.argsort(first)
    renumber = np.empty_like(order)
    renumber[order] = np.arange(len(order))
    new_coords = coords[first[order]]
    return new_coords, renumber[inverse][elements]


def _check_positive(mesh: Mesh) -> Mesh:
    if mesh.min_jacobian(8) <= 0.0:
        raise MeshError("mesh has non-positive Jacobian determinants")
    return mesh


def build_rectangle(nx: int, ny: int, x_range=(0.0, 1.0), y_range=(0.0, 1.0), markers=None) -> Mesh:
    """Axis-aligned nx-by-ny mesh of bilinear quads.

    `markers` maps the sides "bottom", "right", "top", "left" to labels; by
    default each side is labelled with its own name.
    """
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    (x0, x1), (y0, y1) = x_range, y_range
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate range x={x_range}, y={y_range}")
    labels = {"bottom": "bottom", "right": "right", "top": "top", "left": "left"}
    labels.update(markers or {})

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    n0 = j * (nx + 1) + i
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])

    facets, names = [], []
    for side, edge, sel in (
        ("bottom", 0, j == 0),
        ("right", 1, i == nx - 1),
        ("top", 2, j == ny - 1),
        ("left", 3, i == 0),
    ):
        for e in np.flatnonzero(sel):
            facets.append((e, edge))
            names.append(labels[side])
    return Mesh(nodes, elements, np.array(facets, dtype=np.int64), tuple(names), 1)


def straight_sided(mesh: Mesh) -> Mesh:
    """The same mesh with bilinear geometry: midside and centre nodes dropped."""
    if mesh.geometric_degree == 1:
        return mesh
    corners = mesh.elements[:, :4]
    used, inverse = np.unique(corners, return_inverse=True)
    out = Mesh(mesh.nodes[used], inverse.reshape(corners.shape), mesh.boundary_facets, mesh.facet_markers, 1)
    return _check_positive(out)


def _q2_block(mapping, n1: int, n2: int):
    """Q2 elements for a logically rectangular block.

    `mapping(s, t)` takes parameter arrays in [0, 1] and returns (x, y).
    Returns node coordinates ((2 n1 + 1) * (2 n2 + 1), 2) and elements.
    """
    s = np.linspace(0.0, 1.0, 2 * n1 + 1)
    t = np.linspace(0.0, 1.0, 2 * n2 + 1)
    S, T = np.meshgrid(s, t)
    x, y = mapping(S.ravel(), T.ravel())
    coords = np.column_stack([x, y])
    stride = 2 * n1 + 1

    def nid(a, b):
        return b * stride + a

    elems = []
    for jb in range(n2):
        for ib in range(n1):
            a, b = 2 * ib, 2 * jb
            elems.append([
                nid(a, b), nid(a + 2, b), nid(a + 2, b + 2), nid(a, b + 2),
                nid(a + 1, b), nid(a + 2, b + 1), nid(a + 1, b + 2), nid(a, b + 1),
                nid(a + 1, b + 1),
            ])
    return coords, np.array(elems, dtype=np.int64)


def build_annulus(nr: int, ntheta: int, r_inner: float, r_outer: float, geometric_degree: int = 2) -> Mesh:
    """Polar-mapped annulus with markers "inner" and "outer".

    Q2 geometry by default; ``geometric_degree=1`` gives straight-sided
    elements with all corner nodes on the polar grid.
    """
    if geometric_degree not in (1, 2):
        raise MeshError("geometric degree must be 1 or 2")
    if r_inner <= 0.0 or r_inner >= r_outer:
        raise MeshError(f"need 0 < r_inner < r_outer, got {r_inner}, {r_outer}")
    if nr < 1 or ntheta < 3:
        raise MeshError("need nr >= 1 and ntheta >= 3")

    def polar(s, t):
        r = r_inner + (r_outer - r_inner) * s
        th = 2.0 * np.pi * t
        return r * np.cos(th), r * np.sin(th)

    coords, elements = _q2_block(polar, nr, ntheta)
    coords, elements = _merge_nodes(coords, elements, r_outer)
    facets, names = [], []
    for e in range(elements.shape[0]):
        ir = e % nr
        if ir == 0:
            facets.append((e, 3))
            names.append("inner")
        if ir == nr - 1:
            facets.append((e, 1))
            names.append("outer")
    mesh = _check_positive(Mesh(coords, elements, np.array(facets, dtype=np.int64), tuple(names), 2))
    return mesh if geometric_degree == 2 else straight_sided(mesh)


def build_disk(n_ring: int, n_core: int, radius: float = 1.0, core_fraction: float = 0.5) -> Mesh:
    """Five-block O-grid of a disk with Q2 geometry, marker "boundary".

    A square core of half-width ``core_fraction * radius / sqrt(2)`` holds
    n_core x n_core elements; four ring blocks of n_core x n_ring elements
    blend linearly from the core sides to the circle.  The element count is
    n_core**2 + 4 * n_core * n_ring.
    """
    if n_ring < 1 or n_core < 1:
        raise MeshError("n_ring and n_core must be at least 1")
    if radius <= 0.0:
        raise MeshError("radius must be positive")
    half = core_fraction * radius / np.sqrt(2.0)

    blocks = []

    def core(s, t):
        return -half + 2 * half * s, -half + 2 * half * t

    blocks.append(_q2_block(core, n_core, n_core))

    # east block: s runs radially outwards, t counterclockwise along the side
    def east(s, t):
        xs, ys = half * np.ones_like(t), -half + 2 * half * t
        th = -0.25 * np.pi + 0.5 * np.pi * t
        xc, yc = radius * np.cos(th), radius * np.sin(th)
        return (1 - s) * xs + s * xc, (1 - s) * ys + s * yc

    ring_offsets = []
    for quarter in range(4):
        c, sn = np.cos(0.5 * np.pi * quarter), np.sin(0.5 * np.pi * quarter)

        def rotated(s, t, c=c, sn=sn):
            x, y = east(s, t)
            return c * x - sn * y, sn * x + c * y

        ring_offsets.append(sum(len(b[1]) for b in blocks))
        blocks.append(_q2_block(rotated, n_ring, n_core))

    coords, elements, shift = [], [], 0
    for xy, el in blocks:
        coords.append(xy)
        elements.append(el + shift)
        shift += len(xy)
    coords, elements = _merge_nodes(np.vstack(coords), np.vstack(elements), radius)

    facets = []
    for off in ring_offsets:
        for jt in range(n_core):
            facets.append((off + jt * n_ring + n_ring - 1, 1))
    mesh = Mesh(coords, elements, np.array(facets, dtype=np.int64), ("boundary",) * len(facets), 2)
    return _check_positive(mesh)


def disk_resolution(n_elements: int) -> tuple[int, int]:
    """(n_ring, n_core) with n_core = 2 n_ring closest to a target element count."""
    n_ring = max(1, int(round(np.sqrt(n_elements / 12.0))))
    return n_ring, 2 * n_ring
