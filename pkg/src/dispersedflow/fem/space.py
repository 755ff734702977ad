"""Lagrange spaces on quadrilateral meshes and coefficient vectors living in them."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..mesh import EDGE_CORNERS, Mesh
from .basis import lagrange_basis, reference_nodes
from .quadrature import QuadRule, gauss_rule_1d


@dataclass(frozen=True, eq=False)
class Geometry:
    """Mapping data of every element at the points of one quadrature rule."""

    x: np.ndarray  # (E, Q, 2)
    jac: np.ndarray  # (E, Q, 2, 2), jac[..., a, r] = dx_a / dxi_r
    inv_jac: np.ndarray  # (E, Q, 2, 2), inv_jac[..., r, a] = dxi_r / dx_a
    det: np.ndarray  # (E, Q)
    dx: np.ndarray  # (E, Q) quadrature weight times |det J|


def geometry(mesh: Mesh, rule: QuadRule) -> Geometry:
    key = ("geometry", rule.n_points)
    if key not in mesh._cache:
        jac = mesh.jacobians(rule.points)
        det = np.linalg.det(jac)
        if det.min() <= 0.0:
            raise ValueError("non-positive Jacobian at a quadrature point")
        mesh._cache[key] = Geometry(
            x=mesh.map_points(rule.points),
            jac=jac,
            inv_jac=np.linalg.inv(jac),
            det=det,
            dx=det * rule.weights,
        )
    return mesh._cache[key]


class Space:
    """Continuous Q1 or Q2 Lagrange space, scalar or with `components` copies.

    Vector dofs are numbered component-blocked: dof ``c * n_scalar + i`` is
    component c of scalar node i.
    """

    def __init__(self, mesh: Mesh, degree: int, components: int = 1):
        if degree not in (1, 2):
            raise ValueError("only degrees 1 and 2 are supported")
        if components < 1:
            raise ValueError("components must be positive")
        self.mesh = mesh
        self.degree = degree
        self.components = components
        self.n_local = 4 if degree == 1 else 9
        self._cache = {}

    def __repr__(self):
        return f"Space(Q{self.degree}, components={self.components}, ndofs={self.ndofs})"

    # -- numbering ------------------------------------------------------------

    @cached_property
    def _numbering(self):
        mesh = self.mesh
        corners = mesh.corners
        vertex_ids, vdofs = np.unique(corners, return_inverse=True)
        vdofs = vdofs.reshape(corners.shape)
        n_v = len(vertex_ids)
        if self.degree == 1:
            return vdofs, n_v
        _, elem_edges = mesh.edge_table
        n_e = int(elem_edges.max()) + 1
        cells = n_v + n_e + np.arange(mesh.n_elements)
        dofmap = np.hstack([vdofs, n_v + elem_edges, cells[:, None]])
        return dofmap, n_v + n_e + mesh.n_elements

    @property
    def dofmap(self) -> np.ndarray:
        """Element to scalar dof ids (E, n_local)."""
        return self._numbering[0]

    @property
    def n_scalar(self) -> int:
        return self._numbering[1]

    @property
    def ndofs(self) -> int:
        return self.n_scalar * self.components

    @cached_property
    def scalar(self) -> "Space":
        if self.components == 1:
            return self
        s = Space(self.mesh, self.degree, 1)
        s.__dict__["_numbering"] = self._numbering
        s._cache = self._cache
        return s

    def vector(self, components: int = 2) -> "Space":
        v = Space(self.mesh, self.degree, components)
        v.__dict__["_numbering"] = self._numbering
        v._cache = self._cache
        return v

    def same_nodes(self, other: "Space") -> bool:
        return self.mesh is other.mesh and self.degree == other.degree

    @cached_property
    def coords(self) -> np.ndarray:
        """Physical coordinates of the scalar dofs (n_scalar, 2)."""
        xy = self.mesh.map_points(reference_nodes(self.degree))
        out = np.empty((self.n_scalar, 2))
        out[self.dofmap.ravel()] = xy.reshape(-1, 2)
        return out

    def boundary_dofs(self, markers=None) -> np.ndarray:
        """Sorted scalar dof ids on facets with the given markers (all if None)."""
        facets = self.mesh.boundary_facets if markers is None else self.mesh.facets_with(markers)
        if len(facets) == 0:
            return np.zeros(0, dtype=np.int64)
        e, k = facets[:, 0], facets[:, 1]
        local = [EDGE_CORNERS[k, 0], EDGE_CORNERS[k, 1]]
        if self.degree == 2:
            local.append(4 + k)
        dofs = np.concatenate([self.dofmap[e, loc] for loc in local])
        return np.unique(dofs)

    # -- evaluation -------------------------------------------------------------

    def basis(self, rule: QuadRule):
        """Reference values (Q, nb) and physical gradients (E, Q, nb, 2)."""
        key = ("basis", rule.n_points)
        if key not in self._cache:
            val, dref, _ = lagrange_basis(self.degree, rule.points)
            geo = geometry(self.mesh, rule)
            grad = np.matmul(dref[None], geo.inv_jac)
            self._cache[key] = (val, grad)
        return self._cache[key]

    def hessians(self, rule: QuadRule) -> np.ndarray:
        """Physical second derivatives of the basis (E, Q, nb, 2, 2)."""
        key = ("hessian", rule.n_points)
        if key not in self._cache:
            self._cache[key] = self._hessians(rule)
        return self._cache[key]

    def _hessians(self, rule: QuadRule) -> np.ndarray:
        mesh = self.mesh
        _, dref, href = lagrange_basis(self.degree, rule.points)
        geo = geometry(mesh, rule)
        grad = self.basis(rule)[1]
        # second derivatives of the geometric map, d2x_c / dxi_r dxi_s
        ghess = lagrange_basis(mesh.geometric_degree, rule.points)[2]
        xhess = np.einsum("qjrs,ejc->eqcrs", ghess, mesh.nodes[mesh.elements])
        E, Q, nb = grad.shape[:3]
        corr = href[None] - np.matmul(grad, xhess.reshape(E, Q, 2, 4)).reshape(E, Q, nb, 2, 2)
        inv = geo.inv_jac[:, :, None]
        return np.swapaxes(inv, -1, -2) @ corr @ inv


class Field:
    """Coefficient vector of a finite element function."""

    def __init__(self, space: Space, values=None):
        self.space = space
        if values is None:
            values = np.zeros(space.ndofs)
        values = np.asarray(values, dtype=float)
        if values.shape != (space.ndofs,):
            raise ValueError(f"expected {space.ndofs} coefficients, got shape {values.shape}")
        self.values = values

    def __repr__(self):
        return f"Field({self.space!r})"

    def copy(self) -> "Field":
        return Field(self.space, self.values.copy())

    @property
    def components(self) -> np.ndarray:
        """Coefficient view (components, n_scalar)."""
        return self.values.reshape(self.space.components, self.space.n_scalar)

    def component(self, c: int) -> "Field":
        return Field(self.space.scalar, self.components[c].copy())

    @classmethod
    def from_components(cls, space: Space, comps) -> "Field":
        return cls(space, np.concatenate([np.asarray(c.values if isinstance(c, Field) else c) for c in comps]))

    def at(self, rule: QuadRule, gradient: bool = True):
        """Values and gradients at quadrature points.

        Scalar: value (E, Q), gradient (E, Q, 2).  Vector: value (E, Q, d),
        gradient (E, Q, d, 2) with grad[..., a, b] = d u_a / d x_b.
        """
        space = self.space
        val, grad = space.basis(rule)
        loc = self.components[:, space.dofmap]  # (C, E, nb)
        v = np.matmul(val, loc.transpose(1, 2, 0))
        g = np.matmul(loc.transpose(1, 0, 2)[:, None], grad) if gradient else None
        if space.components == 1:
            v = v[..., 0]
            g = g[..., 0, :] if gradient else None
        return v, g

    def value_at(self, rule: QuadRule) -> np.ndarray:
        return self.at(rule, gradient=False)[0]

    def hessian_at(self, rule: QuadRule) -> np.ndarray:
        """Second derivatives (E, Q, C, 2, 2)."""
        hess = self.space.hessians(rule)
        loc = self.components[:, self.space.dofmap]
        E, Q, nb = hess.shape[:3]
        out = np.matmul(loc.transpose(1, 0, 2)[:, None], hess.reshape(E, Q, nb, 4))
        return out.reshape(E, Q, -1, 2, 2)


def interpolate(space: Space, f, t=None) -> Field:
    """Nodal interpolant of an analytic field.

    `f(x, y)` (or `f(x, y, t)` when t is given) returns a scalar array or a
    sequence of `space.components` arrays.
    """
    x, y = space.coords[:, 0], space.coords[:, 1]
    vals = f(x, y) if t is None else f(x, y, t)
    if space.components == 1:
        vals = np.broadcast_to(np.asarray(vals, dtype=float), x.shape)
        return Field(space, np.array(vals, dtype=float))
    comps = [np.broadcast_to(np.asarray(v, dtype=float), x.shape) for v in vals]
    if len(comps) != space.components:
        raise ValueError("analytic field has the wrong number of components")
    return Field(space, np.concatenate(comps))


def transfer(field: Field, target: Space) -> Field:
    """Evaluate `field` at the nodes of another space on the same mesh."""
    src = field.space
    if src.mesh is not target.mesh:
        raise ValueError("spaces live on different meshes")
    if target.components != src.components:
        target = target.scalar.vector(src.components) if src.components > 1 else target.scalar
    shape = lagrange_basis(src.degree, reference_nodes(target.degree))[0]  # (nt, ns)
    loc = field.components[:, src.dofmap]  # (C, E, ns)
    vals = np.einsum("ts,ces->cet", shape, loc)
    out = np.empty((src.components, target.n_scalar))
    out[:, target.dofmap.ravel()] = vals.reshape(src.components, -1)
    return Field(target, out.ravel())


@dataclass(frozen=True)
class FacetQuadrature:
    """Points on boundary facets: element ids, reference and physical points,
    outward unit normals and line weights, each shaped (F, P, ...)."""

    elements: np.ndarray
    ref: np.ndarray
    x: np.ndarray
    normals: np.ndarray
    ds: np.ndarray


_EDGE_ENDS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def facet_quadrature(mesh: Mesh, markers=None, order: int = 6) -> FacetQuadrature:
    facets = mesh.boundary_facets if markers is None else mesh.facets_with(markers)
    t, w = gauss_rule_1d(order)
    a = _EDGE_ENDS[EDGE_CORNERS[facets[:, 1], 0]]
    b = _EDGE_ENDS[EDGE_CORNERS[facets[:, 1], 1]]
    ref = a[:, None, :] + (b - a)[:, None, :] * ((t + 1) / 2)[None, :, None]
    gdeg = mesh.geometric_degree
    xs, tangents = [], []
    for f, e in enumerate(facets[:, 0]):
        val, dref, _ = lagrange_basis(gdeg, ref[f])
        X = mesh.nodes[mesh.elements[e]]
        xs.append(val @ X)
        jac = np.einsum("pir,ia->par", dref, X)
        tangents.append(jac @ ((b[f] - a[f]) / 2))
    x = np.array(xs)
    tan = np.array(tangents)
    length = np.linalg.norm(tan, axis=-1)
    normals = np.stack([tan[..., 1], -tan[..., 0]], axis=-1) / length[..., None]
    return FacetQuadrature(facets[:, 0], ref, x, normals, length * w[None, :])


def evaluate_on_facets(field: Field, fq: FacetQuadrature) -> np.ndarray:
    """Field values at facet points, (F, P) or (F, P, C)."""
    space = field.space
    out = []
    loc = field.components[:, space.dofmap]
    for f, e in enumerate(fq.elements):
        val = lagrange_basis(space.degree, fq.ref[f])[0]
        out.append(val @ loc[:, e, :].T)
    out = np.array(out)
    return out[..., 0] if space.components == 1 else out


def locate(mesh: Mesh, points: np.ndarray, tol: float = 1e-10):
    """Element ids and reference coordinates of physical points.

    Candidates are found by bounding boxes and confirmed by Newton inversion
    of the element map; points outside the mesh raise ValueError.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    xe = mesh.nodes[mesh.elements]
    lo, hi = xe.min(axis=1), xe.max(axis=1)
    pad = 1e-9 * (hi - lo).max()
    elems = np.empty(len(points), dtype=np.int64)
    refs = np.empty((len(points), 2))
    for i, p in enumerate(points):
        cand = np.flatnonzero(np.all((p >= lo - pad) & (p <= hi + pad), axis=1))
        for e in cand:
            xi = np.zeros(2)
            for _ in range(30):
                val, grad, _ = lagrange_basis(mesh.geometric_degree, xi[None])
                r = val[0] @ xe[e] - p
                J = np.einsum("ir,ia->ar", grad[0], xe[e])
                step = np.linalg.solve(J, r)
                xi = xi - step
                if np.abs(step).max() < 1e-14:
                    break
            if np.all(np.abs(xi) <= 1 + 1e-8) and np.linalg.norm(r) <= tol * max(1.0, np.abs(p).max()):
                elems[i], refs[i] = e, np.clip(xi, -1, 1)
                break
        else:
            raise ValueError(f"point {p} is not inside the mesh")
    return elems, refs


def evaluate_at(field: Field, points: np.ndarray) -> np.ndarray:
    """Field values at arbitrary physical points, (P,) or (P, C)."""
    elems, refs = locate(field.space.mesh, points)
    space = field.space
    loc = field.components[:, space.dofmap]
    val = lagrange_basis(space.degree, refs)[0]  # (P, nb)
    out = np.einsum("pi,cpi->pc", val, loc[:, elems, :])
    return out[:, 0] if space.components == 1 else out
