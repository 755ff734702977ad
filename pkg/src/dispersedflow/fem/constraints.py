"""Dirichlet and free-slip constraints on assembled systems."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .space import Space


class ConstraintError(ValueError):
    pass


@dataclass
class ConstraintSet:
    """Prescribed dof values plus free-slip normals.

    ``dofs``/``values`` are global dof ids of the system and their values.
    ``slip_nodes``/``slip_normals`` list scalar node ids of a vector space and
    the unit normal there; only axis-aligned normals are supported, for which
    the slip condition fixes one Cartesian component to zero.
    """

    dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slip_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    slip_normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=np.int64).ravel()
        self.values = np.broadcast_to(np.asarray(self.values, dtype=float), self.dofs.shape).copy()
        self.slip_nodes = np.asarray(self.slip_nodes, dtype=np.int64).ravel()
        self.slip_normals = np.asarray(self.slip_normals, dtype=float).reshape(-1, 2)
        if len(np.unique(self.dofs)) != len(self.dofs):
            raise ConstraintError("a dof is constrained twice")
        if len(self.slip_normals) != len(self.slip_nodes):
            raise ConstraintError("one normal per slip node is required")

    @property
    def empty(self) -> bool:
        return len(self.dofs) == 0 and len(self.slip_nodes) == 0

    def resolve(self, space: Space):
        """Flatten into (dofs, values) for `space`, turning slip into zero
        normal components."""
        dofs, values = [self.dofs], [self.values]
        if len(self.slip_nodes):
            if space.components < 2:
                raise ConstraintError("free-slip needs a vector space")
            axis = np.argmax(np.abs(self.slip_normals), axis=1)
            off = np.abs(self.slip_normals[np.arange(len(axis)), 1 - axis])
            if np.any(off > 1e-10):
                raise ConstraintError("free-slip is only supported on axis-aligned facets")
            dofs.append(axis * space.n_scalar + self.slip_nodes)
            values.append(np.zeros(len(self.slip_nodes)))
        dofs = np.concatenate(dofs)
        values = np.concatenate(values)
        # a no-slip corner can coincide with a slip node; the explicit value wins
        dofs, first = np.unique(dofs, return_index=True)
        if np.any(dofs >= space.ndofs) or np.any(dofs < 0):
            raise ConstraintError("constrained dof out of range")
        return dofs, values[first]

    def component(self, space: Space, c: int):
        """Dofs and values acting on component c, in scalar numbering."""
        dofs, values = self.resolve(space)
        n = space.n_scalar
        mask = (dofs >= c * n) & (dofs < (c + 1) * n)
        return dofs[mask] - c * n, values[mask]


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, dofs: np.ndarray, values: np.ndarray):
    """Symmetric elimination: constrained rows and columns become identity,
    the right-hand side is lifted by the known values."""
    A = sp.csr_matrix(A)
    b = np.array(b, dtype=float)
    if len(dofs) == 0:
        return A, b
    g = np.zeros(A.shape[0])
    g[dofs] = values
    b = b - A @ g
    keep = np.ones(A.shape[0])
    keep[dofs] = 0.0
    K = sp.diags(keep)
    A = (K @ A @ K + sp.diags(1.0 - keep)).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    b[dofs] = values
    return A, b


def apply_constraints(A: sp.spmatrix, b: np.ndarray, cs: ConstraintSet, space: Space):
    """Apply a :class:`ConstraintSet` to the system of `space`."""
    if cs.empty:
        return sp.csr_matrix(A), np.array(b, dtype=float)
    dofs, values = cs.resolve(space)
    return apply_dirichlet(A, b, dofs, values)
