"""Legacy VTK (ASCII unstructured grid) output of meshes and nodal fields."""
from __future__ import annotations

import numpy as np

from .fem.space import Field, Space, transfer
from .mesh import Mesh

VTK_QUAD = 9
VTK_BIQUADRATIC_QUAD = 28


def write_vtk(path, mesh: Mesh, fields: dict | None = None, title: str = "dispersedflow") -> None:
    """Write the mesh and point data.

    Point data live on the geometric nodes, so every field is transferred to
    the Lagrange space of the geometric degree before writing.  Scalar
    fields become SCALARS, 2-vectors become VECTORS with a zero third
    component.
    """
    geo = Space(mesh, mesh.geometric_degree)
    # geometric nodes coincide with the dofs of `geo`; map node id -> dof id
    node_of_dof = np.empty(geo.n_scalar, dtype=np.int64)
    node_of_dof[geo.dofmap.ravel()] = mesh.elements.ravel()
    order = np.argsort(node_of_dof)
    cell_type = VTK_QUAD if mesh.geometric_degree == 1 else VTK_BIQUADRATIC_QUAD
    n_nodes = mesh.n_nodes
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n_nodes} double\n")
        for x, y in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        nper = mesh.elements.shape[1]
        fh.write(f"CELLS {mesh.n_elements} {mesh.n_elements * (nper + 1)}\n")
        for el in mesh.elements:
            fh.write(f"{nper} " + " ".join(str(int(i)) for i in el) + "\n")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        fh.write("".join(f"{cell_type}\n" for _ in range(mesh.n_elements)))
        if not fields:
            return
        fh.write(f"POINT_DATA {n_nodes}\n")
        for name, f in fields.items():
            if not isinstance(f, Field):
                raise TypeError(f"field {name!r} is not a Field")
            vals = transfer(f, geo).components[:, order]
            if vals.shape[0] == 1:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.write("".join(f"{float(v)!r}\n" for v in vals[0]))
            elif vals.shape[0] == 2:
                fh.write(f"VECTORS {name} double\n")
                fh.write("".join(f"{float(a)!r} {float(b)!r} 0.0\n" for a, b in vals.T))
            else:
                raise ValueError("only scalar and 2-vector fields are supported")
