"""Problem data shared by the fractional-step and monolithic schemes."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from . import linalg
from .fem.assembly import load_vector
from .fem.constraints import ConstraintSet
from .fem.quadrature import gauss_rule
from .fem.space import Field, Space, facet_quadrature, geometry
from .mesh import EDGE_CORNERS, Mesh
from .transport import TransportConfig, alpha_at, alpha_of

VectorFunction = Callable[..., tuple]


@dataclass(frozen=True)
class PhaseParams:
    """Density, dynamic viscosity and body force ``g(x, y, t) -> (gx, gy)``."""

    rho: float
    mu: float
    g: Optional[VectorFunction] = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("density must be positive")
        if not self.mu > 0:
            raise ValueError("viscosity must be positive")

    def body_force(self, x, y, t):
        if self.g is None:
            return np.zeros(x.shape + (2,))
        gx, gy = self.g(x, y, t)
        return np.stack([np.broadcast_to(gx, x.shape), np.broadcast_to(gy, x.shape)], axis=-1).astype(float)


def clip_drag(gamma, cap: float):
    """Drag coefficient capped at `cap`, min(gamma, cap)."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("drag coefficients must be nonnegative")
    out = np.minimum(gamma, cap)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DragModel:
    """Inter-phase drag laws, one per unordered pair of phases.

    ``laws[(k, l)]`` with k < l is called as ``law(t, alpha_k, alpha_l, speed)``
    where speed is the magnitude of the relative velocity; it must return
    nonnegative coefficients.  Values are capped at ``cap``.
    """

    laws: dict = field(default_factory=dict)
    cap: float = 1e6

    def __post_init__(self):
        if not self.cap > 0:
            raise ValueError("drag cap must be positive")
        for k, l in self.laws:
            if k >= l:
                raise ValueError("drag laws are keyed by pairs (k, l) with k < l")

    def coefficient(self, k: int, l: int, t: float, alpha_k, alpha_l, speed, clipped: bool = True):
        """gamma_kl (symmetric, zero on the diagonal), optionally capped."""
        if k == l:
            return np.zeros_like(np.asarray(speed, dtype=float))
        if k > l:
            k, l, alpha_k, alpha_l = l, k, alpha_l, alpha_k
        law = self.laws.get((k, l))
        if law is None:
            return np.zeros_like(np.asarray(speed, dtype=float))
        gamma = np.broadcast_to(np.asarray(law(t, alpha_k, alpha_l, speed), dtype=float), np.shape(speed))
        if np.any(gamma < 0) or not np.all(np.isfinite(gamma)):
            raise ValueError(f"drag law ({k}, {l}) returned negative or non-finite values")
        return np.minimum(gamma, self.cap) if clipped else np.array(gamma)


@dataclass(frozen=True)
class BoundaryConditions:
    """Velocity boundary data per marker.

    ``dirichlet`` maps a marker to ``f(k, x, y, t) -> (ux, uy)`` for phase k;
    markers in ``slip`` get n . u = 0 with a free tangential component.
    Markers in ``natural`` carry no velocity condition; they are meant for
    unit tests on tiny meshes, not for flow runs.
    """

    dirichlet: dict = field(default_factory=dict)
    slip: tuple = ()
    natural: tuple = ()

    def check(self, mesh: Mesh):
        unknown = (set(self.dirichlet) | set(self.slip) | set(self.natural)) - mesh.markers
        if unknown:
            raise ValueError(f"boundary markers {sorted(unknown)} are not on the mesh")
        missing = mesh.markers - set(self.dirichlet) - set(self.slip) - set(self.natural)
        if missing:
            raise ValueError(f"no velocity condition on markers {sorted(missing)}")


@dataclass(frozen=True)
class SchemeConfig:
    tau: float
    T: float
    transport: TransportConfig = TransportConfig()
    velocity_degree: int = 2
    pressure_degree: int = 1
    quad_order: Optional[int] = None
    solver: linalg.SolverSettings = linalg.DEFAULT
    alpha_min_warn: float = 1e-6
    implicit_viscous: bool = False
    ledger_slack: float = 1e-6

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("time step must be positive")
        if not self.T > 0:
            raise ValueError("final time must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.tau)))

    def with_(self, **kw) -> "SchemeConfig":
        return replace(self, **kw)


class Discretization:
    """Spaces, quadrature and constraint bookkeeping for one mesh."""

    def __init__(self, mesh: Mesh, cfg: SchemeConfig, bcs: BoundaryConditions):
        bcs.check(mesh)
        self.mesh = mesh
        self.cfg = cfg
        self.bcs = bcs
        self.X = Space(mesh, cfg.velocity_degree, 2)
        self.Xs = self.X.scalar
        self.Y = Space(mesh, cfg.pressure_degree)
        self.Z = Space(mesh, cfg.transport.degree)
        order = cfg.quad_order
        if order is None:
            order = 2 * max(cfg.velocity_degree, cfg.pressure_degree, cfg.transport.degree) + 2
        self.rule = gauss_rule(order)
        self.geo = geometry(mesh, self.rule)
        self.dx = self.geo.dx
        self.area = float(self.dx.sum())

    @cached_property
    def pressure_weights(self) -> np.ndarray:
        """Integrals of the pressure basis functions."""
        return load_vector(self.Y, self.rule, f=np.ones_like(self.dx))

    @cached_property
    def _boundary(self):
        """Dirichlet dofs per marker and slip nodes with their normals."""
        X = self.Xs
        dirichlet = {m: X.boundary_dofs(m) for m in self.bcs.dirichlet}
        slip_nodes, slip_normals = [], []
        taken = set(np.concatenate(list(dirichlet.values())).tolist()) if dirichlet else set()
        for m in self.bcs.slip:
            fq = facet_quadrature(self.mesh, m, order=2)
            n_mean = fq.normals.mean(axis=1)
            for (e, k), nrm in zip(self.mesh.facets_with(m), n_mean):
                local = [EDGE_CORNERS[k, 0], EDGE_CORNERS[k, 1]] + ([4 + k] if X.degree == 2 else [])
                for i in X.dofmap[e, local]:
                    if int(i) not in taken:
                        taken.add(int(i))
                        slip_nodes.append(int(i))
                        slip_normals.append(nrm / np.linalg.norm(nrm))
        return dirichlet, np.array(slip_nodes, dtype=np.int64), np.array(slip_normals).reshape(-1, 2)

    def constraints(self, k: int, t: float) -> ConstraintSet:
        """Velocity constraints of phase k at time t on X."""
        dirichlet, slip_nodes, slip_normals = self._boundary
        dofs, vals = [], []
        n = self.Xs.n_scalar
        coords = self.Xs.coords
        for marker, nodes in dirichlet.items():
            if len(nodes) == 0:
                continue
            ux, uy = self.bcs.dirichlet[marker](k, coords[nodes, 0], coords[nodes, 1], t)
            dofs += [nodes, nodes + n]
            vals += [np.broadcast_to(ux, nodes.shape), np.broadcast_to(uy, nodes.shape)]
        if dofs:
            dofs = np.concatenate(dofs)
            vals = np.concatenate(vals)
            dofs, first = np.unique(dofs, return_index=True)
            vals = vals[first]
        else:
            dofs, vals = np.zeros(0, dtype=np.int64), np.zeros(0)
        return ConstraintSet(dofs, vals, slip_nodes, slip_normals)


@dataclass(frozen=True)
class Problem:
    """Everything that defines a run apart from the time step controls."""

    mesh: Mesh
    phases: tuple
    drag: DragModel
    bcs: BoundaryConditions

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    @property
    def rho_min(self) -> float:
        return min(ph.rho for ph in self.phases)


@dataclass
class FlowState:
    """Discrete solution at one time level.

    ``var`` holds the transported variable of each phase (its meaning
    depends on the transport formulation), ``u`` the momentum-step
    velocities, ``uhat_qp`` the end-of-step velocities at quadrature points
    (E, Q, 2) and ``uhat`` their alpha-weighted projection onto X.
    """

    t: float
    step: int
    formulation: str
    p: Field
    var: list
    u: list
    uhat_qp: list
    uhat: list

    @property
    def n_phases(self) -> int:
        return len(self.u)

    def alpha(self, k: int) -> Field:
        """Nodal volume fraction of phase k."""
        return alpha_of(self.formulation, self.var[k])

    def alpha_qp(self, k: int, rule, gradient: bool = False):
        return alpha_at(self.formulation, self.var[k], rule, gradient=gradient)

    def copy(self) -> "FlowState":
        return FlowState(
            self.t, self.step, self.formulation, self.p.copy(),
            [v.copy() for v in self.var], [u.copy() for u in self.u],
            [np.array(w) for w in self.uhat_qp], [u.copy() for u in self.uhat],
        )
