"""Benchmark definitions: two manufactured convergence tests, a dispersed
Rayleigh-Taylor flow and a decaying two-phase vortex used for the stability
checks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .mesh import Mesh, build_annulus, build_disk, build_rectangle
from .problem import BoundaryConditions, DragModel, PhaseParams, Problem, SchemeConfig
from .transport import TransportConfig


@dataclass(frozen=True)
class ExactSolution:
    """Analytic fields: ``velocity(k, x, y, t)``, ``pressure(x, y, t)`` and
    ``alpha(k, x, y, t)``."""

    velocity: Callable
    pressure: Callable
    alpha: Callable


@dataclass(frozen=True)
class CaseDefinition:
    """Everything needed to set up one benchmark run.

    ``mesh_builder(*resolution)`` builds the mesh; ``alpha0(k, x, y)`` and
    ``velocity0(k, x, y, t)`` give the initial data; ``pressure0(x, y, t)``,
    when present, replaces the computed initial pressure.
    """

    name: str
    description: str
    mesh_builder: Callable[..., Mesh]
    resolution: tuple
    phases: tuple
    drag: DragModel
    bcs: BoundaryConditions
    alpha0: Callable
    velocity0: Callable
    tau: float
    T: float
    transport: TransportConfig = TransportConfig()
    velocity_degree: int = 2
    pressure_degree: int = 1
    pressure0: Optional[Callable] = None
    exact: Optional[ExactSolution] = None
    full_resolution: Optional[tuple] = None
    extra: dict = field(default_factory=dict)

    def mesh(self, resolution: tuple | None = None) -> Mesh:
        return self.mesh_builder(*(resolution or self.resolution))

    def problem(self, resolution: tuple | None = None, mesh: Mesh | None = None) -> Problem:
        return Problem(mesh or self.mesh(resolution), self.phases, self.drag, self.bcs)

    def config(self, **overrides) -> SchemeConfig:
        base = SchemeConfig(tau=self.tau, T=self.T, transport=self.transport,
                            velocity_degree=self.velocity_degree, pressure_degree=self.pressure_degree)
        return replace(base, **overrides)

    def with_(self, **kw) -> "CaseDefinition":
        return replace(self, **kw)


def _f(t):
    return 1.0 / (1.0 + t)


def _rotation(x, y, s):
    return -s * y, s * x


# -- disk with linear drag ------------------------------------------------------


def _disk_velocity(k, x, y, t):
    ux, uy = _rotation(x, y, _f(t))
    sign = 1.0 if k == 0 else -1.0
    return sign * ux, sign * uy


def _disk_pressure(x, y, t):
    return _f(t) ** 2 * ((x**2 + y**2) / 2 - 0.25)


def case_disk_linear_drag() -> CaseDefinition:
    """Unit disk, equal constant fractions, counter-rotating phases,
    gamma_12 = 1 / (4 (t + 1))."""
    return CaseDefinition(
        name="disk_linear_drag",
        description="manufactured counter-rotation on the unit disk with linear drag",
        mesh_builder=lambda n_ring, n_core: build_disk(n_ring, n_core, 1.0),
        resolution=(16, 32),
        full_resolution=(32, 64),
        phases=(PhaseParams(1.0, 1.0), PhaseParams(1.0, 1.0)),
        drag=DragModel({(0, 1): lambda t, a1, a2, speed: np.full_like(speed, 0.25 / (t + 1.0))}),
        bcs=BoundaryConditions(dirichlet={"boundary": _disk_velocity}),
        alpha0=lambda k, x, y: np.full_like(x, 0.5),
        velocity0=_disk_velocity,
        pressure0=_disk_pressure,
        exact=ExactSolution(_disk_velocity, _disk_pressure, lambda k, x, y, t: np.full_like(x, 0.5)),
        tau=0.1,
        T=1.0,
    )


# -- annulus with quadratic drag --------------------------------------------------


def _annulus_velocity(k, x, y, t):
    ux, uy = _rotation(x, y, _f(t))
    s = 1.0 if k == 0 else 0.5
    return s * ux, s * uy


def _annulus_pressure(x, y, t):
    return _f(t) ** 2 * ((x**2 + y**2) / 2 - 5.0 / 32.0)


def _annulus_alpha(k, x, y, t=0.0):
    r = np.sqrt(x**2 + y**2)
    return r if k == 0 else 1.0 - r


def _annulus_g2(x, y, t):
    r = np.sqrt(x**2 + y**2)
    c = (2.0 - r) / (4.0 * (1.0 + t) ** 2 * (1.0 - r))
    return c * y, -c * x


def case_annulus_quadratic_drag() -> CaseDefinition:
    """Annulus 1/4 < r < 3/4, alpha_1 = r, gamma_12 = 4 |u_1 - u_2|, linear
    velocity with quadratic pressure."""
    return CaseDefinition(
        name="annulus_quadratic_drag",
        description="manufactured rotation on an annulus with quadratic drag",
        mesh_builder=lambda nr, ntheta: build_annulus(nr, ntheta, 0.25, 0.75),
        resolution=(32, 192),
        full_resolution=(64, 384),
        phases=(PhaseParams(1.0, 1.0), PhaseParams(4.0, 4.0, _annulus_g2)),
        drag=DragModel({(0, 1): lambda t, a1, a2, speed: 4.0 * speed}),
        bcs=BoundaryConditions(dirichlet={"inner": _annulus_velocity, "outer": _annulus_velocity}),
        alpha0=lambda k, x, y: _annulus_alpha(k, x, y),
        velocity0=_annulus_velocity,
        pressure0=_annulus_pressure,
        exact=ExactSolution(_annulus_velocity, _annulus_pressure, _annulus_alpha),
        tau=0.05,
        T=1.0,
        transport=TransportConfig(degree=2),
    )


# -- dispersed Rayleigh-Taylor -------------------------------------------------------


def rt_alpha2(x, y):
    return (0.99 + 0.05) / 2 + (0.99 - 0.05) / 2 * np.tanh(40.0 * y + 4.0 * np.cos(2.0 * np.pi * x))


def _gravity(x, y, t):
    return 0.0, -1.0


def _no_slip(k, x, y, t):
    return np.zeros_like(x), np.zeros_like(x)


def case_rayleigh_taylor() -> CaseDefinition:
    """Heavy phase 2 over light phase 1 in (0, 0.5) x (-2, 2), both at rest,
    gamma_12 = 10 alpha_2 |u_2 - u_1|."""
    sides = {"left": "lateral", "right": "lateral", "bottom": "bottom", "top": "top"}
    return CaseDefinition(
        name="rayleigh_taylor",
        description="dispersed Rayleigh-Taylor flow in a closed box",
        mesh_builder=lambda nx, ny: build_rectangle(nx, ny, (0.0, 0.5), (-2.0, 2.0), sides),
        resolution=(40, 320),
        full_resolution=(100, 800),
        phases=(PhaseParams(1.0, 0.1, _gravity), PhaseParams(3.0, 0.3, _gravity)),
        drag=DragModel({(0, 1): lambda t, a1, a2, speed: 10.0 * a2 * speed}),
        bcs=BoundaryConditions(dirichlet={"bottom": _no_slip, "top": _no_slip}, slip=("lateral",)),
        alpha0=lambda k, x, y: 1.0 - rt_alpha2(x, y) if k == 0 else rt_alpha2(x, y),
        velocity0=_no_slip,
        tau=0.005,
        T=5.0,
        transport=TransportConfig("bounded_variable", chi=1, degree=2),
    )


# -- decaying vortex for the stability ledger ---------------------------------------------


def _decay_velocity(k, x, y, t):
    s = 1.0 - x**2 - y**2
    sign = 1.0 if k == 0 else -1.0
    return -sign * s * y, sign * s * x


def case_decay() -> CaseDefinition:
    """Unforced counter-rotating phases with no-slip walls and a
    nonuniform volume fraction alpha_1 = 0.5 + 0.2 x; drag is linear and
    capped at D = 1 so that the stability bound stays finite."""
    return CaseDefinition(
        name="decay",
        description="unforced decaying two-phase vortex with homogeneous no-slip walls",
        mesh_builder=lambda n_ring, n_core: build_disk(n_ring, n_core, 1.0),
        resolution=(2, 4),
        phases=(PhaseParams(1.0, 0.5), PhaseParams(2.0, 0.2)),
        drag=DragModel({(0, 1): lambda t, a1, a2, speed: np.full_like(speed, 0.8)}, cap=1.0),
        bcs=BoundaryConditions(dirichlet={"boundary": _no_slip}),
        alpha0=lambda k, x, y: 0.5 + 0.2 * x if k == 0 else 0.5 - 0.2 * x,
        velocity0=_decay_velocity,
        tau=0.1,
        T=1.0,
    )


CASES = {
    "disk_linear_drag": case_disk_linear_drag,
    "annulus_quadratic_drag": case_annulus_quadratic_drag,
    "rayleigh_taylor": case_rayleigh_taylor,
    "decay": case_decay,
}


def get_case(name: str) -> CaseDefinition:
    try:
        return CASES[name]()
    except KeyError:
        raise KeyError(f"unknown case {name!r}; available: {', '.join(sorted(CASES))}") from None
