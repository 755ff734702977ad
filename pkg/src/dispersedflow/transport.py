"""One-step volume fraction transport in three formulations.

``sqrt_variable``
    transports phi = sqrt(alpha) with the half-divergence reaction term.
``bounded_variable``
    transports phi = sqrt(alpha) / (1 - sqrt(alpha)), whose image
    alpha = (phi / (1 + |phi|))**2 always lies in [0, 1).
``raw``
    transports alpha itself in advective form.

Each step is linearly implicit in the transported variable with the velocity
frozen at the old level.  With ``chi = 0`` the residual is tested against
zeta / tau (Galerkin); with ``chi = 1`` it is tested against
zeta / tau + L zeta, where L is the same linearized transport operator
(least-squares Galerkin), giving a symmetric positive definite system.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .fem.assembly import assemble_local
from .fem.quadrature import QuadRule, gauss_rule
from .fem.space import Field, geometry

FORMULATIONS = ("sqrt_variable", "bounded_variable", "raw")


@dataclass(frozen=True)
class TransportConfig:
    formulation: str = "sqrt_variable"
    chi: int = 1
    degree: int = 1

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"unknown transport formulation {self.formulation!r}; expected one of {FORMULATIONS}")
        if self.chi not in (0, 1):
            raise ValueError("chi must be exactly 0 or 1")
        if self.degree not in (1, 2):
            raise ValueError("transport degree must be 1 or 2")


def _check(formulation):
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown transport formulation {formulation!r}; expected one of {FORMULATIONS}")


# -- variable maps ------------------------------------------------------------


def alpha_of_values(formulation: str, v):
    _check(formulation)
    v = np.asarray(v, dtype=float)
    if formulation == "sqrt_variable":
        return v**2
    if formulation == "bounded_variable":
        return (v / (1.0 + np.abs(v))) ** 2
    return v.copy()


def variable_of_values(formulation: str, alpha):
    """Inverse map alpha -> transported variable (nonnegative branch)."""
    _check(formulation)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("volume fractions must be nonnegative")
    if formulation == "sqrt_variable":
        return np.sqrt(alpha)
    if formulation == "bounded_variable":
        if np.any(alpha >= 1):
            raise ValueError("the bounded variable needs alpha < 1")
        s = np.sqrt(alpha)
        return s / (1.0 - s)
    return alpha.copy()


def alpha_of(formulation: str, field: Field) -> Field:
    """Nodal map from the transported variable to the volume fraction."""
    return Field(field.space, alpha_of_values(formulation, field.values))


def variable_of(formulation: str, alpha: Field) -> Field:
    return Field(alpha.space, variable_of_values(formulation, alpha.values))


def alpha_at(formulation: str, field: Field, rule: QuadRule, gradient: bool = True):
    """Volume fraction and its gradient at quadrature points.

    The map is applied pointwise to the finite element function, so alpha is
    nonnegative at every point for the changed variables; the raw form is
    clamped at zero.
    """
    _check(formulation)
    v, g = field.at(rule, gradient=gradient)
    if formulation == "sqrt_variable":
        a = v**2
        ga = 2.0 * v[..., None] * g if gradient else None
    elif formulation == "bounded_variable":
        d = 1.0 + np.abs(v)
        s = v / d
        a = s**2
        ga = (2.0 * s / d**2)[..., None] * g if gradient else None
    else:
        a = np.maximum(v, 0.0)
        ga = np.where((v > 0)[..., None], g, 0.0) if gradient else None
    return a, ga


# -- stepping -------------------------------------------------------------------


def _velocity(u_n: Field, rule: QuadRule):
    w, gw = u_n.at(rule)
    return w, gw[..., 0, 0] + gw[..., 1, 1]


def _operator_images(var_n: Field, u_n: Field, tau: float, reaction: np.ndarray, rule: QuadRule):
    """Values at quadrature points of N_j + tau (w . grad N_j + reaction N_j)."""
    space = var_n.space
    val, grad = space.basis(rule)
    w, _ = _velocity(u_n, rule)
    return val[None] + tau * (np.einsum("eqa,eqja->eqj", w, grad) + reaction[..., None] * val[None])


def _linear_step(var_n: Field, u_n: Field, tau: float, reaction: np.ndarray, chi: int, rule: QuadRule,
                 settings: linalg.SolverSettings) -> Field:
    if tau <= 0:
        raise ValueError("time step must be positive")
    if chi not in (0, 1):
        raise ValueError("chi must be exactly 0 or 1")
    space = var_n.space
    if space.components != 1:
        raise ValueError("the transported variable must be scalar")
    val = space.basis(rule)[0]
    dx = geometry(space.mesh, rule).dx
    trial = _operator_images(var_n, u_n, tau, reaction, rule)
    test = trial if chi == 1 else np.broadcast_to(val[None], trial.shape)
    local = np.einsum("eqj,eqi,eq->eij", trial, test, dx, optimize=True)
    A = assemble_local(space, space, local)
    old = var_n.value_at(rule)
    local_b = np.einsum("eq,eqi,eq->ei", old, test, dx, optimize=True)
    b = np.bincount(space.dofmap.ravel(), weights=local_b.ravel(), minlength=space.n_scalar)
    if chi == 1:
        x = linalg.solve_spd(A, b, settings, x0=var_n.values)
    else:
        x = linalg.solve_nonsymmetric(A, b, settings, x0=var_n.values)
    return Field(space, x)


def step_sqrt(phi_n: Field, u_n: Field, tau: float, chi: int = 1, rule: QuadRule | None = None,
              settings: linalg.SolverSettings = linalg.DEFAULT) -> Field:
    """Advance phi = sqrt(alpha) by one step."""
    rule = rule or gauss_rule(2 * max(phi_n.space.degree, u_n.space.degree) + 2)
    _, div = _velocity(u_n, rule)
    return _linear_step(phi_n, u_n, tau, 0.5 * div, chi, rule, settings)


def step_bounded(phi_n: Field, u_n: Field, tau: float, chi: int = 1, rule: QuadRule | None = None,
                 settings: linalg.SolverSettings = linalg.DEFAULT) -> Field:
    """Advance the bounded variable with the |phi| factor frozen at the old level."""
    rule = rule or gauss_rule(2 * max(phi_n.space.degree, u_n.space.degree) + 2)
    _, div = _velocity(u_n, rule)
    old = phi_n.value_at(rule)
    return _linear_step(phi_n, u_n, tau, 0.5 * div * (1.0 + np.abs(old)), chi, rule, settings)


def step_raw(alpha_n: Field, u_n: Field, tau: float, chi: int = 1, rule: QuadRule | None = None,
             settings: linalg.SolverSettings = linalg.DEFAULT) -> Field:
    """Advance alpha in advective form d_t alpha + u . grad alpha + (div u) alpha = 0."""
    rule = rule or gauss_rule(2 * max(alpha_n.space.degree, u_n.space.degree) + 2)
    _, div = _velocity(u_n, rule)
    return _linear_step(alpha_n, u_n, tau, div, chi, rule, settings)


_STEPPERS = {"sqrt_variable": step_sqrt, "bounded_variable": step_bounded, "raw": step_raw}


def step(formulation: str, var_n: Field, u_n: Field, tau: float, chi: int = 1, rule: QuadRule | None = None,
         settings: linalg.SolverSettings = linalg.DEFAULT) -> Field:
    _check(formulation)
    return _STEPPERS[formulation](var_n, u_n, tau, chi=chi, rule=rule, settings=settings)


def conservation_terms(phi_n: Field, phi_np1: Field, u_n: Field, tau: float, chi: int, rule: QuadRule):
    """Terms of the per-step balance of the square-root variable.

    Returns ``(|phi^{n+1}|^2, |delta + chi tau psi|^2, chi tau^2 |psi|^2)``
    with psi = u . grad phi^{n+1} + (div u / 2) phi^{n+1}; their sum equals
    |phi^n|^2 for the least-squares scheme.
    """
    dx = geometry(phi_n.space.mesh, rule).dx
    w, div = _velocity(u_n, rule)
    new, gnew = phi_np1.at(rule)
    old = phi_n.value_at(rule)
    psi = np.einsum("eqa,eqa->eq", w, gnew) + 0.5 * div * new
    delta = new - old
    return (
        float(np.sum(new**2 * dx)),
        float(np.sum((delta + chi * tau * psi) ** 2 * dx)),
        float(chi * tau**2 * np.sum(psi**2 * dx)),
    )

