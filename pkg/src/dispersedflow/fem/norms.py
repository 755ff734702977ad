"""Quadrature-based norms of finite element fields."""
from __future__ import annotations

import numpy as np

from .quadrature import gauss_rule
from .space import Field, geometry

KINDS = ("L2", "H1-semi", "L1", "Linf-nodal")


def norm(field: Field, kind: str = "L2", quad_order: int | None = None) -> float:
    """L2, H1-seminorm, L1 or nodal max norm of a scalar or vector field."""
    if kind not in KINDS:
        raise ValueError(f"unknown norm {kind!r}; expected one of {KINDS}")
    if kind == "Linf-nodal":
        return float(np.max(np.abs(field.values))) if field.values.size else 0.0
    rule = gauss_rule(quad_order if quad_order is not None else 2 * field.space.degree + 2)
    dx = geometry(field.space.mesh, rule).dx
    val, grad = field.at(rule, gradient=(kind == "H1-semi"))
    if kind == "H1-semi":
        sq = grad**2
        return float(np.sqrt(np.sum(sq.reshape(sq.shape[0], sq.shape[1], -1).sum(-1) * dx)))
    mag = np.abs(val) if val.ndim == 2 else np.linalg.norm(val, axis=-1)
    if kind == "L1":
        return float(np.sum(mag * dx))
    return float(np.sqrt(np.sum(mag**2 * dx)))


def integrate(values: np.ndarray, mesh, rule) -> float:
    """Integral of quadrature-point data (E, Q)."""
    return float(np.sum(values * geometry(mesh, rule).dx))


def l2_qp(values: np.ndarray, mesh, rule) -> float:
    """L2 norm of quadrature-point data (E, Q, ...)."""
    sq = np.asarray(values) ** 2
    sq = sq.reshape(sq.shape[0], sq.shape[1], -1).sum(-1)
    return float(np.sqrt(integrate(sq, mesh, rule)))
