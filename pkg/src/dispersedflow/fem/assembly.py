"""Vectorized weak-form assembly.

Integrands are evaluated on chunks of elements.  A bilinear integrand is
called as ``integrand(u, v, c)`` and must return an array shaped
(e, Q, n_test, n_trial); a linear integrand is called as ``integrand(v, c)``
and returns (e, Q, n_test).  ``u`` and ``v`` are :class:`Basis` views whose
arrays are pre-shaped for broadcasting, and ``c`` is a namespace holding the
coefficient arrays passed to the assembler, sliced to the chunk.
"""
from __future__ import annotations

import warnings
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp

from .quadrature import QuadRule
from .space import Space, geometry

CHUNK = 2048


class QuadratureWarning(UserWarning):
    pass


class Basis(SimpleNamespace):
    """Shape function data of one chunk.

    For trial functions ``val`` is (e, Q, 1, n) and ``grad`` (e, Q, 1, n, 2);
    for test functions in a bilinear form ``val`` is (e, Q, n, 1) and
    ``grad`` (e, Q, n, 1, 2); in a linear form (e, Q, n) and (e, Q, n, 2).
    """


def _check_order(rule: QuadRule, degree):
    if degree is not None and degree > 2 * int(np.sqrt(rule.n_points)) - 1:
        warnings.warn(
            f"quadrature with {rule.n_points} points is not exact for integrand degree {degree}",
            QuadratureWarning,
            stacklevel=3,
        )


def _chunks(n: int, size: int = CHUNK):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def _slice_coeffs(coeffs, sl):
    out = {}
    for name, arr in (coeffs or {}).items():
        arr = np.asarray(arr)
        out[name] = arr[sl] if arr.ndim >= 1 and arr.shape[0] > 1 else arr
    return SimpleNamespace(**out)


def _pattern(test: Space, trial: Space):
    """CSR pattern and the map from element entries to CSR data slots."""
    key = ("pattern", trial.degree)  # numbering depends only on mesh and degree
    cache = test._cache
    if key in cache:
        return cache[key]
    rows = np.broadcast_to(test.dofmap[:, :, None], (test.mesh.n_elements, test.n_local, trial.n_local))
    cols = np.broadcast_to(trial.dofmap[:, None, :], rows.shape)
    rows, cols = rows.ravel(), cols.ravel()
    shape = (test.n_scalar, trial.n_scalar)
    keys = rows.astype(np.int64) * shape[1] + cols
    uniq, slot = np.unique(keys, return_inverse=True)
    indptr = np.searchsorted(uniq // shape[1], np.arange(shape[0] + 1))
    indices = (uniq % shape[1]).astype(np.int32)
    cache[key] = (indptr.astype(np.int32), indices, slot.ravel(), shape)
    return cache[key]


def assemble_matrix(trial: Space, test: Space, integrand, rule: QuadRule, coeffs=None, degree=None) -> sp.csr_matrix:
    """Assemble a scalar bilinear form into a CSR matrix.

    Entry (i, j) is the sum over elements of the quadrature of
    ``integrand(trial_j, test_i)``.  ``degree`` is the polynomial degree of
    the integrand in reference coordinates; a :class:`QuadratureWarning` is
    issued when the rule cannot integrate it exactly.
    """
    if trial.mesh is not test.mesh:
        raise ValueError("trial and test spaces must share the mesh")
    _check_order(rule, degree)
    geo = geometry(test.mesh, rule)
    tval, tgrad = trial.basis(rule)
    sval, sgrad = test.basis(rule)
    E = test.mesh.n_elements
    local = np.empty((E, test.n_local, trial.n_local))
    for sl in _chunks(E):
        u = Basis(val=tval[None, :, None, :], grad=tgrad[sl][:, :, None, :, :])
        v = Basis(val=sval[None, :, :, None], grad=sgrad[sl][:, :, :, None, :])
        u.x = v.x = geo.x[sl][:, :, None, None, :]
        vals = integrand(u, v, _slice_coeffs(coeffs, sl))
        vals = np.broadcast_to(vals, (sl.stop - sl.start, rule.n_points, test.n_local, trial.n_local))
        local[sl] = np.einsum("eqij,eq->eij", vals, geo.dx[sl])
    return assemble_local(trial, test, local)


def assemble_local(trial: Space, test: Space, local: np.ndarray) -> sp.csr_matrix:
    """Scatter element matrices (E, n_test, n_trial) into a CSR matrix."""
    indptr, indices, slot, shape = _pattern(test, trial)
    data = np.bincount(slot, weights=local.ravel(), minlength=len(indices))
    return sp.csr_matrix((data, indices, indptr), shape=shape)


def assemble_vector(test: Space, integrand, rule: QuadRule, coeffs=None, degree=None) -> np.ndarray:
    """Assemble a scalar linear form into a dense vector of length n_scalar."""
    _check_order(rule, degree)
    geo = geometry(test.mesh, rule)
    sval, sgrad = test.basis(rule)
    E = test.mesh.n_elements
    local = np.empty((E, test.n_local))
    for sl in _chunks(E):
        v = Basis(val=sval[None], grad=sgrad[sl], x=geo.x[sl])
        vals = integrand(v, _slice_coeffs(coeffs, sl))
        vals = np.broadcast_to(vals, (sl.stop - sl.start, rule.n_points, test.n_local))
        local[sl] = np.einsum("eqi,eq->ei", vals, geo.dx[sl])
    return scatter(test, local)


def scatter(test: Space, local: np.ndarray) -> np.ndarray:
    return np.bincount(test.dofmap.ravel(), weights=local.ravel(), minlength=test.n_scalar)


# -- common forms, with coefficients given at quadrature points (E, Q) ----------


def load_vector(test: Space, rule: QuadRule, f=None, flux=None) -> np.ndarray:
    """Vector of <f, v> + <flux, grad v> with f (E, Q) and flux (E, Q, 2)."""
    sval, sgrad = test.basis(rule)
    dx = geometry(test.mesh, rule).dx
    local = np.zeros((test.mesh.n_elements, test.n_local))
    if f is not None:
        local += np.einsum("qi,eq->ei", sval, np.broadcast_to(f, dx.shape) * dx)
    if flux is not None:
        local += np.einsum("eqia,eqa->ei", sgrad, flux * dx[..., None])
    return scatter(test, local)


def local_mass(space: Space, rule: QuadRule, coef=None) -> np.ndarray:
    """Element matrices (E, n, n) of <coef u, v>."""
    val = space.basis(rule)[0]
    w = geometry(space.mesh, rule).dx
    if coef is not None:
        w = w * coef
    vv = val[:, :, None] * val[:, None, :]
    return np.tensordot(w, vv, axes=(1, 0))


def local_stiffness(space: Space, rule: QuadRule, coef=None) -> np.ndarray:
    """Element matrices (E, n, n) of <coef grad u, grad v>."""
    g = space.basis(rule)[1]
    w = geometry(space.mesh, rule).dx
    if coef is not None:
        w = w * coef
    E, Q, n, _ = g.shape
    out = np.empty((E, n, n))
    for sl in _chunks(E):
        a = g[sl].transpose(0, 2, 1, 3).reshape(-1, n, 2 * Q)
        b = (g[sl] * w[sl][:, :, None, None]).transpose(0, 2, 1, 3).reshape(-1, n, 2 * Q)
        out[sl] = a @ b.transpose(0, 2, 1)
    return out


def local_advection(space: Space, rule: QuadRule, w_field: np.ndarray, coef=None, skew: bool = False) -> np.ndarray:
    """Element matrices of <coef (w . grad u), v>, or of its skew-symmetric
    part 1/2 <coef w . grad u, v> - 1/2 <coef w . grad v, u> when skew."""
    val, g = space.basis(rule)
    dx = geometry(space.mesh, rule).dx
    cw = w_field * (dx if coef is None else dx * coef)[..., None]
    d = np.einsum("eqa,eqja->eqj", cw, g)
    conv = np.matmul(val.T[None], d)
    if skew:
        return 0.5 * (conv - conv.transpose(0, 2, 1))
    return conv


def mass_matrix(space: Space, rule: QuadRule, coef=None) -> sp.csr_matrix:
    """<coef u, v>; coef defaults to 1."""
    return assemble_local(space, space, local_mass(space, rule, coef))


def stiffness_matrix(space: Space, rule: QuadRule, coef=None) -> sp.csr_matrix:
    """<coef grad u, grad v>; coef defaults to 1."""
    return assemble_local(space, space, local_stiffness(space, rule, coef))


def advection_matrix(space: Space, rule: QuadRule, w_field: np.ndarray, coef=None, skew: bool = False,
                     reaction=None) -> sp.csr_matrix:
    """Convection matrix of <coef (w . grad u), v> (see :func:`local_advection`),
    plus <reaction u, v> when given.  Coefficients are quadrature-point arrays."""
    local = local_advection(space, rule, w_field, coef, skew)
    if reaction is not None:
        local = local + local_mass(space, rule, reaction)
    return assemble_local(space, space, local)


def coupling_matrix(trial: Space, test: Space, rule: QuadRule, coef=None, trial_derivative=None,
                    test_derivative=None) -> sp.csr_matrix:
    """Mixed matrix <coef D_a u, D_b v> with D the value (None) or the
    derivative along axis 0/1, between scalar spaces on the same mesh."""
    tval, tgrad = trial.basis(rule)
    sval, sgrad = test.basis(rule)
    dx = geometry(test.mesh, rule).dx
    w = dx if coef is None else dx * coef
    E = test.mesh.n_elements
    local = np.empty((E, test.n_local, trial.n_local))
    for sl in _chunks(E):
        a = tval[None] if trial_derivative is None else tgrad[sl][..., trial_derivative]
        b = sval[None] if test_derivative is None else sgrad[sl][..., test_derivative]
        a = np.broadcast_to(a, (sl.stop - sl.start,) + a.shape[1:])
        b = np.broadcast_to(b, (sl.stop - sl.start,) + b.shape[1:])
        local[sl] = np.einsum("eqj,eqi,eq->eij", a, b, w[sl])
    return assemble_local(trial, test, local)
