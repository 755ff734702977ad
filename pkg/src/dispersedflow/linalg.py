"""Iterative solvers for the sparse systems produced by the schemes.

The Krylov iterations come from :mod:`scipy.sparse.linalg`; this module adds
Jacobi preconditioning, an independent true-residual check on every returned
solution and the zero-mean handling of pure Neumann problems.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    """Raised when an iteration fails; carries the final relative residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class NullspaceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverSettings:
    rtol: float = 1e-10
    atol: float = 1e-300
    maxiter: int = 20000
    preconditioner: str = "diagonal"
    restart: int = 60

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError("tolerance must be positive")
        if self.preconditioner not in ("none", "diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


DEFAULT = SolverSettings()


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    if not A.has_sorted_indices:
        A.sort_indices()
    return A


def _preconditioner(A, s: SolverSettings):
    if s.preconditioner == "none":
        return None
    d = A.diagonal()
    d = np.where(np.abs(d) > 0, d, 1.0)
    inv = 1.0 / d
    return spla.LinearOperator(A.shape, matvec=lambda x: inv * x, dtype=float)


def residual(A, x, b) -> float:
    """Relative residual ||b - Ax|| / ||b|| (absolute when b = 0)."""
    r = np.linalg.norm(b - A @ x)
    nb = np.linalg.norm(b)
    return float(r / nb) if nb > 0 else float(r)


def _accept(A, x, b, s: SolverSettings, name: str):
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{name} produced non-finite values")
    res = residual(A, x, b)
    # allow for the rounding difference between the recursive and true residual
    if np.linalg.norm(b) > 0 and res > 10 * s.rtol and res * np.linalg.norm(b) > s.atol:
        raise SolverError(f"{name} did not reach the tolerance", res)
    return x


def _run(method, A, b, s, x0, name, retries=3):
    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    M = _preconditioner(A, s)
    x = x0
    for _ in range(retries):
        kw = dict(rtol=s.rtol, atol=s.atol, maxiter=s.maxiter, M=M, x0=x)
        if method is spla.gmres:
            kw["restart"] = s.restart
        x, info = method(A, b, **kw)
        if info < 0:
            raise SolverError(f"{name} broke down", residual(A, x, b))
        if residual(A, x, b) <= s.rtol:
            return _accept(A, x, b, s, name)
    return _accept(A, x, b, s, name)


def solve_spd(A, b, s: SolverSettings = DEFAULT, x0=None) -> np.ndarray:
    """Preconditioned conjugate gradients for symmetric positive definite A."""
    return _run(spla.cg, A, b, s, x0, "conjugate gradients")


def solve_nonsymmetric(A, b, s: SolverSettings = DEFAULT, x0=None, method: str = "bicgstab") -> np.ndarray:
    """BiCGSTAB (default) or restarted GMRES for a nonsingular A.

    A BiCGSTAB breakdown or stagnation falls back to GMRES.
    """
    if method == "gmres":
        return _run(spla.gmres, A, b, s, x0, "GMRES")
    if method != "bicgstab":
        raise ValueError(f"unknown method {method!r}")
    try:
        return _run(spla.bicgstab, A, b, s, x0, "BiCGSTAB", retries=2)
    except SolverError:
        return _run(spla.gmres, A, b, s, x0, "GMRES")


def solve_singular_neumann(A, b, weights, s: SolverSettings = DEFAULT, x0=None,
                           warn_tol: float = 1e-8) -> np.ndarray:
    """Solve a symmetric system whose nullspace is the constant vector.

    `b` is projected onto the range (orthogonal to constants) and the result
    is shifted to zero weighted mean, ``weights @ x = 0``, where `weights`
    holds the integrals of the basis functions.
    """
    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = len(b)
    mean_b = b.sum() / n
    scale = np.abs(b).sum()
    if scale > 0 and abs(b.sum()) > warn_tol * scale:
        warnings.warn(f"right-hand side has a constant component {b.sum():.3e}", NullspaceWarning, stacklevel=2)
    b = b - mean_b
    if not np.any(b):
        return np.zeros(n)
    one = np.ones(n)

    def project(x):
        return x - (x.sum() / n) * one

    op = spla.LinearOperator(A.shape, matvec=lambda x: A @ project(x), dtype=float)
    M = _preconditioner(A, s)
    if M is not None:
        Minner = M

        def precond(x):
            return project(Minner.matvec(x))

        M = spla.LinearOperator(A.shape, matvec=precond, dtype=float)
    x = None if x0 is None else project(np.asarray(x0, dtype=float))
    for _ in range(3):
        x, info = spla.cg(op, b, rtol=s.rtol, atol=s.atol, maxiter=s.maxiter, M=M, x0=x)
        if info < 0:
            raise SolverError("conjugate gradients broke down", residual(A, x, b))
        if residual(A, x, b) <= s.rtol:
            break
    x = _accept(A, x, b, s, "conjugate gradients (Neumann)")
    return x - (w @ x) / w.sum()


def solve_direct(A, b) -> np.ndarray:
    """Sparse LU solve, used for saddle-point systems."""
    A = sp.csc_matrix(A)
    x = spla.spsolve(A, np.asarray(b, dtype=float))
    if not np.all(np.isfinite(x)):
        raise SolverError("direct solve produced non-finite values")
    return x
