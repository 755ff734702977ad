"""Gauss-Legendre tensor rules on the reference square."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True, eq=False)
class QuadRule:
    order: int  # polynomial degree integrated exactly in each direction
    points: np.ndarray  # (Q, 2)
    weights: np.ndarray  # (Q,)

    @property
    def n_points(self) -> int:
        return len(self.weights)


def gauss_rule(order: int) -> QuadRule:
    """Tensor Gauss rule exact for polynomials of degree `order` per direction."""
    if order < 0:
        raise ValueError("quadrature order must be non-negative")
    return _rule(order // 2 + 1)


@lru_cache(maxsize=None)
def _rule(n: int) -> QuadRule:
    x, w = np.polynomial.legendre.leggauss(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pts.setflags(write=False)
    wts = W.ravel()
    wts.setflags(write=False)
    return QuadRule(2 * n - 1, pts, wts)


@lru_cache(maxsize=None)
def gauss_rule_1d(order: int):
    n = order // 2 + 1
    return np.polynomial.legendre.leggauss(n)
