"""Tensor-product Lagrange shape functions on [-1, 1]^2."""
import numpy as np

# local node -> (ix, iy) position in the 1D node sets, local order as in mesh.py
_TENSOR_INDEX = {
    1: [(0, 0), (1, 0), (1, 1), (0, 1)],
    2: [(0, 0), (2, 0), (2, 2), (0, 2), (1, 0), (2, 1), (1, 2), (0, 1), (1, 1)],
}
_NODES_1D = {1: np.array([-1.0, 1.0]), 2: np.array([-1.0, 0.0, 1.0])}


def _lagrange_1d(degree, t):
    """Values, first and second derivatives (P, n) of 1D Lagrange polynomials."""
    t = np.asarray(t, dtype=float)
    if degree == 1:
        v = np.stack([(1 - t) / 2, (1 + t) / 2], axis=-1)
        d = np.stack([-0.5 * np.ones_like(t), 0.5 * np.ones_like(t)], axis=-1)
        dd = np.zeros_like(v)
    elif degree == 2:
        v = np.stack([t * (t - 1) / 2, 1 - t**2, t * (t + 1) / 2], axis=-1)
        d = np.stack([t - 0.5, -2 * t, t + 0.5], axis=-1)
        dd = np.stack([np.ones_like(t), -2 * np.ones_like(t), np.ones_like(t)], axis=-1)
    else:
        raise ValueError(f"unsupported degree {degree}")
    return v, d, dd


def lagrange_basis(degree, points):
    """Shape functions at reference points.

    Returns values (P, nb), gradients (P, nb, 2) and Hessians (P, nb, 2, 2).
    """
    points = np.atleast_2d(points)
    vx, dx, ddx = _lagrange_1d(degree, points[:, 0])
    vy, dy, ddy = _lagrange_1d(degree, points[:, 1])
    idx = np.array(_TENSOR_INDEX[degree])
    ix, iy = idx[:, 0], idx[:, 1]
    val = vx[:, ix] * vy[:, iy]
    grad = np.stack([dx[:, ix] * vy[:, iy], vx[:, ix] * dy[:, iy]], axis=-1)
    hess = np.empty(val.shape + (2, 2))
    hess[..., 0, 0] = ddx[:, ix] * vy[:, iy]
    hess[..., 0, 1] = hess[..., 1, 0] = dx[:, ix] * dy[:, iy]
    hess[..., 1, 1] = vx[:, ix] * ddy[:, iy]
    return val, grad, hess


def reference_nodes(degree):
    """Reference coordinates of the local nodes (nb, 2)."""
    n1 = _NODES_1D[degree]
    return np.array([[n1[i], n1[j]] for i, j in _TENSOR_INDEX[degree]])
