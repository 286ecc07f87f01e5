"""Trilinear Hex8 shape functions and the 2x2x2 Gauss rule.

All per-quadrature-point quantities used by training epochs and by the
FEM oracle are precomputed once: weights, gradients of the shape
functions with respect to the reference coordinates X (the element
Jacobian is folded in), and the Jacobian determinants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveJacobianError

__all__ = [
    "VERTEX_XI",
    "GAUSS_POINTS",
    "GAUSS_WEIGHTS",
    "shape_values",
    "shape_gradients",
    "QuadratureCache",
    "build_cache",
]

# Canonical Hex8 vertex order: counterclockwise on the bottom face
# (zeta = -1), then the matching top face.
VERTEX_XI = np.array(
    [
        [-1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0],
        [1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
        [1.0, -1.0, 1.0],
        [1.0, 1.0, 1.0],
        [-1.0, 1.0, 1.0],
    ]
)

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = VERTEX_XI * _G
GAUSS_WEIGHTS = np.ones(8)


def shape_values(xi):
    """Values of the eight trilinear shape functions at xi."""
    xi = np.asarray(xi, dtype=np.float64)
    return 0.125 * np.prod(1.0 + VERTEX_XI * xi, axis=1)


def shape_gradients(xi):
    """Derivatives of the shape functions with respect to xi, shape (8, 3)."""
    xi = np.asarray(xi, dtype=np.float64)
    terms = 1.0 + VERTEX_XI * xi  # (8, 3)
    grad = np.empty((8, 3))
    grad[:, 0] = 0.125 * VERTEX_XI[:, 0] * terms[:, 1] * terms[:, 2]
    grad[:, 1] = 0.125 * VERTEX_XI[:, 1] * terms[:, 0] * terms[:, 2]
    grad[:, 2] = 0.125 * VERTEX_XI[:, 2] * terms[:, 0] * terms[:, 1]
    return grad


# (8 points, 8 nodes, 3) gradients with respect to xi at the Gauss points
_DN_DXI = np.stack([shape_gradients(p) for p in GAUSS_POINTS])


def element_jacobians(node_coords, elements):
    """Isoparametric Jacobians dX/dxi per element and Gauss point.

    Returns (jac, det_j) with jac[e, q, m, j] = dX_j / dxi_m of shape
    (E, 8, 3, 3) and det_j of shape (E, 8).
    """
    coords = np.asarray(node_coords, dtype=np.float64)[np.asarray(elements)]
    jac = np.einsum("qIm,eIj->eqmj", _DN_DXI, coords)
    return jac, np.linalg.det(jac)


@dataclass(frozen=True)
class QuadratureCache:
    """Per (element, Gauss point) constants for a fixed reference mesh."""

    mesh: object
    weights: np.ndarray  # (8,)
    det_j: np.ndarray  # (E, 8)
    grad_n: np.ndarray  # (E, 8, 8, 3): gradients with respect to X

    @property
    def n_elements(self):
        return self.det_j.shape[0]

    def volume(self):
        return float(np.sum(self.weights[None, :] * self.det_j))

    def evaluations_per_epoch(self, n_steps):
        """Quadrature-point evaluations one full-batch epoch performs."""
        return self.n_elements * 8 * int(n_steps)


def build_cache(mesh):
    """Precompute weights, X-gradients, and detJ for every Gauss point."""
    jac, det_j = element_jacobians(mesh.node_coords, mesh.elements)
    if np.min(det_j) <= 0.0:
        e, q = np.unravel_index(np.argmin(det_j), det_j.shape)
        raise NonPositiveJacobianError(int(e), int(q), float(det_j[e, q]))
    inv = np.linalg.inv(jac)  # (E, 8, 3, 3): (dX/dxi)^-1
    grad_n = np.einsum("qIm,eqjm->eqIj", _DN_DXI, inv)
    weights = GAUSS_WEIGHTS.copy()
    for arr in (weights, det_j, grad_n):
        arr.setflags(write=False)
    return QuadratureCache(mesh=mesh, weights=weights, det_j=det_j, grad_n=grad_n)
