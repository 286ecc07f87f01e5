"""Deformation measures from nodal displacements.

The Green-Lagrange strain never appears at runtime; everything the
energy densities need is derived from F = I + grad(u).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvertedElementError

__all__ = ["DeformationState", "displacement_gradient", "deformation_state"]


@dataclass(frozen=True)
class DeformationState:
    """Deformation gradient and derived invariants at one material point."""

    F: np.ndarray  # (3, 3)
    J: float
    C: np.ndarray  # (3, 3)
    I1: float
    I2: float
    I3: float
    Ibar1: float


def displacement_gradient(cache, nodal_u, e, q):
    """grad(u) at element e, Gauss point q: sum of u_I outer gradN_I."""
    conn = cache.mesh.elements[e]
    u_e = np.asarray(nodal_u, dtype=np.float64)[conn]
    return np.einsum("Ii,Ij->ij", u_e, cache.grad_n[e, q])


def displacement_gradients(cache, nodal_u):
    """Batched grad(u) over all elements and points, shape (E, 8, 3, 3)."""
    u_e = np.asarray(nodal_u, dtype=np.float64)[cache.mesh.elements]
    return np.einsum("eIi,eqIj->eqij", u_e, cache.grad_n)


def deformation_state(grad_u):
    """Build F = I + grad(u) and its invariants.

    Raises InvertedElementError when det F <= 0; training-time handling
    of inverted samples lives in the loss assembly, which never calls
    this eager path.
    """
    grad_u = np.asarray(grad_u, dtype=np.float64)
    f = np.eye(3) + grad_u
    j = float(np.linalg.det(f))
    if j <= 0.0:
        raise InvertedElementError(j)
    c = f.T @ f
    i1 = float(np.trace(c))
    i2 = 0.5 * (i1 * i1 - float(np.trace(c @ c)))
    i3 = float(np.linalg.det(c))
    ibar1 = j ** (-2.0 / 3.0) * i1
    return DeformationState(F=f, J=j, C=c, I1=i1, I2=i2, I3=i3, Ibar1=ibar1)
