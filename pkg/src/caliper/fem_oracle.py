"""Displacement-driven Newton FEM solver for the benchmark problems.

Total-Lagrangian, fully integrated Hex8, analytic constitutive tangent,
sparse direct linear solves.  Used as ground truth for the trained
networks and as the source of synthetic DIC data.  Load steps mirror
the training schedule so oracle outputs align with the network's time
inputs without interpolation; failed steps are bisected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import quadrature
from .constitutive import pk1_batch, pk1_tangent_batch
from .errors import InvalidArgumentError, MeshParseError, SolverError

__all__ = [
    "DirichletBC",
    "FemSolution",
    "uniaxial_bcs",
    "uniaxial_strain_bcs",
    "solve",
    "tangent_check",
    "save_solution",
    "load_solution",
]


@dataclass(frozen=True)
class DirichletBC:
    """One displacement component prescribed on a node set.

    The value ramps linearly from zero to `final` over the load steps.
    node_set "*" addresses every node in the mesh.
    """

    node_set: str
    component: int
    final: float


def uniaxial_bcs(mesh, axis, u_final):
    """Fix the min face completely; drive the max face along `axis`
    with its transverse components held (the benchmark BVP setup)."""
    lo = "xyz"[axis] + "min"
    hi = "xyz"[axis] + "max"
    bcs = [DirichletBC(lo, c, 0.0) for c in range(3)]
    for c in range(3):
        bcs.append(DirichletBC(hi, c, u_final if c == axis else 0.0))
    return bcs


def uniaxial_strain_bcs(mesh, axis, u_final):
    """Homogeneous uniaxial strain: all lateral displacements fixed
    everywhere, axial displacement prescribed on the end faces."""
    bcs = uniaxial_bcs(mesh, axis, u_final)
    for c in range(3):
        if c != axis:
            bcs.append(DirichletBC("*", c, 0.0))
    return bcs


@dataclass
class FemSolution:
    """Per-step converged fields of one oracle run."""

    times: np.ndarray  # (Nt,)
    displacements: np.ndarray  # (Nt, N, 3)
    f_net: np.ndarray  # (Nt,)
    history: list = field(default_factory=list)  # per step: residual norms

    @property
    def iterations(self):
        return [len(h) - 1 for h in self.history]


class _TrialFailed(Exception):
    pass


def _constraint_table(mesh, bcs):
    """(dof index -> final value) for all constrained dofs."""
    table = {}
    for bc in bcs:
        if bc.node_set == "*":
            ids = np.arange(mesh.n_nodes)
        else:
            ids = mesh.node_set(bc.node_set)
        if not 0 <= bc.component <= 2:
            raise InvalidArgumentError(f"bad component {bc.component}")
        for n in ids:
            table[3 * int(n) + bc.component] = bc.final
    return table


def _internal_force(cache, spec, u):
    conn = cache.mesh.elements
    u_e = u.reshape(-1, 3)[conn]
    grad_u = np.einsum("eIi,eqIj->eqij", u_e, cache.grad_n)
    f_def = grad_u + np.eye(3)
    jac = np.linalg.det(f_def)
    if np.min(jac) <= 0.0:
        raise _TrialFailed("element inversion in trial state")
    p = pk1_batch(spec, f_def)
    wdet = cache.weights[None, :] * cache.det_j
    f_e = np.einsum("eq,eqij,eqaj->eai", wdet, p, cache.grad_n)
    out = np.zeros((cache.mesh.n_nodes, 3))
    np.add.at(out, conn, f_e)
    return out.ravel(), f_def


def _tangent_matrix(cache, spec, f_def):
    conn = cache.mesh.elements
    a = pk1_tangent_batch(spec, f_def)
    wdet = cache.weights[None, :] * cache.det_j
    k_e = np.einsum("eq,eqijmn,eqaj,eqbn->eaibm", wdet, a,
                    cache.grad_n, cache.grad_n)
    dofs = (3 * conn[:, :, None] + np.arange(3)[None, None, :])  # (E, 8, 3)
    rows = np.broadcast_to(dofs[:, :, :, None, None], k_e.shape).ravel()
    cols = np.broadcast_to(dofs[:, None, None, :, :], k_e.shape).ravel()
    n = 3 * cache.mesh.n_nodes
    return scipy.sparse.coo_matrix(
        (k_e.ravel(), (rows, cols)), shape=(n, n)
    ).tocsr()


def _newton(cache, spec, u, prescribed, values, free, newton_tol, max_iter):
    """Solve for free dofs at fixed prescribed values; returns residual norms."""
    u = u.copy()
    u[prescribed] = values
    norms = []
    for _ in range(max_iter):
        r, f_def = _internal_force(cache, spec, u)
        if not np.all(np.isfinite(r)):
            raise _TrialFailed("non-finite residual")
        norm = float(np.linalg.norm(r[free])) if free.size else 0.0
        norms.append(norm)
        if norm < newton_tol:
            return u, r, norms
        k = _tangent_matrix(cache, spec, f_def)
        k_ff = k[free][:, free]
        try:
            du = scipy.sparse.linalg.spsolve(k_ff, -r[free])
        except Exception as exc:  # singular factorization
            raise _TrialFailed(f"linear solve failed: {exc}") from exc
        if not np.all(np.isfinite(du)):
            raise _TrialFailed("non-finite Newton update")
        u[free] += du
    raise _TrialFailed(f"no convergence in {max_iter} iterations")


def solve(mesh, spec, bcs, n_steps=10, newton_tol=1e-10, max_iter=50,
          max_bisections=8, force_surface=None, force_axis=None):
    """March the prescribed displacements in `n_steps` increments.

    Each step converges the free-dof internal force below newton_tol,
    with load-step bisection on failure.  f_net is the reaction sum on
    the moving face (or `force_surface`) along the drive axis.
    """
    cache = quadrature.build_cache(mesh)
    table = _constraint_table(mesh, bcs)
    prescribed = np.array(sorted(table), dtype=np.int64)
    finals = np.array([table[d] for d in prescribed])
    free = np.setdiff1d(np.arange(3 * mesh.n_nodes), prescribed)

    if force_axis is None:
        nonzero = [bc for bc in bcs if bc.final != 0.0]
        force_axis = nonzero[0].component if nonzero else 0
    if force_surface is None:
        force_surface = "xyz"[force_axis] + "max"
    face = mesh.node_set(force_surface)

    times = np.arange(1, n_steps + 1) / n_steps
    u = np.zeros(3 * mesh.n_nodes)
    displacements = np.empty((n_steps, mesh.n_nodes, 3))
    f_net = np.empty(n_steps)
    history = []

    t_done = 0.0
    for step, t_target in enumerate(times):
        step_norms = []
        bisections = 0
        while t_done < t_target - 1e-14:
            t_try = t_target
            while True:
                try:
                    u_new, r, norms = _newton(
                        cache, spec, u, prescribed, finals * t_try, free,
                        newton_tol, max_iter,
                    )
                    break
                except _TrialFailed as exc:
                    bisections += 1
                    if bisections > max_bisections:
                        raise SolverError(
                            f"step {step + 1} failed after {max_bisections} "
                            f"bisections: {exc}",
                            step=step + 1,
                            history=history + [step_norms],
                        ) from exc
                    t_try = t_done + 0.5 * (t_try - t_done)
            u = u_new
            t_done = t_try
            step_norms.extend(norms)
        displacements[step] = u.reshape(-1, 3)
        f_net[step] = float(np.sum(r.reshape(-1, 3)[face, force_axis]))
        history.append(step_norms)

    return FemSolution(times=times, displacements=displacements,
                       f_net=f_net, history=history)


def tangent_check(spec, states=None, n_states=20, seed=0, step=1e-6):
    """Max relative error of the analytic tangent against central
    finite differences of the analytic stress."""
    if states is None:
        rng = np.random.default_rng(seed)
        states = []
        while len(states) < n_states:
            f = np.eye(3) + 0.2 * rng.uniform(-1.0, 1.0, (3, 3))
            if not 0.5 < np.linalg.det(f) < 2.0:
                continue
            if "Jm" in spec.params:
                c = f.T @ f
                ibar1 = np.linalg.det(f) ** (-2.0 / 3.0) * np.trace(c)
                if ibar1 - 3.0 >= 0.8 * spec.params["Jm"]:
                    continue
            states.append(f)
    worst = 0.0
    for f in states:
        analytic = pk1_tangent_batch(spec, f[None])[0]
        fd = np.zeros((3, 3, 3, 3))
        for k in range(3):
            for l in range(3):
                fp = f.copy()
                fp[k, l] += step
                fm = f.copy()
                fm[k, l] -= step
                fd[:, :, k, l] = (
                    pk1_batch(spec, fp[None])[0] - pk1_batch(spec, fm[None])[0]
                ) / (2 * step)
        worst = max(worst, np.max(np.abs(analytic - fd)) / np.max(np.abs(fd)))
    return worst


# ---------------------------------------------------------------------
# solution file I/O (shared with the comparator and DIC generation)


def save_solution(solution, path):
    n_t, n_nodes, _ = solution.displacements.shape
    lines = ["caliper-solution v1", f"steps {n_t} nodes {n_nodes}"]
    for k in range(n_t):
        lines.append(
            f"step {k + 1} t {float(solution.times[k])!r} "
            f"fnet {float(solution.f_net[k])!r}"
        )
        for ux, uy, uz in solution.displacements[k]:
            lines.append(f"{float(ux)!r} {float(uy)!r} {float(uz)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_solution(path):
    with open(path) as fh:
        tokens = fh.read().split()
    pos = 0

    def take(field):
        nonlocal pos
        if pos >= len(tokens):
            raise MeshParseError("unexpected end of file", field=field)
        tok = tokens[pos]
        pos += 1
        return tok

    if take("header") != "caliper-solution" or take("version") != "v1":
        raise MeshParseError("not a caliper-solution v1 file", field="header")
    if take("steps") != "steps":
        raise MeshParseError("expected 'steps'", field="steps")
    n_t = int(take("step count"))
    if take("nodes") != "nodes":
        raise MeshParseError("expected 'nodes'", field="nodes")
    n_nodes = int(take("node count"))
    times = np.empty(n_t)
    f_net = np.empty(n_t)
    disps = np.empty((n_t, n_nodes, 3))
    for k in range(n_t):
        if take("step") != "step":
            raise MeshParseError("expected 'step'", field="step")
        take("step index")
        if take("t") != "t":
            raise MeshParseError("expected 't'", field="t")
        times[k] = float(take("time"))
        if take("fnet") != "fnet":
            raise MeshParseError("expected 'fnet'", field="fnet")
        f_net[k] = float(take("fnet value"))
        for i in range(n_nodes):
            disps[k, i] = [float(take("ux")), float(take("uy")), float(take("uz"))]
    return FemSolution(times=times, displacements=disps, f_net=f_net, history=[])
