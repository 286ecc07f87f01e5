"""Energy functional, internal force vector, and training losses.

The total energy is a Gauss-quadrature sum of the strain energy over
all elements and time steps.  The internal force vector is its gradient
with respect to the nodal displacement values, obtained by a backward
pass rather than element-by-element assembly.  For training, the whole
computation (including that inner backward pass and the gradients of
the total loss) is recorded once as a static tape and replayed with new
parameters every epoch.

Body-force and traction contributions are carried as configuration
slots pinned to zero; every benchmark drives deformation through
prescribed displacements only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import network as net
from .constitutive import MODEL_PARAMS, taped_energy_from_f
from .errors import InvalidArgumentError

__all__ = [
    "WeightsConfig",
    "LossBreakdown",
    "DEFAULT_GUARD",
    "free_dof_mask",
    "energy",
    "energy_from_nodal",
    "internal_force",
    "internal_force_from_nodal",
    "residual_sq_free",
    "net_force",
    "data_loss",
    "force_loss",
    "LossGraph",
]

DEFAULT_GUARD = {"j_floor": 0.05, "penalty": 1.0e6, "gent_margin": 0.95}

# configuration slots for the zero body force / zero traction terms
BODY_FORCE = np.zeros(3)
SURFACE_TRACTION = np.zeros(3)


@dataclass(frozen=True)
class WeightsConfig:
    """Loss weights: total = beta*(energy + alpha*residual) + gamma*Lu + delta*Lf."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0.0:
                raise InvalidArgumentError(f"{name} must be >= 0")


@dataclass
class LossBreakdown:
    energy: float
    residual: float
    data_term: float
    force_term: float
    total: float
    per_step_energy: np.ndarray
    inverted_count: int = 0
    lockup_count: int = 0


def free_dof_mask(mesh, ansatz, tol=1e-9):
    """1.0 at free (node, component) entries, 0.0 where the ansatz
    prescribes all three components (both faces on the stretch axis)."""
    x = mesh.node_coords[:, ansatz.axis]
    constrained = (np.abs(x) <= tol) | (np.abs(x - ansatz.length) <= tol)
    mask = np.ones((mesh.n_nodes, 3))
    mask[constrained] = 0.0
    return mask


def moving_face(mesh, ansatz):
    """Node ids and outward normals of the displaced face."""
    name = "xyz"[ansatz.axis] + "max"
    ids = mesh.node_set(name)
    normals = np.zeros((ids.size, 3))
    normals[:, ansatz.axis] = 1.0
    return ids, normals


# ---------------------------------------------------------------------
# recorded quadrature chain (shared by the eager ops and LossGraph)


def _taped_energy_chain(tape, cache, spec, params, u_var, n_steps, guard,
                        energy_fn=None):
    """From a (N_t, N, 3) displacement Var to (energy, per-step, diag)."""
    mesh = cache.mesh
    conn = mesh.elements
    n_t = int(n_steps)
    n_e = conn.shape[0]

    u_elem = ad.reshape(
        ad.gather(u_var, conn.ravel(), axis=1), (n_t, n_e, 8, 3)
    )
    grad_n = tape.const(cache.grad_n)
    grad_u = ad.einsum("neIi,eqIj->neqij", u_elem, grad_n)
    f_def = grad_u + tape.const(np.eye(3))
    if energy_fn is not None:
        psi, diag = energy_fn(tape, f_def)
    else:
        psi, diag = taped_energy_from_f(tape, spec, params, f_def, guard=guard)
    wdet = tape.const(cache.weights[None, :] * cache.det_j)
    per_step = ad.einsum("eq,neq->n", wdet, psi)
    total = ad.vsum(per_step)
    return total, per_step, diag


def _nodal_u_from_network(state, ansatz, mesh):
    """Evaluate the ansatz displacement at every node and step."""
    times = ansatz.step_times()
    pts = np.tile(mesh.node_coords, (ansatz.n_steps, 1))
    tt = np.repeat(times, mesh.n_nodes)
    u = net.displacement_batch(state, ansatz, pts, tt)
    return u.reshape(ansatz.n_steps, mesh.n_nodes, 3)


def energy_from_nodal(cache, spec, u_steps, guard=None, energy_fn=None):
    """Total and per-step energy of an explicit nodal displacement history."""
    u_steps = np.asarray(u_steps, dtype=np.float64)
    if u_steps.ndim == 2:
        u_steps = u_steps[None]
    tape = ad.Tape()
    u_var = tape.leaf(u_steps)
    total, per_step, _ = _taped_energy_chain(
        tape, cache, spec, spec.params if spec else None, u_var,
        u_steps.shape[0], guard, energy_fn,
    )
    return float(total.value), per_step.value.copy()


def internal_force_from_nodal(cache, spec, u_steps, guard=None, energy_fn=None):
    """f = d(energy)/d(nodal u) for an explicit displacement history."""
    u_steps = np.asarray(u_steps, dtype=np.float64)
    squeeze = u_steps.ndim == 2
    if squeeze:
        u_steps = u_steps[None]
    tape = ad.Tape()
    u_var = tape.leaf(u_steps)
    total, _, _ = _taped_energy_chain(
        tape, cache, spec, spec.params if spec else None, u_var,
        u_steps.shape[0], guard, energy_fn,
    )
    (f,) = ad.backward(tape, total, wrt=[u_var])
    return f[0] if squeeze else f


def energy(cache, spec, state, ansatz, guard=None):
    """Quadrature energy of the network displacement field.

    Returns (total, per-step array); zero network and zero ramp give 0.
    """
    u = _nodal_u_from_network(state, ansatz, cache.mesh)
    return energy_from_nodal(cache, spec, u, guard=guard)


def internal_force(cache, spec, state, ansatz, guard=None):
    """Nodal internal forces (N), shape (n_steps, n_nodes, 3)."""
    u = _nodal_u_from_network(state, ansatz, cache.mesh)
    return internal_force_from_nodal(cache, spec, u, guard=guard)


def residual_sq_free(forces, mask):
    """Sum of squared internal forces over free degrees of freedom."""
    forces = np.asarray(forces, dtype=np.float64)
    return float(np.sum((forces * mask) ** 2))


def net_force(forces, node_ids, normals):
    """Net reaction on a surface node set: sum of f . n, per time step."""
    node_ids = np.asarray(node_ids)
    if node_ids.size == 0:
        raise InvalidArgumentError("surface node set is empty")
    forces = np.asarray(forces, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    if normals.ndim == 1:
        normals = np.broadcast_to(normals, (node_ids.size, 3))
    squeeze = forces.ndim == 2
    if squeeze:
        forces = forces[None]
    out = np.einsum("nFi,Fi->n", forces[:, node_ids, :], normals)
    return float(out[0]) if squeeze else out


def data_loss(state, ansatz, dataset):
    """Mean squared displacement mismatch at the measurement points.

    The network is evaluated directly at the measured coordinates and
    times; samples never get interpolated onto the mesh.
    """
    if dataset.n_samples == 0:
        raise InvalidArgumentError("dataset has no displacement samples")
    u = net.displacement_batch(state, ansatz, dataset.points, dataset.times)
    diff = u - dataset.disps
    return float(np.mean(np.sum(diff * diff, axis=1)))


def force_loss(predicted, measured):
    """Mean squared global-force mismatch over the time steps."""
    predicted = np.asarray(predicted, dtype=np.float64)
    measured = np.asarray(measured, dtype=np.float64)
    if predicted.shape != measured.shape:
        raise InvalidArgumentError(
            f"force series lengths differ: {predicted.shape} vs {measured.shape}"
        )
    d = predicted - measured
    return float(np.mean(d * d))


# ---------------------------------------------------------------------
# static training graph


class LossGraph:
    """One recorded evaluation of the total loss and its gradients.

    Built once per run; `evaluate` replays it with new weights, biases,
    and (log-space) material parameters.  Gradient nodes live on the
    same tape, so every epoch is a single replay.
    """

    def __init__(self, cache, spec, state, ansatz, weights_cfg,
                 dataset=None, guard=DEFAULT_GUARD, material_log_init=None):
        mesh = cache.mesh
        self.cache = cache
        self.spec = spec
        self.ansatz = ansatz
        self.weights_cfg = weights_cfg
        self.template = state
        tape = ad.Tape()
        self.tape = tape

        # --- leaves -------------------------------------------------
        self.w_vars = [tape.leaf(w) for w in state.weights]
        self.b_vars = [tape.leaf(b) for b in state.biases]
        self.theta_names = tuple(sorted(spec.trainable))
        theta_by_name = {}
        for name in self.theta_names:
            init = (material_log_init or {}).get(name, np.log(spec.params[name]))
            theta_by_name[name] = tape.leaf(np.asarray(float(init)))
        self.theta_vars = [theta_by_name[n] for n in self.theta_names]
        params = {
            name: ad.vexp(theta_by_name[name]) if name in theta_by_name
            else spec.params[name]
            for name in MODEL_PARAMS[spec.model]
        }

        # --- displacement field at all nodes and steps ---------------
        times = ansatz.step_times()
        pts = np.tile(mesh.node_coords, (ansatz.n_steps, 1))
        tt = np.repeat(times, mesh.n_nodes)
        inputs = np.concatenate([pts, tt[:, None]], axis=1)
        inputs_c = tape.const(net.normalize_inputs(state, inputs))
        raw = net.taped_forward(tape, state, self.w_vars, self.b_vars, inputs_c)

        xa = pts[:, ansatz.axis]
        g_fac = ansatz.distance_factor(xa, tt)[:, None]
        tilde = np.zeros((pts.shape[0], 3))
        tilde[:, ansatz.axis] = ansatz.prescribed_part(xa, tt)
        u_flat = tape.const(tilde) + tape.const(g_fac) * raw
        self.u_node = ad.reshape(u_flat, (ansatz.n_steps, mesh.n_nodes, 3))

        # --- energy and internal force -------------------------------
        self.energy_var, self.per_step_var, diag = _taped_energy_chain(
            tape, cache, spec, params, self.u_node, ansatz.n_steps, guard
        )
        self.j_var = diag["J"]
        self.gent_var = diag.get("gent_overshoot")

        (self.force_var,) = ad.backward(
            tape, self.energy_var, wrt=[self.u_node], create_graph=True
        )
        mask = tape.const(free_dof_mask(mesh, ansatz))
        self.residual_var = ad.vsum(self.force_var * self.force_var * mask)

        face_ids, face_normals = moving_face(mesh, ansatz)
        f_face = ad.gather(self.force_var, face_ids, axis=1)
        self.f_net_var = ad.einsum("nFi,Fi->n", f_face, tape.const(face_normals))

        w = weights_cfg
        loss_r = self.energy_var + w.alpha * self.residual_var
        total = w.beta * loss_r

        # --- data terms ----------------------------------------------
        self.data_var = None
        self.force_term_var = None
        if dataset is not None:
            if dataset.n_samples == 0:
                raise InvalidArgumentError("dataset has no displacement samples")
            d_inputs = np.concatenate(
                [dataset.points, dataset.times[:, None]], axis=1
            )
            d_inputs_c = tape.const(net.normalize_inputs(state, d_inputs))
            d_raw = net.taped_forward(tape, state, self.w_vars, self.b_vars, d_inputs_c)
            d_xa = dataset.points[:, ansatz.axis]
            d_g = ansatz.distance_factor(d_xa, dataset.times)[:, None]
            d_tilde = np.zeros_like(dataset.disps)
            d_tilde[:, ansatz.axis] = ansatz.prescribed_part(d_xa, dataset.times)
            d_u = tape.const(d_tilde) + tape.const(d_g) * d_raw
            diff = d_u - tape.const(dataset.disps)
            self.data_var = ad.vsum(diff * diff) / dataset.n_samples
            total = total + w.gamma * self.data_var

            if dataset.forces.shape[0] != ansatz.n_steps:
                raise InvalidArgumentError(
                    f"force series has {dataset.forces.shape[0]} entries, "
                    f"expected {ansatz.n_steps}"
                )
            fdiff = self.f_net_var - tape.const(dataset.forces)
            self.force_term_var = ad.vsum(fdiff * fdiff) / ansatz.n_steps
            total = total + w.delta * self.force_term_var

        self.total_var = total

        # --- parameter gradients --------------------------------------
        wrt = self.w_vars + self.b_vars + self.theta_vars
        self.grad_vars = ad.backward(tape, total, wrt=wrt, create_graph=True)

    # -----------------------------------------------------------------
    @property
    def n_weight_arrays(self):
        return len(self.w_vars) + len(self.b_vars)

    def evaluations_per_epoch(self):
        return self.cache.evaluations_per_epoch(self.ansatz.n_steps)

    def evaluate(self, weights, biases, theta_values=()):
        """Replay with new parameters; return (breakdown, grads, extras)."""
        feed = {}
        for var, val in zip(self.w_vars, weights):
            feed[var] = val
        for var, val in zip(self.b_vars, biases):
            feed[var] = val
        for var, val in zip(self.theta_vars, theta_values):
            feed[var] = np.asarray(float(val))
        self.tape.replay(feed)

        j = self.j_var.value
        inverted = int(np.count_nonzero(j <= 0.0))
        lockup = 0
        if self.gent_var is not None:
            lockup = int(np.count_nonzero(self.gent_var.value > 0.0))
        breakdown = LossBreakdown(
            energy=float(self.energy_var.value),
            residual=float(self.residual_var.value),
            data_term=float(self.data_var.value) if self.data_var is not None else 0.0,
            force_term=float(self.force_term_var.value)
            if self.force_term_var is not None
            else 0.0,
            total=float(self.total_var.value),
            per_step_energy=self.per_step_var.value.copy(),
            inverted_count=inverted,
            lockup_count=lockup,
        )
        grads = [g.value for g in self.grad_vars]
        return breakdown, grads

    def nodal_forces(self):
        return self.force_var.value.copy()

    def nodal_displacements(self):
        return self.u_node.value.copy()

    def f_net(self):
        return self.f_net_var.value.copy()
