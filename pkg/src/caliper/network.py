"""MLP displacement field, boundary ansatz, and the Adam optimizer.

The network maps (X1, X2, X3, t) to a 3-vector; inputs are affinely
normalized to [-1, 1] per axis from the mesh bounding box and the unit
time range.  The ansatz multiplies the network by a distance factor
g(X, t) = t * Xa * (Xa - L) that vanishes identically on the two
constrained faces, so essential boundary values are exact by
construction, not by penalty.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgumentError

__all__ = [
    "MlpState",
    "AnsatzConfig",
    "AdamState",
    "init_weights",
    "raw_forward",
    "displacement",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_SIZES = (4, 50, 50, 50, 50, 50, 3)


@dataclass
class MlpState:
    """Layer weights/biases plus the input normalization."""

    sizes: tuple
    weights: list  # per layer, (n_in, n_out)
    biases: list  # per layer, (n_out,)
    activation: str = "relu"
    input_shift: np.ndarray = field(default_factory=lambda: np.zeros(4))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(4))

    def copy(self):
        return MlpState(
            sizes=self.sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
            input_shift=self.input_shift.copy(),
            input_scale=self.input_scale.copy(),
        )


def init_weights(seed, sizes=DEFAULT_SIZES, activation="relu", normalization=None):
    """He-uniform fan-in initialization; biases start at zero.

    Reproducible per seed: the same seed yields bit-identical states.
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2:
        raise InvalidArgumentError("network needs at least input and output sizes")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    state = MlpState(sizes=sizes, weights=weights, biases=biases, activation=activation)
    if normalization is not None:
        shift, scale = normalization
        state.input_shift = np.asarray(shift, dtype=np.float64)
        state.input_scale = np.asarray(scale, dtype=np.float64)
    return state


def normalization_from_mesh(mesh, t_range=(0.0, 1.0)):
    """Affine map taking mesh coordinates and time into [-1, 1]^4."""
    lo, hi = mesh.bounding_box()
    lo = np.append(lo, t_range[0])
    hi = np.append(hi, t_range[1])
    span = np.where(hi > lo, hi - lo, 1.0)
    shift = 0.5 * (lo + hi)
    scale = 2.0 / span
    return shift, scale


def _activation_fn(name):
    if name == "relu":
        return lambda x: np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh
    raise InvalidArgumentError(f"unknown activation {name!r}")


def forward_batch(state, inputs):
    """Network output for raw (N, 4) inputs (X1, X2, X3, t)."""
    act = _activation_fn(state.activation)
    h = (np.asarray(inputs, dtype=np.float64) - state.input_shift) * state.input_scale
    last = len(state.weights) - 1
    for l, (w, b) in enumerate(zip(state.weights, state.biases)):
        h = h @ w + b
        if l < last:
            h = act(h)
    return h


def raw_forward(state, x, t):
    """Network output at a single point; deterministic."""
    inp = np.concatenate([np.asarray(x, dtype=np.float64).ravel(), [float(t)]])
    return forward_batch(state, inp[None])[0]


def normalize_inputs(state, inputs):
    """Apply the input normalization outside of the tape."""
    return (np.asarray(inputs, dtype=np.float64) - state.input_shift) * state.input_scale


def taped_forward(tape, state, w_vars, b_vars, inputs_const):
    """Record the forward pass with weights/biases as tape Vars.

    `inputs_const` must already be normalized (normalize_inputs).
    """
    if state.activation == "relu":
        act = ad.vrelu
    elif state.activation == "tanh":
        act = ad.vtanh
    else:
        raise InvalidArgumentError(f"unknown activation {state.activation!r}")
    h = inputs_const
    last = len(w_vars) - 1
    for l, (w, b) in enumerate(zip(w_vars, b_vars)):
        h = ad.matmul(h, w) + b
        if l < last:
            h = act(h)
    return h


@dataclass
class AnsatzConfig:
    """Uniaxial ramp plus a distance-function-weighted network term.

    `ramp` holds the prescribed face displacement at each step, step n
    occurring at normalized time n / n_steps.  Between steps the ramp
    interpolates linearly, which lets the field be evaluated at
    arbitrary measurement times.
    """

    length: float
    n_steps: int
    u_final: float
    axis: int = 0
    ramp: np.ndarray = None

    def __post_init__(self):
        if self.n_steps < 1:
            raise InvalidArgumentError("n_steps must be >= 1")
        if not 0 <= self.axis <= 2:
            raise InvalidArgumentError("axis must be 0, 1, or 2")
        if self.length <= 0:
            raise InvalidArgumentError("length must be positive")
        if self.ramp is None:
            self.ramp = self.u_final * np.arange(1, self.n_steps + 1) / self.n_steps
        self.ramp = np.asarray(self.ramp, dtype=np.float64)
        if self.ramp.shape != (self.n_steps,):
            raise InvalidArgumentError("ramp length must equal n_steps")

    def step_times(self):
        return np.arange(1, self.n_steps + 1) / self.n_steps

    def u_hat(self, t):
        """Prescribed face displacement at normalized time t."""
        knots_t = np.concatenate([[0.0], self.step_times()])
        knots_u = np.concatenate([[0.0], self.ramp])
        return np.interp(t, knots_t, knots_u)

    def distance_factor(self, x_axis, t):
        """g(X, t) = t * Xa * (Xa - L); exactly zero on both faces."""
        return t * x_axis * (x_axis - self.length)

    def prescribed_part(self, x_axis, t):
        """(Xa / L) * u_hat(t) along the stretch axis."""
        return (x_axis / self.length) * self.u_hat(t)


def displacement(state, ansatz, x, t):
    """Displacement field u(X, t); boundary values are bit-exact."""
    x = np.asarray(x, dtype=np.float64)
    xa = x[ansatz.axis]
    u = ansatz.distance_factor(xa, t) * raw_forward(state, x, t)
    u[ansatz.axis] += ansatz.prescribed_part(xa, t)
    return u


def displacement_batch(state, ansatz, points, times):
    """Vectorized displacement at (N, 3) points and (N,) times."""
    points = np.asarray(points, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    inputs = np.concatenate([points, times[:, None]], axis=1)
    raw = forward_batch(state, inputs)
    xa = points[:, ansatz.axis]
    u = ansatz.distance_factor(xa, times)[:, None] * raw
    u[:, ansatz.axis] += ansatz.prescribed_part(xa, times)
    return u


# ---------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment buffers mirroring the parameter list."""

    m: list
    v: list
    step: int = 0
    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, eta=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            eta=eta,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params, grads, state, lr_scales=None):
    """One Adam update with bias correction.

    Returns (new_params, accepted).  A non-finite gradient anywhere
    rejects the whole step: parameters and moments are left untouched
    and accepted is False, so the trainer can flag the epoch.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidArgumentError("parameter/gradient/moment lengths disagree")
    for g in grads:
        if not np.all(np.isfinite(g)):
            return params, False
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        lr = state.eta * (lr_scales[k] if lr_scales is not None else 1.0)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out, True


# ---------------------------------------------------------------------
# checkpoint file: versioned, deterministic bytes, round-trip exact

_MAGIC = b"caliper-ckpt v1\n"


def save_checkpoint(path, state, adam, epoch, material=None, extra=None):
    """Binary dump of network, optimizer moments, epoch, material params."""
    arrays = []

    def put(name, arr):
        arrays.append((name, np.ascontiguousarray(arr, dtype=np.float64)))

    for l, (w, b) in enumerate(zip(state.weights, state.biases)):
        put(f"w{l}", w)
        put(f"b{l}", b)
    for k, m in enumerate(adam.m):
        put(f"adam_m{k}", m)
    for k, v in enumerate(adam.v):
        put(f"adam_v{k}", v)
    put("input_shift", state.input_shift)
    put("input_scale", state.input_scale)

    header = {
        "sizes": list(state.sizes),
        "activation": state.activation,
        "epoch": int(epoch),
        "adam": {
            "step": adam.step,
            "eta": adam.eta,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
        },
        "material": dict(material or {}),
        "extra": dict(extra or {}),
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(a.tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; bit-exact round trip."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise InvalidArgumentError(f"{path} is not a caliper checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode())
        data = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            data[name] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()

    sizes = tuple(header["sizes"])
    n_layers = len(sizes) - 1
    state = MlpState(
        sizes=sizes,
        weights=[data[f"w{l}"] for l in range(n_layers)],
        biases=[data[f"b{l}"] for l in range(n_layers)],
        activation=header["activation"],
        input_shift=data["input_shift"],
        input_scale=data["input_scale"],
    )
    n_moments = sum(1 for k in data if k.startswith("adam_m"))
    adam = AdamState(
        m=[data[f"adam_m{k}"] for k in range(n_moments)],
        v=[data[f"adam_v{k}"] for k in range(n_moments)],
        step=header["adam"]["step"],
        eta=header["adam"]["eta"],
        beta1=header["adam"]["beta1"],
        beta2=header["adam"]["beta2"],
        eps=header["adam"]["eps"],
    )
    return state, adam, header["epoch"], dict(header["material"]), dict(header["extra"])
