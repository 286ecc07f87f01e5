"""Reverse-mode automatic differentiation on a replayable array tape.

Expressions over float64 numpy arrays are recorded as a flat list of
primitive operations.  A backward pass emits the adjoint computation as
further tape operations, so gradients are themselves differentiable
(reverse-over-reverse).  A recorded tape can be re-evaluated with new
leaf values without re-recording, which is what the training loop does
every epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidArgumentError

__all__ = [
    "Tape",
    "Var",
    "GradBundle",
    "record",
    "backward",
    "grad_of_grad_norm",
    "vexp",
    "vlog",
    "vsqrt",
    "vrelu",
    "vsum",
    "matmul",
    "einsum",
    "reshape",
    "gather",
    "dot",
    "outer",
    "matvec",
    "trace3",
    "det3",
]


class Var:
    """Handle to a single tape node."""

    __slots__ = ("tape", "index")

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.tape.values[self.index].shape

    def __repr__(self):
        return f"Var(#{self.index}, {self.tape.ops[self.index]}, shape={self.shape})"

    # -- arithmetic -------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise InvalidArgumentError("operands recorded on different tapes")
            return other
        return self.tape.const(np.asarray(other, dtype=np.float64))

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return self.tape._emit("offset", (self.index,), float(other))
        return self.tape._emit("add", (self.index, self._coerce(other).index), None)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self.tape._emit("offset", (self.index,), -float(other))
        return self.tape._emit("sub", (self.index, self._coerce(other).index), None)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape._emit("scale", (self.index,), float(other))
        return self.tape._emit("mul", (self.index, self._coerce(other).index), None)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self.tape._emit("scale", (self.index,), 1.0 / float(other))
        return self.tape._emit("div", (self.index, self._coerce(other).index), None)

    def __rtruediv__(self, other):
        return (self ** -1.0) * other

    def __pow__(self, exponent):
        return self.tape._emit("pow", (self.index,), float(exponent))

    def __neg__(self):
        return self.tape._emit("neg", (self.index,), None)


# ---------------------------------------------------------------------
# forward evaluation of each primitive


def _scatter_add(a, idx, axis, size):
    shape = list(a.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=np.float64)
    moved = np.moveaxis(out, axis, 0)
    np.add.at(moved, idx, np.moveaxis(a, axis, 0))
    return out


def _embed33(a, i, j):
    out = np.zeros(a.shape + (3, 3), dtype=np.float64)
    out[..., i, j] = a
    return out


_FWD = {
    "add": lambda v, p, a: v[p[0]] + v[p[1]],
    "sub": lambda v, p, a: v[p[0]] - v[p[1]],
    "mul": lambda v, p, a: v[p[0]] * v[p[1]],
    "div": lambda v, p, a: v[p[0]] / v[p[1]],
    "neg": lambda v, p, a: -v[p[0]],
    "scale": lambda v, p, a: v[p[0]] * a,
    "offset": lambda v, p, a: v[p[0]] + a,
    "pow": lambda v, p, a: v[p[0]] ** a,
    "exp": lambda v, p, a: np.exp(v[p[0]]),
    "log": lambda v, p, a: np.log(v[p[0]]),
    "sqrt": lambda v, p, a: np.sqrt(v[p[0]]),
    "relu": lambda v, p, a: np.maximum(v[p[0]], 0.0),
    "step": lambda v, p, a: (v[p[0]] > 0.0).astype(np.float64),
    "tanh": lambda v, p, a: np.tanh(v[p[0]]),
    "matmul": lambda v, p, a: v[p[0]] @ v[p[1]],
    "transpose2": lambda v, p, a: v[p[0]].T,
    "einsum": lambda v, p, a: np.einsum(a[0], *[v[i] for i in p]),
    "sum": lambda v, p, a: np.sum(v[p[0]], axis=a),
    "reshape": lambda v, p, a: np.reshape(v[p[0]], a),
    "broadcast": lambda v, p, a: np.broadcast_to(v[p[0]], a),
    "gather": lambda v, p, a: np.take(v[p[0]], a[0], axis=a[1]),
    "scatter_add": lambda v, p, a: _scatter_add(v[p[0]], a[0], a[1], a[2]),
    "index33": lambda v, p, a: v[p[0]][..., a[0], a[1]],
    "embed33": lambda v, p, a: _embed33(v[p[0]], a[0], a[1]),
}


class Tape:
    """Flat record of primitive array operations.

    Nodes are appended in topological order: every operand index
    precedes its consumers.  `values` doubles as the value buffer for
    replay; `grads` holds the gradient buffer of the last backward
    pass, keyed by node index.
    """

    def __init__(self):
        self.ops = []
        self.parents = []
        self.aux = []
        self.values = []
        self.grads = {}

    def __len__(self):
        return len(self.ops)

    def _append(self, op, parents, aux, value):
        self.ops.append(op)
        self.parents.append(parents)
        self.aux.append(aux)
        self.values.append(value)
        return Var(self, len(self.ops) - 1)

    def _emit(self, op, parents, aux):
        if op in ("log", "sqrt") and np.min(self.values[parents[0]]) <= 0.0:
            raise DomainError(f"{op} of non-positive value recorded")
        value = _FWD[op](self.values, parents, aux)
        return self._append(op, parents, aux, value)

    def leaf(self, value):
        """Differentiable input; may be re-fed on replay."""
        return self._append("leaf", (), None, np.asarray(value, dtype=np.float64))

    def const(self, value):
        """Non-differentiable baked-in value."""
        return self._append("const", (), None, np.asarray(value, dtype=np.float64))

    def replay(self, feed):
        """Re-evaluate the whole tape with new values for some leaves.

        `feed` maps leaf Vars (or indices) to arrays.  Shapes must match
        the originally recorded leaves.  Domain checks are not re-run;
        guarded expressions are expected to keep values in range.
        """
        by_index = {}
        for key, val in feed.items():
            idx = key.index if isinstance(key, Var) else int(key)
            if self.ops[idx] != "leaf":
                raise InvalidArgumentError(f"node #{idx} is not a leaf")
            arr = np.asarray(val, dtype=np.float64)
            if arr.shape != self.values[idx].shape:
                raise InvalidArgumentError(
                    f"leaf #{idx} expects shape {self.values[idx].shape}, got {arr.shape}"
                )
            by_index[idx] = arr
        ops, parents, aux, values = self.ops, self.parents, self.aux, self.values
        for i, op in enumerate(ops):
            if op == "leaf":
                new = by_index.get(i)
                if new is not None:
                    values[i] = new
            elif op != "const":
                values[i] = _FWD[op](values, parents[i], aux[i])


# ---------------------------------------------------------------------
# recording helpers (functions over Vars)


def vexp(x):
    return x.tape._emit("exp", (x.index,), None)


def vlog(x):
    return x.tape._emit("log", (x.index,), None)


def vsqrt(x):
    return x.tape._emit("sqrt", (x.index,), None)


def vrelu(x):
    return x.tape._emit("relu", (x.index,), None)


def vstep(x):
    return x.tape._emit("step", (x.index,), None)


def vtanh(x):
    return x.tape._emit("tanh", (x.index,), None)


def vsum(x, axis=None):
    if axis is not None and not isinstance(axis, tuple):
        axis = (axis,)
    return x.tape._emit("sum", (x.index,), axis)


def matmul(a, b):
    return a.tape._emit("matmul", (a.index, b.index), None)


def transpose2(a):
    return a.tape._emit("transpose2", (a.index,), None)


def reshape(x, shape):
    return x.tape._emit("reshape", (x.index,), tuple(shape))


def broadcast_to(x, shape):
    return x.tape._emit("broadcast", (x.index,), tuple(shape))


def gather(x, indices, axis=0):
    indices = np.asarray(indices)
    return x.tape._emit("gather", (x.index,), (indices, axis))


def scatter_add(x, indices, axis, size):
    indices = np.asarray(indices)
    return x.tape._emit("scatter_add", (x.index,), (indices, axis, size))


def index33(x, i, j):
    return x.tape._emit("index33", (x.index,), (i, j))


def embed33(x, i, j):
    return x.tape._emit("embed33", (x.index,), (i, j))


def _parse_einsum(spec, n_operands):
    if "..." in spec or "->" not in spec:
        raise InvalidArgumentError(f"einsum spec must be explicit: {spec!r}")
    lhs, out = spec.split("->")
    ins = lhs.split(",")
    if len(ins) != n_operands:
        raise InvalidArgumentError("einsum spec does not match operand count")
    for k, s in enumerate(ins):
        if len(set(s)) != len(s):
            raise InvalidArgumentError(
                f"repeated index within operand {k} of {spec!r} is unsupported"
            )
        visible = set(out).union(*(set(ins[j]) for j in range(len(ins)) if j != k))
        if not set(s) <= visible:
            raise InvalidArgumentError(
                f"operand {k} of {spec!r} sums an index seen nowhere else"
            )
    return ins, out


def einsum(spec, *operands):
    tape = operands[0].tape
    ins, out = _parse_einsum(spec, len(operands))
    return tape._emit("einsum", tuple(v.index for v in operands), (spec, ins, out))


def dot(a, b):
    return einsum("i,i->", a, b)


def outer(a, b):
    return einsum("i,j->ij", a, b)


def matvec(a, x):
    return einsum("ij,j->i", a, x)


def _batch_letters(ndim):
    # letters reserved for batch axes; i/j/k/l kept for tensor slots
    pool = "abcdefgh"
    if ndim - 2 > len(pool):
        raise InvalidArgumentError("too many batch dimensions")
    return pool[: ndim - 2]


def trace3(f):
    """Trace of the trailing 3x3 slot of an array."""
    return index33(f, 0, 0) + index33(f, 1, 1) + index33(f, 2, 2)


def det3(f):
    """Determinant of the trailing 3x3 slot, via cofactor expansion."""
    e = [[index33(f, i, j) for j in range(3)] for i in range(3)]
    c0 = e[1][1] * e[2][2] - e[1][2] * e[2][1]
    c1 = e[1][0] * e[2][2] - e[1][2] * e[2][0]
    c2 = e[1][0] * e[2][1] - e[1][1] * e[2][0]
    return e[0][0] * c0 - e[0][1] * c1 + e[0][2] * c2


def sym_tt(f):
    """C = F^T F on the trailing 3x3 slot."""
    b = _batch_letters(f.value.ndim)
    return einsum(f"{b}ki,{b}kj->{b}ij", f, f)


def tt_square_trace(c):
    """tr(C @ C) on the trailing 3x3 slot."""
    b = _batch_letters(c.value.ndim)
    return einsum(f"{b}ij,{b}ji->{b}", c, c)


def record(fn, *inputs):
    """Record `fn` applied to fresh leaves holding `inputs`.

    Returns (tape, output Var, input Vars).  Forward values equal direct
    evaluation of the same numpy expressions.
    """
    tape = Tape()
    leaves = tuple(tape.leaf(np.asarray(x, dtype=np.float64)) for x in inputs)
    out = fn(*leaves)
    return tape, out, leaves


# ---------------------------------------------------------------------
# backward pass


def _unbroadcast(g, target_shape):
    """Reduce an adjoint back to the shape of a broadcast operand."""
    if g.shape == target_shape:
        return g
    extra = len(g.shape) - len(target_shape)
    axes = tuple(range(extra)) + tuple(
        k + extra
        for k, n in enumerate(target_shape)
        if n == 1 and g.shape[k + extra] != 1
    )
    if axes:
        g = vsum(g, axes)
    if g.shape != target_shape:
        g = reshape(g, target_shape)
    return g


def _vjp(tape, i, g):
    """Adjoint contributions of node i to its parents, as tape ops."""
    op = tape.ops[i]
    par = tape.parents[i]
    aux = tape.aux[i]
    vals = tape.values
    out = Var(tape, i)

    def shp(k):
        return vals[par[k]].shape

    def pv(k):
        return Var(tape, par[k])

    if op == "add":
        return (_unbroadcast(g, shp(0)), _unbroadcast(g, shp(1)))
    if op == "sub":
        return (_unbroadcast(g, shp(0)), _unbroadcast(-g, shp(1)))
    if op == "mul":
        return (
            _unbroadcast(g * pv(1), shp(0)),
            _unbroadcast(g * pv(0), shp(1)),
        )
    if op == "div":
        return (
            _unbroadcast(g / pv(1), shp(0)),
            _unbroadcast(-(g * out) / pv(1), shp(1)),
        )
    if op == "neg":
        return (-g,)
    if op == "scale":
        return (g * aux,)
    if op == "offset":
        return (g,)
    if op == "pow":
        return (g * aux * pv(0) ** (aux - 1.0),)
    if op == "exp":
        return (g * out,)
    if op == "log":
        return (g / pv(0),)
    if op == "sqrt":
        return (g / (out * 2.0),)
    if op == "relu":
        return (g * vstep(pv(0)),)
    if op == "step":
        return (None,)
    if op == "tanh":
        return (g * (1.0 - out * out),)
    if op == "matmul":
        return (matmul(g, transpose2(pv(1))), matmul(transpose2(pv(0)), g))
    if op == "transpose2":
        return (transpose2(g),)
    if op == "einsum":
        spec, ins, outspec = aux
        contribs = []
        for k in range(len(par)):
            others = [j for j in range(len(par)) if j != k]
            sub = ",".join([outspec] + [ins[j] for j in others]) + "->" + ins[k]
            contribs.append(einsum(sub, g, *[pv(j) for j in others]))
        return tuple(contribs)
    if op == "sum":
        axes = aux
        src_shape = shp(0)
        if axes is None:
            return (broadcast_to(reshape(g, (1,) * len(src_shape)), src_shape),)
        keep = list(src_shape)
        for ax in axes:
            keep[ax] = 1
        return (broadcast_to(reshape(g, keep), src_shape),)
    if op == "reshape":
        return (reshape(g, shp(0)),)
    if op == "broadcast":
        return (_unbroadcast(g, shp(0)),)
    if op == "gather":
        idx, axis = aux
        return (scatter_add(g, idx, axis, shp(0)[axis]),)
    if op == "scatter_add":
        idx, axis, _size = aux
        return (gather(g, idx, axis),)
    if op == "index33":
        return (embed33(g, aux[0], aux[1]),)
    if op == "embed33":
        return (index33(g, aux[0], aux[1]),)
    raise InvalidArgumentError(f"no VJP rule for op {op!r}")


@dataclass
class GradBundle:
    """Gradients grouped by what they differentiate with respect to."""

    d_weights: list = field(default_factory=list)
    d_biases: list = field(default_factory=list)
    d_nodal_u: np.ndarray | None = None
    d_material: dict = field(default_factory=dict)


def _descendants(tape, seeds):
    marked = np.zeros(len(tape.ops), dtype=bool)
    for s in seeds:
        marked[s] = True
    start = min(seeds)
    parents = tape.parents
    for i in range(start + 1, len(tape.ops)):
        for p in parents[i]:
            if marked[p]:
                marked[i] = True
                break
    return marked


def backward(tape, root, wrt=None, create_graph=False):
    """Reverse sweep from a scalar root.

    Returns one gradient per entry of `wrt` (all leaves when omitted),
    as Vars when `create_graph` is true, else as arrays.  Inputs the
    root does not depend on get zero gradients.  Adjoints accumulate in
    a fixed order, so results are bit-identical across runs.
    """
    if root.value.size != 1:
        raise InvalidArgumentError("backward root must be scalar")
    if wrt is None:
        wrt = [Var(tape, i) for i, op in enumerate(tape.ops) if op == "leaf"]
    wrt_idx = [w.index for w in wrt]
    if not wrt_idx:
        return []

    marked = _descendants(tape, wrt_idx)
    adjoint = {}
    if marked[root.index]:
        adjoint[root.index] = tape.const(np.ones(root.value.shape))
        for i in range(root.index, min(wrt_idx) - 1, -1):
            g = adjoint.get(i)
            if g is None or not marked[i]:
                continue
            if tape.ops[i] in ("leaf", "const"):
                continue
            contribs = _vjp(tape, i, g)
            for p, c in zip(tape.parents[i], contribs):
                if c is None or not marked[p]:
                    continue
                prev = adjoint.get(p)
                adjoint[p] = c if prev is None else prev + c
    result = []
    tape.grads = {}
    for w in wrt:
        g = adjoint.get(w.index)
        if g is None:
            g = tape.const(np.zeros(tape.values[w.index].shape))
        tape.grads[w.index] = g.value
        result.append(g if create_graph else g.value)
    return result


def grad_of_grad_norm(build, create_graph=False):
    """Differentiate the squared free-force norm through an inner gradient.

    `build(tape)` must return (scalar energy Var, displacement Var,
    free-dof mask array, list of parameter Vars).  Returns the norm
    value and the gradients with respect to the parameters.
    """
    tape = Tape()
    energy, u, mask, params = build(tape)
    (force,) = backward(tape, energy, wrt=[u], create_graph=True)
    m = tape.const(np.asarray(mask, dtype=np.float64))
    norm_sq = vsum(force * force * m)
    grads = backward(tape, norm_sq, wrt=params, create_graph=create_graph)
    return norm_sq.value, grads
