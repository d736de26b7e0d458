"""Dense float64 tensors with taped reverse-mode automatic differentiation.

Every gradient is assembled from the same differentiable ops, so a gradient
returned by ``input_gradient`` is itself a graph node and a further backward
pass through it yields second-order derivatives (as required by critic
gradient penalties).  Piecewise-linear activation masks are treated as
constants during that second pass, which is exact almost everywhere.
"""

from __future__ import annotations

import hashlib

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class GraphError(ValueError):
    """Tensors from different graphs were mixed, or a graph contract broke."""


class NumericalError(RuntimeError):
    """A forward value became NaN/Inf, or an iteration diverged."""


_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf assertions (debug mode; off by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Graph:
    """Insertion-ordered tape of tensors; insertion order is topological."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, data, requires_grad: bool = False) -> "Tensor":
        return Tensor(self, np.array(data, dtype=np.float64), requires_grad, "leaf", (), None)

    def constant(self, data) -> "Tensor":
        return self.leaf(data, requires_grad=False)


class Tensor:
    """One node of a computation graph: a float64 array plus its provenance."""

    __slots__ = ("graph", "data", "requires_grad", "node_id", "op", "_parents", "_vjp")

    def __init__(self, graph, data, requires_grad, op, parents, vjp):
        if data.dtype != np.float64:
            data = data.astype(np.float64)
        if _FINITE_CHECKS and not np.all(np.isfinite(data)):
            raise NumericalError(f"non-finite values produced by op '{op}'")
        self.graph = graph
        self.data = data
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._vjp = vjp
        self.node_id = len(graph._nodes)
        graph._nodes.append(self)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self, requires_grad: bool = False) -> "Tensor":
        """Re-enter this tensor's value as a fresh leaf (cuts the graph)."""
        return self.graph.leaf(self.data.copy(), requires_grad=requires_grad)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, grad={self.requires_grad})"

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return self.graph.constant(np.asarray(other, dtype=np.float64))

    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        return mul(self._lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _same_graph(*tensors: Tensor) -> Graph:
    g = tensors[0].graph
    for t in tensors[1:]:
        if t.graph is not g:
            raise GraphError("tensors belong to different graphs")
    return g


def _op(graph, name, data, parents) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    return Tensor(graph, np.asarray(data, dtype=np.float64), rg, name, tuple(parents), None)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from e
    out = _op(g, "add", data, (a, b))
    out._vjp = lambda up: [(a, _sum_to(up, a.shape)), (b, _sum_to(up, b.shape))]
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def neg(a: Tensor) -> Tensor:
    out = _op(a.graph, "neg", -a.data, (a,))
    out._vjp = lambda up: [(a, neg(up))]
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e
    out = _op(g, "mul", data, (a, b))
    out._vjp = lambda up: [(a, _sum_to(mul(up, b), a.shape)), (b, _sum_to(mul(up, a), b.shape))]
    return out


def scale(a: Tensor, c: float) -> Tensor:
    return mul(a, a.graph.constant(float(c)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = _op(g, "matmul", a.data @ b.data, (a, b))
    out._vjp = lambda up: [(a, matmul(up, transpose(b))), (b, matmul(transpose(a), up))]
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    out = _op(a.graph, "transpose", a.data.T.copy(), (a,))
    out._vjp = lambda up: [(a, transpose(up))]
    return out


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    out = _op(a.graph, "reshape", a.data.reshape(shape), (a,))
    out._vjp = lambda up: [(a, reshape(up, orig))]
    return out


def sum_axis(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _op(a.graph, "sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,))

    def vjp(up):
        t = up
        if axis is not None and not keepdims:
            kshape = list(a.shape)
            kshape[axis] = 1
            t = reshape(t, tuple(kshape))
        return [(a, broadcast_to(t, a.shape))]

    out._vjp = vjp
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError as e:
        raise ShapeError(f"broadcast {a.shape} -> {shape}") from e
    out = _op(a.graph, "broadcast", data, (a,))
    out._vjp = lambda up: [(a, _sum_to(up, a.shape))]
    return out


def _sum_to(t: Tensor, shape) -> Tensor:
    """Reduce ``t`` back to ``shape`` by summing axes that were broadcast."""
    if t.shape == tuple(shape):
        return t
    while t.data.ndim > len(shape):
        t = sum_axis(t, axis=0)
    for i, (have, want) in enumerate(zip(t.shape, shape)):
        if have != want:
            t = sum_axis(t, axis=i, keepdims=True)
    if t.shape != tuple(shape):
        raise ShapeError(f"cannot reduce {t.shape} to {shape}")
    return t


def relu(a: Tensor) -> Tensor:
    # derivative taken as 0 at exactly 0
    mask = (a.data > 0).astype(np.float64)
    out = _op(a.graph, "relu", np.maximum(a.data, 0.0), (a,))
    out._vjp = lambda up: [(a, mul(up, up.graph.constant(mask)))]
    return out


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0,1), got {slope}")
    # derivative taken as `slope` at exactly 0
    mask = np.where(a.data > 0, 1.0, slope)
    out = _op(a.graph, "leaky_relu", np.where(a.data > 0, a.data, slope * a.data), (a,))
    out._vjp = lambda up: [(a, mul(up, up.graph.constant(mask)))]
    return out


def concat(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero parts")
    g = _same_graph(*parts)
    b = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != b:
            raise ShapeError(f"concat: batch extents differ ({[p.shape for p in parts]})")
    out = _op(g, "concat", np.concatenate([p.data for p in parts], axis=1), parts)

    def vjp(up):
        grads, lo = [], 0
        for p in parts:
            hi = lo + p.shape[1]
            grads.append((p, slice_cols(up, lo, hi)))
            lo = hi
        return grads

    out._vjp = vjp
    return out


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    total = a.shape[1]
    out = _op(a.graph, "slice", a.data[:, lo:hi].copy(), (a,))
    out._vjp = lambda up: [(a, pad_cols(up, lo, total))]
    return out


def pad_cols(a: Tensor, lo: int, total: int) -> Tensor:
    b, w = a.shape
    data = np.zeros((b, total))
    data[:, lo:lo + w] = a.data
    out = _op(a.graph, "pad", data, (a,))
    out._vjp = lambda up: [(a, slice_cols(up, lo, lo + w))]
    return out


def reduce_mean(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise ShapeError("reduce_mean of an empty tensor")
    return scale(sum_axis(a), 1.0 / a.data.size)


def row_l2_norm(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"row_l2_norm expects a matrix, got {a.shape}")
    out = _op(a.graph, "row_l2_norm", np.sqrt(np.sum(a.data * a.data, axis=1)), (a,))
    # subgradient 0 at the zero row, via the guarded reciprocal of the norm
    out._vjp = lambda up: [(a, mul(a, reshape(mul(up, safe_recip(out)), (a.shape[0], 1))))]
    return out


def safe_recip(a: Tensor) -> Tensor:
    """1/x where x > 0, else 0.  Derivative likewise guarded."""
    with np.errstate(divide="ignore"):
        data = np.where(a.data > 0, 1.0 / np.where(a.data > 0, a.data, 1.0), 0.0)
    deriv = np.where(a.data > 0, -data * data, 0.0)
    out = _op(a.graph, "safe_recip", data, (a,))
    out._vjp = lambda up: [(a, mul(up, up.graph.constant(deriv)))]
    return out


def affine(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: {x.shape} @ {w.shape}")
    if bias.shape != (w.shape[1],):
        raise ShapeError(f"affine bias: {bias.shape} vs ({w.shape[1]},)")
    return add(matmul(x, w), bias)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class; max-stabilized.

    The softmax Jacobian is saved as a constant, so this op supports one
    order of differentiation only (it never sits on a penalty path).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape}, labels {labels.shape}")
    b, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0,{c})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    lse = (m + np.log(ez.sum(axis=1, keepdims=True))).ravel()
    loss = float(np.mean(lse - z[np.arange(b), labels]))
    softmax = ez / ez.sum(axis=1, keepdims=True)
    jac = softmax.copy()
    jac[np.arange(b), labels] -= 1.0
    jac /= b
    out = _op(logits.graph, "softmax_xent", np.asarray(loss), (logits,))
    out._vjp = lambda up: [(logits, mul(up, up.graph.constant(jac)))]
    return out


# ---------------------------------------------------------------------------
# reverse-mode passes


def _backward_pass(root: Tensor, seed: Tensor) -> dict:
    """Walk the tape from ``root`` down, returning node-id -> cotangent Tensor.

    Cotangents are built from graph ops, so they remain differentiable.
    Nodes appended during the walk have ids above ``root`` and are never
    themselves expanded (we only need first derivatives of ``root``).
    """
    pending = {root.node_id: seed}
    done = {}
    nodes = root.graph._nodes
    for nid in range(root.node_id, -1, -1):
        up = pending.pop(nid, None)
        if up is None:
            continue
        done[nid] = up
        node = nodes[nid]
        if node._vjp is None or not node.requires_grad:
            continue
        for parent, cot in node._vjp(up):
            if not parent.requires_grad:
                continue
            prev = pending.get(parent.node_id)
            pending[parent.node_id] = cot if prev is None else add(prev, cot)
    return done


def grad(output: Tensor, inputs, seed: Tensor | None = None) -> list[Tensor]:
    """Gradients of ``output`` w.r.t. ``inputs`` as graph tensors.

    ``seed`` defaults to ones of ``output``'s shape.  Inputs unreachable
    from ``output`` get zero tensors.
    """
    inputs = list(inputs)
    if seed is None:
        seed = output.graph.constant(np.ones(output.shape))
    elif seed.shape != output.shape:
        raise ShapeError(f"seed shape {seed.shape} != output shape {output.shape}")
    cots = _backward_pass(output, seed)
    return [cots.get(t.node_id, output.graph.constant(np.zeros(t.shape))) for t in inputs]


def backward(loss: Tensor, wrt) -> dict:
    """Plain gradients of a scalar loss, as a map Tensor -> ndarray."""
    if loss.data.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    wrt = list(wrt)
    gs = grad(loss, wrt)
    return {t: g.data.copy() for t, g in zip(wrt, gs)}


def input_gradient(output: Tensor, inp: Tensor) -> Tensor:
    """Per-sample gradient of a scalar-per-sample output w.r.t. ``inp``.

    Valid when each sample's output depends only on its own input row
    (row-wise networks).  The result is a graph node: backward through it
    applies the double-backprop rules.
    """
    if not inp.requires_grad:
        raise GraphError("input_gradient target must have requires_grad=True")
    return grad(output, [inp])[0]


# ---------------------------------------------------------------------------
# deterministic RNG streams (counter-based Philox)


class RngStream:
    """Named, counter-based random stream.

    Every draw event is a pure function of (seed, name, counter): the same
    triple yields the same values on every platform.  The counter advances
    by one per draw, so streams can be checkpointed and resumed exactly.
    """

    def __init__(self, seed: int, name: str, counter: int = 0):
        self.seed = int(seed)
        self.name = name
        self.counter = int(counter)
        digest = hashlib.blake2b(
            name.encode("utf-8"),
            key=(self.seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"),
            digest_size=16,
        ).digest()
        self._key = int.from_bytes(digest, "little")

    def _next(self) -> np.random.Generator:
        gen = np.random.Generator(np.random.Philox(key=self._key, counter=self.counter << 128))
        self.counter += 1
        return gen

    def normal(self, shape) -> np.ndarray:
        return self._next().standard_normal(shape)

    def uniform(self, shape) -> np.ndarray:
        return self._next().random(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._next().permutation(n)


def sample_gaussian(graph: Graph, rng: RngStream, shape) -> Tensor:
    """I.i.d. standard normal constant tensor; deterministic per stream state."""
    return graph.constant(rng.normal(shape))


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params/grads/state length mismatch")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"adam_step: param {p.shape} vs grad {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state
