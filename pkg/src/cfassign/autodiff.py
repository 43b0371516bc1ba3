"""Reverse-mode automatic differentiation over 2-D float64 arrays.

The engine is deliberately small: values are either 2-D arrays of shape
(features, columns) or 0-d scalars, and every operation the model needs is a
named primitive with a hand-written vector-Jacobian product.  Columns carry the
batch structure, so most primitives come in a plain elementwise flavor plus a
grouped flavor that reduces over fixed-width column groups or strided column
blocks.

Gradients accumulate into ``Node.grad`` on leaf parameters when ``backward`` is
called on a scalar root.  Graph recording can be suspended with ``no_grad()``
so evaluation passes keep no references to intermediates.
"""

from __future__ import annotations

import contextlib
import dataclasses
import json

import numpy as np

from .errors import NumericsError, SchemaError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Suspend graph recording inside the with-block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """A value in the computation graph.

    parents is a tuple of (parent_node, vjp) pairs where vjp maps the gradient
    at this node to the contribution for that parent.
    """

    __slots__ = ("value", "parents", "requires_grad", "grad", "name")

    def __init__(self, value, parents=(), requires_grad=False, name=""):
        self.value = value
        self.parents = parents
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape


def _as_value(x):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (0, 2):
        raise ValueError(f"node values must be 0-d or 2-d, got shape {arr.shape}")
    return arr


def constant(x, name=""):
    return Node(_as_value(x), name=name)


def parameter(x, name=""):
    return Node(_as_value(x).copy(), requires_grad=True, name=name)


def _make(value, parents, name=""):
    if not _grad_enabled:
        return Node(value, name=name)
    needs = any(p.requires_grad for p, _ in parents)
    if not needs:
        return Node(value, name=name)
    return Node(value, tuple(parents), requires_grad=True, name=name)


def _unbroadcast(grad, shape):
    # reduce a full-shape gradient back to a broadcast operand's shape
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    axes = tuple(i for i in range(grad.ndim) if shape[i] == 1 and grad.shape[i] != 1)
    out = grad.sum(axis=axes, keepdims=True)
    return out.reshape(shape)


def add(a, b):
    val = a.value + b.value
    return _make(val, [
        (a, lambda g, sa=a.value.shape: _unbroadcast(g, sa)),
        (b, lambda g, sb=b.value.shape: _unbroadcast(g, sb)),
    ])


def sub(a, b):
    val = a.value - b.value
    return _make(val, [
        (a, lambda g, sa=a.value.shape: _unbroadcast(g, sa)),
        (b, lambda g, sb=b.value.shape: -_unbroadcast(g, sb)),
    ])


def mul(a, b):
    val = a.value * b.value
    return _make(val, [
        (a, lambda g, bv=b.value, sa=a.value.shape: _unbroadcast(g * bv, sa)),
        (b, lambda g, av=a.value, sb=b.value.shape: _unbroadcast(g * av, sb)),
    ])


def neg(a):
    return _make(-a.value, [(a, lambda g: -g)])


def scale(a, c):
    c = float(c)
    return _make(a.value * c, [(a, lambda g: g * c)])


def add_scalar(a, c):
    c = float(c)
    return _make(a.value + c, [(a, lambda g: g)])


def matmul(a, b):
    val = a.value @ b.value
    return _make(val, [
        (a, lambda g, bv=b.value: g @ bv.T),
        (b, lambda g, av=a.value: av.T @ g),
    ])


def affine(w, x, b):
    """w @ x + b with b of shape (rows, 1), fused into one node."""
    val = w.value @ x.value + b.value
    return _make(val, [
        (w, lambda g, xv=x.value: g @ xv.T),
        (x, lambda g, wv=w.value: wv.T @ g),
        (b, lambda g: g.sum(axis=1, keepdims=True)),
    ])


_relu_watch = None


@contextlib.contextmanager
def watch_relu_inputs():
    """Collect the smallest |input| seen by any relu in the with-block.

    Finite differencing a piecewise-linear function is only valid away from
    the kinks; tests use this to verify the margin before comparing.
    """
    global _relu_watch
    prev = _relu_watch
    _relu_watch = [np.inf]
    try:
        yield _relu_watch
    finally:
        _relu_watch = prev


def relu(a):
    if _relu_watch is not None and a.value.size:
        _relu_watch[0] = min(_relu_watch[0], float(np.abs(a.value).min()))
    mask = a.value > 0
    return _make(np.maximum(a.value, 0.0), [(a, lambda g, m=mask: g * m)])


def square(a):
    return _make(a.value * a.value, [(a, lambda g, v=a.value: g * (2.0 * v))])


def log1p(a):
    val = np.log1p(a.value)
    return _make(val, [(a, lambda g, v=a.value: g / (1.0 + v))])


def xlogx(a, eps=1e-12):
    """Elementwise x * log(x + eps); smooth at zero for entropy terms."""
    v = a.value
    val = v * np.log(v + eps)
    return _make(val, [
        (a, lambda g, v=v: g * (np.log(v + eps) + v / (v + eps))),
    ])


def concat_rows(a, b):
    val = np.concatenate([a.value, b.value], axis=0)
    ra = a.value.shape[0]
    return _make(val, [
        (a, lambda g, ra=ra: g[:ra]),
        (b, lambda g, ra=ra: g[ra:]),
    ])


def softmax_groups(a, k):
    """Softmax over each consecutive group of k columns, per row."""
    r, c = a.value.shape
    if c % k:
        raise ValueError(f"column count {c} not divisible by group size {k}")
    x = a.value.reshape(r, c // k, k)
    x = x - x.max(axis=2, keepdims=True)
    e = np.exp(x)
    y3 = e / e.sum(axis=2, keepdims=True)
    y = y3.reshape(r, c)

    def vjp(g, y3=y3, r=r, c=c, k=k):
        g3 = g.reshape(r, c // k, k)
        dot = (g3 * y3).sum(axis=2, keepdims=True)
        return (y3 * (g3 - dot)).reshape(r, c)

    return _make(y, [(a, vjp)])


def mean_groups(a, k):
    """Mean over each consecutive group of k columns, broadcast back in place."""
    r, c = a.value.shape
    if c % k:
        raise ValueError(f"column count {c} not divisible by group size {k}")
    m = a.value.reshape(r, c // k, k).mean(axis=2, keepdims=True)
    val = np.broadcast_to(m, (r, c // k, k)).reshape(r, c).copy()

    def vjp(g, r=r, c=c, k=k):
        gm = g.reshape(r, c // k, k).mean(axis=2, keepdims=True)
        return np.broadcast_to(gm, (r, c // k, k)).reshape(r, c).copy()

    return _make(val, [(a, vjp)])


def sum_groups(a, k):
    """Sum over each consecutive group of k columns: (r, c) -> (r, c // k)."""
    r, c = a.value.shape
    if c % k:
        raise ValueError(f"column count {c} not divisible by group size {k}")
    val = a.value.reshape(r, c // k, k).sum(axis=2)
    return _make(val, [(a, lambda g, k=k: np.repeat(g, k, axis=1))])


def sum_outer_blocks(a, n_blocks):
    """Sum n_blocks consecutive column superblocks elementwise.

    (r, n_blocks * w) -> (r, w); block i covers columns [i*w, (i+1)*w).
    """
    r, c = a.value.shape
    if c % n_blocks:
        raise ValueError(f"column count {c} not divisible by block count {n_blocks}")
    w = c // n_blocks
    val = a.value.reshape(r, n_blocks, w).sum(axis=1)
    return _make(val, [(a, lambda g, n=n_blocks: np.tile(g, (1, n)))])


def take_col_blocks(a, idx, width):
    """Gather column blocks: block j of the output is block idx[j] of a."""
    r, c = a.value.shape
    if c % width:
        raise ValueError(f"column count {c} not divisible by block width {width}")
    nblk = c // width
    idx = np.asarray(idx, dtype=np.intp)
    val = a.value.reshape(r, nblk, width)[:, idx, :].reshape(r, idx.size * width)

    def vjp(g, idx=idx, r=r, nblk=nblk, width=width):
        g3 = g.reshape(r, idx.size, width)
        out = np.zeros((r, nblk, width))
        order = np.argsort(idx, kind="stable")
        si = idx[order]
        starts = np.flatnonzero(np.r_[True, si[1:] != si[:-1]])
        sums = np.add.reduceat(g3[:, order, :], starts, axis=1)
        out[:, si[starts], :] = sums
        return out.reshape(r, nblk * width)

    return _make(val, [(a, vjp)])


def segment_mean_col_blocks(a, seg_idx, n_segments, width):
    """Mean of column blocks grouped by segment; empty segments give zeros.

    a holds one block of `width` columns per element of seg_idx, which must be
    sorted nondecreasing.  Output has n_segments blocks.
    """
    r, c = a.value.shape
    seg_idx = np.asarray(seg_idx, dtype=np.intp)
    if c != seg_idx.size * width:
        raise ValueError("column count does not match segment index length")
    if seg_idx.size and np.any(np.diff(seg_idx) < 0):
        raise ValueError("segment indices must be sorted nondecreasing")
    counts = np.bincount(seg_idx, minlength=n_segments)
    x3 = a.value.reshape(r, seg_idx.size, width)
    out = np.zeros((r, n_segments, width))
    if seg_idx.size:
        starts = np.flatnonzero(np.r_[True, seg_idx[1:] != seg_idx[:-1]])
        sums = np.add.reduceat(x3, starts, axis=1)
        present = seg_idx[starts]
        out[:, present, :] = sums / counts[present][None, :, None]
    val = out.reshape(r, n_segments * width)

    def vjp(g, seg_idx=seg_idx, counts=counts, r=r, width=width, n=n_segments):
        g3 = g.reshape(r, n, width)
        picked = g3[:, seg_idx, :] / counts[seg_idx][None, :, None]
        return picked.reshape(r, seg_idx.size * width)

    return _make(val, [(a, vjp)])


def sum_all(a):
    val = np.asarray(a.value.sum())
    return _make(val, [(a, lambda g, s=a.value.shape: np.full(s, float(g)))])


def backward(root, seed=1.0):
    """Accumulate d(root)/d(leaf) into .grad of every reachable leaf.

    root must be a scalar node with requires_grad set.
    """
    if not root.requires_grad:
        raise ValueError("backward called on a node that does not require grad")
    if root.value.shape != ():
        raise ValueError("backward root must be a scalar")

    # collect the differentiable subgraph and count consumers per node
    nodes = []
    seen = set()
    stack = [root]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        nodes.append(n)
        for p, _ in n.parents:
            if p.requires_grad:
                stack.append(p)
    consumers = {id(n): 0 for n in nodes}
    for n in nodes:
        for p, _ in n.parents:
            if p.requires_grad:
                consumers[id(p)] += 1

    accum = {id(root): np.asarray(float(seed))}
    ready = [root]
    while ready:
        n = ready.pop()
        g = accum.pop(id(n))
        if not n.parents:
            # leaf parameter
            if n.grad is None:
                n.grad = np.zeros_like(n.value)
            n.grad = n.grad + g
            continue
        for p, vjp in n.parents:
            if not p.requires_grad:
                continue
            contrib = vjp(g)
            pid = id(p)
            if pid in accum:
                accum[pid] = accum[pid] + contrib
            else:
                accum[pid] = np.asarray(contrib, dtype=np.float64)
            consumers[pid] -= 1
            if consumers[pid] == 0:
                ready.append(p)


class ParamStore:
    """Named leaf parameters with deterministic iteration order."""

    def __init__(self):
        self._params = {}

    def add(self, name, array):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._params[name] = parameter(array, name=name)
        return self._params[name]

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return sorted(self._params)

    def zero_grads(self):
        for p in self._params.values():
            p.grad = None

    def n_scalars(self):
        return sum(int(p.value.size) for p in self._params.values())

    def to_arrays(self):
        return {name: self._params[name].value.copy() for name in self.names()}

    def load_arrays(self, arrays):
        for name in self.names():
            if name not in arrays:
                raise SchemaError(f"missing parameter {name!r} in checkpoint")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != self._params[name].value.shape:
                raise SchemaError(
                    f"shape mismatch for {name!r}: "
                    f"{arr.shape} vs {self._params[name].value.shape}")
            self._params[name].value = arr.copy()


def finite_difference_gradient(fn, store, h=1e-5):
    """Central finite differences of scalar fn() w.r.t. every store parameter.

    fn must read the current parameter values on each call and return a float.
    """
    grads = {}
    for name in store.names():
        p = store[name]
        base = p.value
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn()
            flat[i] = orig - h
            fm = fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads[name] = g
    return grads


@dataclasses.dataclass
class AdamState:
    """Adam with bias correction; maximize=True performs gradient ascent."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    maximize: bool = False
    t: int = 0
    m: dict = dataclasses.field(default_factory=dict)
    v: dict = dataclasses.field(default_factory=dict)


def adam_step(state, store):
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name in store.names():
        p = store[name]
        g = p.grad
        if g is None:
            g = np.zeros_like(p.value)
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
        if state.maximize:
            g = -g
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        mhat = state.m[name] / bc1
        vhat = state.v[name] / bc2
        p.value = p.value - state.lr * mhat / (np.sqrt(vhat) + state.eps)


CHECKPOINT_MAGIC = "cfassign-checkpoint v1"


def save_checkpoint(path, tensors, meta):
    """Write named 2-d float64 tensors plus json-valued metadata as text.

    Floats are written with repr so a load round-trips bit exactly.
    """
    lines = [CHECKPOINT_MAGIC]
    for key in sorted(meta):
        lines.append(f"meta {key} {json.dumps(meta[key])}")
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"tensor {name!r} must be 2-d, got shape {arr.shape}")
        lines.append(f"tensor {name} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join(repr(float(x)) for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint; returns (tensors, meta)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise SchemaError(f"{path}: not a checkpoint file")
    tensors = {}
    meta = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        if line.startswith("meta "):
            _, key, payload = line.split(" ", 2)
            meta[key] = json.loads(payload)
            i += 1
        elif line.startswith("tensor "):
            parts = line.split()
            if len(parts) != 4:
                raise SchemaError(f"{path}: bad tensor header {line!r}")
            name, r, c = parts[1], int(parts[2]), int(parts[3])
            if i + r >= len(lines):
                raise SchemaError(f"{path}: truncated tensor {name!r}")
            rows = []
            for j in range(r):
                vals = lines[i + 1 + j].split()
                if len(vals) != c:
                    raise SchemaError(f"{path}: bad row length in tensor {name!r}")
                rows.append([float(v) for v in vals])
            tensors[name] = np.asarray(rows, dtype=np.float64).reshape(r, c)
            i += 1 + r
        else:
            raise SchemaError(f"{path}: unrecognized line {line!r}")
    return tensors, meta
