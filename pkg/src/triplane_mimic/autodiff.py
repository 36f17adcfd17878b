"""Reverse-mode automatic differentiation over dense numpy-backed tensors.

Every differentiable quantity in the toolkit is a :class:`Tensor`.  The tape
is implicit: each non-leaf tensor keeps references to its parents and a
closure that maps the upstream gradient to per-parent gradients.  Backward
closures are themselves written in terms of tensor ops, so a backward pass
run with ``create_graph=True`` records a second graph and supports the one
nested derivative needed by the R1 penalty.

Shape rules are deliberately strict: binary elementwise ops require exact
shape match or a size-1 operand.  Anything else must go through an explicit
``broadcast_to`` / ``reshape`` / ``permute``.
"""

from __future__ import annotations

import threading

import numpy as np

DEFAULT_DTYPE = np.float64

_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "recording", True)


class no_grad:
    """Context manager disabling tape recording (thread-local)."""

    def __enter__(self):
        self._prev = _recording()
        _state.recording = False
        return self

    def __exit__(self, *exc):
        _state.recording = self._prev
        return False


class Tensor:
    """Dense n-d array with optional participation in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    # -- graph plumbing ------------------------------------------------------

    def _is_node(self):
        return self._backward_fn is not None or self.requires_grad

    def detach(self):
        """Same values, no tape participation (the stop-gradient barrier)."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward_fn = None
        return out

    def backward(self):
        """Accumulate gradients into ``.grad`` of every requires-grad leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {self.shape}")
        gmap = backward(self)
        for leaf, g in gmap.items():
            if leaf.grad is None:
                leaf.grad = g.data.copy()
            else:
                leaf.grad = leaf.grad + g.data

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    @property
    def T(self):
        return permute(self, tuple(reversed(range(self.data.ndim))))


def _wrap(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _coerce(a, b):
    """Wrap plain operands with the dtype of the Tensor operand."""
    if isinstance(a, Tensor):
        return a, _wrap(b, a.dtype)
    if isinstance(b, Tensor):
        return _wrap(a, b.dtype), b
    return _wrap(a), _wrap(b)


def _make(data, parents, backward_fn):
    """Build an op output; drops tape links when recording is off."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    if _recording() and any(p._is_node() for p in parents):
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out._parents = ()
        out._backward_fn = None
    return out


def _reduce_to_shape(g, shape):
    """Collapse a gradient onto a size-1 operand's shape (scalar broadcast)."""
    if g.shape == shape:
        return g
    return reshape(reduce_sum(g), shape)


def _check_binary_shapes(name, a, b):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ValueError(f"{name}: shapes {a.shape} and {b.shape} are not "
                     "exact-match/scalar compatible")


# -- elementwise binary ops ---------------------------------------------------

def add(a, b):
    a, b = _coerce(a, b)
    _check_binary_shapes("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_reduce_to_shape(g, a.shape), _reduce_to_shape(g, b.shape)))


def sub(a, b):
    a, b = _coerce(a, b)
    _check_binary_shapes("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_reduce_to_shape(g, a.shape),
                            _reduce_to_shape(neg(g), b.shape)))


def mul(a, b):
    a, b = _coerce(a, b)
    _check_binary_shapes("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_reduce_to_shape(mul(g, b), a.shape),
                            _reduce_to_shape(mul(g, a), b.shape)))


def div(a, b):
    a, b = _coerce(a, b)
    _check_binary_shapes("div", a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: divisor contains zeros (gradient undefined)")
    return _make(a.data / b.data, (a, b),
                 lambda g: (_reduce_to_shape(div(g, b), a.shape),
                            _reduce_to_shape(neg(div(mul(g, a), mul(b, b))), b.shape)))


# -- elementwise unary ops ----------------------------------------------------

def neg(a):
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: (neg(g),))


def exp(a):
    a = _wrap(a)
    out = _make(np.exp(a.data), (a,), None)
    out._backward_fn = (lambda g: (mul(g, out),)) if out._parents else None
    return out


def log(a):
    a = _wrap(a)
    return _make(np.log(a.data), (a,), lambda g: (div(g, a),))


def softplus(a):
    """log(1 + exp(u)), computed stably."""
    a = _wrap(a)
    d = a.data
    val = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))
    return _make(val, (a,), lambda g: (mul(g, sigmoid(a)),))


def sigmoid(a):
    a = _wrap(a)
    d = a.data
    e = np.exp(-np.abs(d))
    val = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _make(val, (a,), None)
    if out._parents:
        out._backward_fn = lambda g: (mul(g, mul(out, sub(1.0, out))),)
    return out


def relu(a):
    a = _wrap(a)
    mask = (a.data > 0).astype(a.dtype)
    return _make(a.data * mask, (a,), lambda g: (mul(g, Tensor(mask)),))


def leaky_relu(a, alpha=0.2):
    a = _wrap(a)
    one = a.data.dtype.type(1.0)
    slope = np.where(a.data > 0, one, a.data.dtype.type(alpha))
    return _make(a.data * slope, (a,), lambda g: (mul(g, Tensor(slope)),))


def sqrt(a):
    a = _wrap(a)
    out = _make(np.sqrt(a.data), (a,), None)
    if out._parents:
        out._backward_fn = lambda g: (div(g, mul(2.0, out)),)
    return out


def square(a):
    a = _wrap(a)
    return _make(a.data * a.data, (a,), lambda g: (mul(g, mul(2.0, a)),))


def absolute(a):
    a = _wrap(a)
    sign = np.sign(a.data).astype(a.dtype)
    return _make(np.abs(a.data), (a,), lambda g: (mul(g, Tensor(sign)),))


# -- matmul -------------------------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (matmul(g, b.T), matmul(a.T, g)))


# -- reductions ---------------------------------------------------------------

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axis = tuple(ax % ndim if -ndim <= ax < ndim else ax for ax in axis)
    for ax in axis:
        if not 0 <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for ndim {ndim}")
    return axis


def _unreduced_shape(shape, axes):
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def reduce_sum(a, axis=None, keepdims=False):
    a = _wrap(a)
    axes = _axis_tuple(axis, a.data.ndim)
    val = a.data.sum(axis=axes, keepdims=keepdims)
    kshape = _unreduced_shape(a.shape, axes)

    def bwd(g):
        return (broadcast_to(reshape(g, kshape), a.shape),)

    return _make(val, (a,), bwd)


def reduce_mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    axes = _axis_tuple(axis, a.data.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if a.data.ndim else 1
    s = reduce_sum(a, axes, keepdims)
    return div(s, float(count))


def reduce_max(a, axis=None, keepdims=False):
    """Max reduction; ties route the gradient to the lowest flat index."""
    a = _wrap(a)
    axes = _axis_tuple(axis, a.data.ndim)
    val = a.data.max(axis=axes, keepdims=keepdims)
    vk = a.data.max(axis=axes, keepdims=True)
    hit = (a.data == vk)
    # keep only the first hit along the reduced axes
    order = axes + tuple(i for i in range(a.data.ndim) if i not in axes)
    moved = np.transpose(hit, order)
    flat = moved.reshape(-1, *moved.shape[len(axes):]) if axes else moved
    first = np.zeros_like(flat)
    idx = flat.argmax(axis=0)
    np.put_along_axis(first, idx[None], True, axis=0)
    first &= flat
    mask = np.transpose(first.reshape(moved.shape), np.argsort(order)).astype(a.dtype)
    kshape = _unreduced_shape(a.shape, axes)

    def bwd(g):
        gb = broadcast_to(reshape(g, kshape), a.shape)
        return (mul(gb, Tensor(mask)),)

    return _make(val, (a,), bwd)


def cumsum(a, axis):
    a = _wrap(a)
    ax = _axis_tuple(axis, a.data.ndim)[0]

    def bwd(g):
        return (flip(cumsum(flip(g, ax), ax), ax),)

    return _make(np.cumsum(a.data, axis=ax), (a,), bwd)


# -- layout ops ---------------------------------------------------------------

def reshape(a, shape):
    a = _wrap(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, old),))


def permute(a, axes):
    a = _wrap(a)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (permute(g, inv),))


def flip(a, axis):
    a = _wrap(a)
    return _make(np.flip(a.data, axis=axis), (a,), lambda g: (flip(g, axis),))


def broadcast_to(a, shape):
    a = _wrap(a)
    if a.shape == tuple(shape):
        return a
    old = a.shape
    added = len(shape) - len(old)
    sum_axes = tuple(range(added)) + tuple(
        added + i for i, s in enumerate(old) if s == 1 and shape[added + i] != 1)

    def bwd(g):
        return (reshape(reduce_sum(g, sum_axes, keepdims=False), old),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), bwd)


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    ax = _axis_tuple(axis, tensors[0].data.ndim)[0]
    for t in tensors[1:]:
        sa, sb = tensors[0].shape, t.shape
        if len(sa) != len(sb) or any(x != y for i, (x, y) in enumerate(zip(sa, sb)) if i != ax):
            raise ValueError(f"concat: incompatible shapes {sa} and {sb} on axis {ax}")
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        outs = []
        for i in range(len(tensors)):
            key = [slice(None)] * g.data.ndim
            key[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(getitem(g, tuple(key)))
        return tuple(outs)

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bwd)


def stack(tensors, axis=0):
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in map(_wrap, tensors)]
    return concat(expanded, axis)


def getitem(a, key):
    a = _wrap(a)
    shape = a.shape

    def bwd(g):
        return (put_slice(g, key, shape),)

    return _make(a.data[key], (a,), bwd)


def put_slice(a, key, shape):
    """Zeros of ``shape`` with ``a`` written at ``key`` (adjoint of getitem)."""
    a = _wrap(a)
    val = np.zeros(shape, dtype=a.dtype)
    val[key] = a.data

    def bwd(g):
        return (getitem(g, key),)

    return _make(val, (a,), bwd)


# -- gather / scatter ---------------------------------------------------------

def gather_cols(a, idx):
    """Pick columns of a 2-d tensor: (C, M) gathered by idx (N,) -> (C, N)."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    m = a.shape[1]

    def bwd(g):
        return (scatter_cols(g, idx, m),)

    return _make(a.data[:, idx], (a,), bwd)


def scatter_cols(a, idx, m):
    """Adjoint of gather_cols: sum columns of (C, N) into (C, M) at idx."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    # per-row bincount is several times faster than np.add.at here
    val = np.stack([np.bincount(idx, weights=row, minlength=m)
                    for row in a.data]).astype(a.dtype)

    def bwd(g):
        return (gather_cols(g, idx),)

    return _make(val, (a,), bwd)


# -- backward engine ----------------------------------------------------------

def free_graph(root):
    """Break the parent/closure reference cycles hanging off ``root``.

    Interior nodes reference their parents and their parents reference the
    backward closures, so a finished graph is only reclaimed when the
    cyclic garbage collector happens to run; for training loops that lags
    allocation by hundreds of megabytes.  Call this once a root (and any
    graph it shares nodes with) is no longer needed.  Leaf tensors are
    left untouched.
    """
    order, seen, stack_ = [], set(), [root]
    while stack_:
        node = stack_.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        order.append(node)
        stack_.extend(node._parents)
    for node in order:
        if node._backward_fn is not None:
            node._backward_fn = None
            node._parents = ()


def _toposort(root):
    order, seen, stack_ = [], set(), [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen and (p._backward_fn is not None or p.requires_grad):
                stack_.append((p, False))
    return order


def grad_of(root, wrt, create_graph=False):
    """Gradients of a scalar ``root`` w.r.t. the tensors in ``wrt``.

    With ``create_graph=True`` the returned gradients are themselves tape
    nodes, so a further backward pass through them is possible.
    """
    if root.data.size != 1:
        raise ValueError(f"grad root must be scalar, got shape {root.shape}")
    order = _toposort(root)
    grads = {id(root): Tensor(np.ones_like(root.data))}
    wanted = {id(t) for t in wrt}
    captured = {}
    ctx = _NullCtx() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is not None and id(node) in wanted:
                captured[id(node)] = g
            if g is None or node._backward_fn is None:
                if g is not None and node.requires_grad:
                    grads[id(node)] = g
                continue
            parent_grads = node._backward_fn(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not (p._backward_fn is not None or p.requires_grad):
                    continue
                if id(p) in grads:
                    grads[id(p)] = add(grads[id(p)], pg)
                else:
                    grads[id(p)] = pg
    out = []
    for t in wrt:
        g = captured.get(id(t), grads.get(id(t)))
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        out.append(g)
    return out


class _NullCtx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def backward(root):
    """Gradient map {leaf Tensor: gradient Tensor} for a scalar root."""
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    leaves = [n for n in _toposort(root) if n.requires_grad and n._backward_fn is None]
    grads = grad_of(root, leaves)
    return dict(zip(leaves, grads))
