"""Dense-tensor numerics with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float32 for training, float64 for
verification, switched by the `precision` context). Every differentiable
primitive records a node holding its parents and a backward closure; calling
`backward` on a scalar loss walks the graph once in reverse topological order,
accumulates `.grad` on every requires_grad leaf and then clears the graph.

Convolution is explicit im2col + matmul so the one GEMM path is shared by the
compiled and fallback kernel backends.
"""
import contextlib

import numpy as np

from bevdrive import kernels


class ShapeError(ValueError):
    pass


_STATE = {"dtype": np.float32, "grad": True}


def default_dtype():
    return _STATE["dtype"]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype ('f32'/'f64' or numpy dtype)."""
    named = {"f32": np.float32, "f64": np.float64,
             "float32": np.float32, "float64": np.float64}
    prev = _STATE["dtype"]
    _STATE["dtype"] = named.get(dtype, None) or np.dtype(dtype).type
    try:
        yield
    finally:
        _STATE["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _STATE["grad"]
    _STATE["grad"] = False
    try:
        yield
    finally:
        _STATE["grad"] = prev


class _Node:
    __slots__ = ("parents", "bwd")

    def __init__(self, parents, bwd):
        self.parents = parents
        self.bwd = bwd


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_ctx")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_STATE["dtype"])
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._ctx = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self):
        backward(self)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*tensors):
    return _STATE["grad"] and any(t.requires_grad or t._ctx is not None for t in tensors)


def _make(out_data, parents, bwd):
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = False
    out.grad = None
    out._ctx = _Node(parents, bwd) if _tracked(*parents) else None
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g / b.data, a.shape),
                                         _unbroadcast(-g * out / b.data, b.shape)))


def power(a, p):
    a = _wrap(a)
    p = float(p)
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    out = np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a):
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,))


def clip(a, lo, hi):
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(out, (a,), lambda g: (g * mask,))


def minimum(a, b):
    a, b = _wrap(a), _wrap(b)
    out = np.minimum(a.data, b.data)
    pick_a = a.data <= b.data  # ties route to the first argument
    return _make(out, (a, b), lambda g: (_unbroadcast(g * pick_a, a.shape),
                                         _unbroadcast(g * ~pick_a, b.shape)))


def maximum(a, b):
    a, b = _wrap(a), _wrap(b)
    out = np.maximum(a.data, b.data)
    pick_a = a.data >= b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g * pick_a, a.shape),
                                         _unbroadcast(g * ~pick_a, b.shape)))


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), bwd)


def log_softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bwd)


# -- reductions / structure ----------------------------------------------

def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=False),)

    return _make(np.asarray(out), (a,), bwd)


def mean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])

    def bwd(g):
        g = np.asarray(g) / n
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=False),)

    return _make(np.asarray(out), (a,), bwd)


def reshape(a, shape):
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    out = np.ascontiguousarray(a.data.transpose(axes))
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bwd)


def slice_(a, key):
    out = np.ascontiguousarray(a.data[key])

    def bwd(g):
        da = np.zeros_like(a.data)
        da[key] = g
        return (da,)

    return _make(out, (a,), bwd)


def take(a, indices, axis=0):
    """Row gather along the leading axis; backward is a deterministic scatter-add."""
    if axis != 0:
        raise ShapeError(f"take: only axis 0 supported, got {axis}")
    idx = np.asarray(indices, dtype=np.int64)
    out = np.ascontiguousarray(a.data[idx])

    def bwd(g):
        da = np.zeros_like(a.data)
        flat = da.reshape(da.shape[0], -1)
        kernels.scatter_add_rows(flat, idx.ravel(), g.reshape(-1, flat.shape[1]))
        return (da,)

    return _make(out, (a,), bwd)


def scatter_add(src, indices, n_rows):
    """out[indices[j]] += src[j] for row vectors src (P, C) -> (n_rows, C).

    Accumulation runs in ascending target-index order, so the result is
    invariant to any permutation of the input points (bitwise).
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != src.shape[0]:
        raise ShapeError(f"scatter_add: index shape {idx.shape} does not match source rows {src.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ShapeError(f"scatter_add: index out of range for {n_rows} rows")
    out = np.zeros((n_rows,) + src.shape[1:], dtype=src.data.dtype)
    kernels.scatter_add_rows(out.reshape(n_rows, -1), idx,
                             np.ascontiguousarray(src.data.reshape(src.shape[0], -1)))

    def bwd(g):
        return (np.ascontiguousarray(g.reshape(n_rows, -1)[idx]).reshape(src.shape),)

    return _make(out, (src,), bwd)


# -- linear algebra -------------------------------------------------------

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return _make(out, (a, b), bwd)


def conv2d(x, w, stride=1, pad=0):
    """NCHW convolution as explicit im2col + one matmul.

    x: (N, Cin, H, W), w: (Cout, Cin, kh, kw). stride/pad may be int or pair.
    """
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (pad, pad) if isinstance(pad, int) else pad
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes x{x.shape} w{w.shape}")
    N, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    OH, OW = kernels.conv_out_hw(H, W, kh, kw, sh, sw, ph, pw)
    if OH <= 0 or OW <= 0:
        raise ShapeError(f"conv2d: empty output for x{x.shape} w{w.shape} stride={stride} pad={pad}")
    cols = kernels.im2col(x.data, kh, kw, sh, sw, ph, pw)  # (N, P, K)
    K = Cin * kh * kw
    w2 = w.data.reshape(Cout, K)
    out = (cols.reshape(N * OH * OW, K) @ w2.T).reshape(N, OH, OW, Cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bwd(g):
        gp = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(N * OH * OW, Cout)
        dw = (gp.T @ cols.reshape(N * OH * OW, K)).reshape(w.shape)
        dcols = (gp @ w2).reshape(N, OH * OW, K)
        dx = kernels.col2im(dcols, Cin, H, W, kh, kw, sh, sw, ph, pw)
        return (dx, dw)

    return _make(out, (x, w), bwd)


# -- primitive registry ----------------------------------------------------

PRIMITIVES = {
    "matmul": matmul,
    "conv2d": conv2d,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "pow": power,
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "clip": clip,
    "minimum": minimum,
    "maximum": maximum,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "sum": sum_,
    "mean": mean,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
    "slice": slice_,
    "take": take,
    "scatter_add": scatter_add,
}


def apply_primitive(op_id, inputs, attrs=None):
    """Dispatch a named primitive over Tensor inputs with keyword attrs."""
    if op_id not in PRIMITIVES:
        raise ShapeError(f"unknown primitive '{op_id}'")
    fn = PRIMITIVES[op_id]
    attrs = attrs or {}
    if op_id == "concat":
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)


# -- backward ---------------------------------------------------------------

def backward(loss):
    """Populate .grad on every requires_grad leaf reachable from scalar `loss`."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo, visiting, stack = [], set(), [(loss, False)]
    while stack:
        t, done = stack.pop()
        if done:
            topo.append(t)
            continue
        if id(t) in visiting:
            continue
        visiting.add(id(t))
        stack.append((t, True))
        if t._ctx is not None:
            for p in t._ctx.parents:
                if p._ctx is not None or p.requires_grad:
                    stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(topo):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g
        if t._ctx is None:
            continue
        parent_grads = t._ctx.bwd(g)
        for p, pg in zip(t._ctx.parents, parent_grads):
            if pg is None or not (p._ctx is not None or p.requires_grad):
                continue
            pid = id(p)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
        t._ctx = None  # graph is consumed by backward


# -- parameter initialisation ----------------------------------------------

def glorot_uniform(rng, shape, fan_in, fan_out):
    """Uniform(+-sqrt(6/(fan_in+fan_out))) init for dense/conv weights."""
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-lim, lim, size=shape).astype(_STATE["dtype"]),
                  requires_grad=True)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=_STATE["dtype"]), requires_grad=requires_grad)


def dense_params(rng, n_in, n_out):
    w = glorot_uniform(rng, (n_in, n_out), n_in, n_out)
    b = zeros((n_out,), requires_grad=True)
    return w, b


def conv_params(rng, c_out, c_in, kh=3, kw=3):
    w = glorot_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, c_out * kh * kw)
    b = zeros((c_out, 1, 1), requires_grad=True)
    return w, b
