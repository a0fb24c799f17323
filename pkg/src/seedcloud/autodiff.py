"""Dense-tensor engine with reverse-mode differentiation on numpy storage.

A Tensor wraps a numpy array plus the closure needed to push gradients to its
parents. Calling backward() on a scalar walks the graph in reverse topological
order and accumulates gradients into leaf tensors that require them. Gradients
accumulate additively across repeated backward calls; zeroing is the caller's
job (see optim.Adam.zero_grad).

Ops cover what the models need: elementwise arithmetic, matmul, reductions,
shape surgery, gather, 1x1 and transposed 2-D convolution, align-corners
bilinear resampling, and batch normalization. No general broadcasting: shapes
must match exactly except where an op documents otherwise. Every forward pass
checks for non-finite values (see set_finite_checks).
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import DegenerateInputError, NumericsError, ShapeError, UsageError

DEFAULT_DTYPE = np.float32

_FINITE_CHECKS = True
_GRAD_ENABLED = True


def set_finite_checks(enabled):
    """Toggle per-op NaN/Inf detection. Returns the previous setting."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return previous


@contextlib.contextmanager
def no_grad():
    """Context manager that skips graph construction (evaluation passes)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype) if arr.dtype != np.dtype(dtype) else arr
    if not np.issubdtype(arr.dtype, np.floating):
        return arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """A numpy array with an optional backward closure.

    _backward maps the output gradient to a tuple of parent gradients aligned
    with _parents (None entries for parents that need no gradient).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        """Constant view of the same storage, cut out of the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep from a scalar. Accumulates into leaf .grad."""
        if self.data.size != 1:
            raise UsageError(
                f"backward() needs a scalar, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in topo:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # Operator sugar; full op set lives in module-level functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def _toposort(root):
    """Reverse topological order (root first), iterative to spare the stack."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def _check_finite(arr, op_name):
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op_name} produced non-finite values")


def _make(data, parents, backward_fn, op_name):
    _check_finite(data, op_name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a, b, op_name):
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{op_name}: shapes {a.data.shape} and {b.data.shape} differ"
        )


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def add(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _tensor(a)
        data = a.data + b
        return _make(data, (a,), lambda g: (g,), "add")
    a, b = _tensor(a), _tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _tensor(a)
        return _make(a.data - b, (a,), lambda g: (g,), "sub")
    a, b = _tensor(a), _tensor(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, float(b))
    a, b = _tensor(a), _tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a, s):
    a = _tensor(a)
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def relu(x):
    x = _tensor(x)
    data = np.maximum(x.data, 0)
    mask = x.data > 0
    return _make(data, (x,), lambda g: (g * mask,), "relu")


def sqrt(x):
    """Elementwise square root; backward guards the zero denominator."""
    x = _tensor(x)
    if np.any(x.data < 0):
        raise NumericsError("sqrt of negative input")
    root = np.sqrt(x.data)
    safe = np.maximum(root, np.asarray(1e-12, dtype=root.dtype))

    def backward(g):
        return (g * (0.5 / safe),)

    return _make(root, (x,), backward, "sqrt")


def add_bias(x, b):
    """x (..., C) + b (C,), broadcast over leading axes."""
    x, b = _tensor(x), _tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: {x.shape} with bias {b.shape}")
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        return (g, g.sum(axis=lead) if lead else g)

    return _make(x.data + b.data, (x, b), backward, "add_bias")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = _tensor(a), _tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (g @ bd.T, ad.T @ g)

    return _make(ad @ bd, (a, b), backward, "matmul")


def fully_connected(x, weight, bias=None):
    """x (P, c_in) @ weight (c_in, c_out) + bias (c_out,)."""
    out = matmul(x, weight)
    if bias is not None:
        out = add_bias(out, bias)
    return out


# ---------------------------------------------------------------------------
# reductions


def tsum(x, axis=None, keepdims=False):
    x = _tensor(x)
    in_shape = x.shape
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, in_shape).copy() if not keepdims
                    else np.broadcast_to(g.reshape((1,) * len(in_shape)), in_shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, in_shape).copy(),)

    return _make(np.asarray(data), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    x = _tensor(x)
    if x.size == 0:
        raise UsageError("mean of empty tensor")
    if axis is None:
        count = x.size
    elif isinstance(axis, tuple):
        count = int(np.prod([x.shape[a] for a in axis]))
    else:
        count = x.shape[axis]
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def amax(x, axis):
    """Maximum along one axis; gradient routes to the first maximum."""
    x = _tensor(x)
    if x.ndim == 0:
        raise ShapeError("amax needs at least 1-D input")
    idx = np.argmax(x.data, axis=axis)
    data = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    data = np.squeeze(data, axis=axis)
    in_shape = x.shape

    def backward(g):
        gx = np.zeros(in_shape, dtype=g.dtype)
        np.put_along_axis(
            gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
        )
        return (gx,)

    return _make(data, (x,), backward, "amax")


# ---------------------------------------------------------------------------
# shape surgery


def reshape(x, shape):
    x = _tensor(x)
    in_shape = x.shape
    data = x.data.reshape(shape)
    return _make(data, (x,), lambda g: (g.reshape(in_shape),), "reshape")


def flatten(x):
    return reshape(x, (-1,))


def transpose(x, axes):
    x = _tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (g.transpose(inverse),),
        "transpose",
    )


def concat(tensors, axis):
    tensors = [_tensor(t) for t in tensors]
    if not tensors:
        raise UsageError("concat of empty list")
    nd = tensors[0].ndim
    for t in tensors:
        if t.ndim != nd:
            raise ShapeError("concat: rank mismatch")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(data, tuple(tensors), backward, "concat")


def expand(x, axis, n):
    """Insert a new axis of length n by replication; gradient sums it away."""
    x = _tensor(x)
    if n < 1:
        raise UsageError(f"expand: n must be >= 1, got {n}")
    data = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)
    return _make(data, (x,), lambda g: (g.sum(axis=axis),), "expand")


def replicate_vector(v, n):
    """(c,) -> (c, n) by column replication."""
    v = _tensor(v)
    if v.ndim != 1:
        raise ShapeError(f"replicate_vector expects 1-D input, got {v.shape}")
    return expand(v, 1, n)


def gather(x, indices, axis=0):
    """Select rows along an axis; backward scatter-adds (duplicates sum).

    indices may be any integer array for axis 0, and 1-D for axis >= 1.
    """
    x = _tensor(x)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise UsageError("gather indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[axis]):
        raise UsageError(
            f"gather index out of range for axis {axis} of length {x.shape[axis]}"
        )
    if axis != 0 and idx.ndim != 1:
        raise UsageError("gather on axis >= 1 needs 1-D indices")
    data = np.take(x.data, idx, axis=axis)
    in_shape = x.shape

    def backward(g):
        gx = np.zeros(in_shape, dtype=g.dtype)
        if axis == 0:
            np.add.at(gx, idx, g)
        else:
            np.add.at(np.moveaxis(gx, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return _make(data, (x,), backward, "gather")


# ---------------------------------------------------------------------------
# structured kernels


def _grid_shape(x, op_name):
    if x.ndim == 3:
        return None, x.shape
    if x.ndim == 4:
        return x.shape[0], x.shape[1:]
    raise ShapeError(f"{op_name} expects (c,h,w) or (b,c,h,w), got {x.shape}")


def conv1x1(x, weight, bias=None):
    """Pointwise convolution: weight (c_out, c_in), x (c_in,h,w) or (b,c_in,h,w).

    Equivalent to a matmul over the channel axis at every spatial position.
    """
    x, weight = _tensor(x), _tensor(weight)
    batch, (c_in, h, w) = _grid_shape(x, "conv1x1")
    if weight.ndim != 2 or weight.shape[1] != c_in:
        raise ShapeError(f"conv1x1: weight {weight.shape} vs input channels {c_in}")
    c_out = weight.shape[0]
    b_eff = 1 if batch is None else batch

    xd = x.data.reshape(b_eff, c_in, h * w)
    # (c_in, b*h*w) so the contraction is a single BLAS call
    xm = np.ascontiguousarray(xd.transpose(1, 0, 2)).reshape(c_in, b_eff * h * w)
    ym = weight.data @ xm
    out = ym.reshape(c_out, b_eff, h * w).transpose(1, 0, 2).reshape(b_eff, c_out, h, w)
    if batch is None:
        out = out.reshape(c_out, h, w)
    out = np.ascontiguousarray(out)
    wd = weight.data

    def backward(g):
        gm = np.ascontiguousarray(
            g.reshape(b_eff, c_out, h * w).transpose(1, 0, 2)
        ).reshape(c_out, b_eff * h * w)
        gx = (wd.T @ gm).reshape(c_in, b_eff, h * w).transpose(1, 0, 2)
        gx = gx.reshape(b_eff, c_in, h, w)
        if batch is None:
            gx = gx.reshape(c_in, h, w)
        gw = gm @ xm.T
        gb = gm.sum(axis=1)
        return (np.ascontiguousarray(gx), gw, gb)

    parents = (x, weight)
    if bias is not None:
        bias = _tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv1x1: bias {bias.shape}, expected ({c_out},)")
        if batch is None:
            out = out + bias.data[:, None, None]
        else:
            out = out + bias.data[None, :, None, None]
        parents = (x, weight, bias)
        return _make(out, parents, backward, "conv1x1")

    def backward_nobias(g):
        return backward(g)[:2]

    return _make(out, parents, backward_nobias, "conv1x1")


def transposed_conv2d(x, weight, bias=None, stride=2, padding=1):
    """Fractionally-strided 2-D convolution.

    x: (c_in,h,w) or (b,c_in,h,w); weight: (c_in, c_out, kh, kw).
    Output extent per axis: (h-1)*stride - 2*padding + kh.
    """
    x, weight = _tensor(x), _tensor(weight)
    batch, (c_in, h, w) = _grid_shape(x, "transposed_conv2d")
    if weight.ndim != 4 or weight.shape[0] != c_in:
        raise ShapeError(
            f"transposed_conv2d: weight {weight.shape} vs input channels {c_in}"
        )
    _, c_out, kh, kw = weight.shape
    h_out = (h - 1) * stride - 2 * padding + kh
    w_out = (w - 1) * stride - 2 * padding + kw
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"transposed_conv2d: output extent {h_out}x{w_out} is empty"
        )
    b_eff = 1 if batch is None else batch
    xd = x.data.reshape(b_eff, c_in, h, w)
    wd = weight.data

    # For kernel offset (di, dj), input cell (i, j) lands at
    # (i*stride - padding + di, j*stride - padding + dj); slices below keep
    # only in-bounds targets.
    def offset_slices(d, n_in, n_out):
        lo = 0
        while lo * stride - padding + d < 0:
            lo += 1
        hi = n_in - 1
        while hi * stride - padding + d > n_out - 1:
            hi -= 1
        if hi < lo:
            return None
        start = lo * stride - padding + d
        stop = hi * stride - padding + d + 1
        return slice(lo, hi + 1), slice(start, stop, stride)

    plan = []
    for di in range(kh):
        rows = offset_slices(di, h, h_out)
        if rows is None:
            continue
        for dj in range(kw):
            cols = offset_slices(dj, w, w_out)
            if cols is None:
                continue
            plan.append((di, dj, rows, cols))

    out = np.zeros((b_eff, c_out, h_out, w_out), dtype=xd.dtype)
    for di, dj, (in_r, out_r), (in_c, out_c) in plan:
        contrib = np.tensordot(xd[:, :, in_r, in_c], wd[:, :, di, dj], axes=([1], [0]))
        out[:, :, out_r, out_c] += contrib.transpose(0, 3, 1, 2)

    def backward(g):
        gd = g.reshape(b_eff, c_out, h_out, w_out)
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        for di, dj, (in_r, out_r), (in_c, out_c) in plan:
            g_patch = gd[:, :, out_r, out_c]  # (b, c_out, nh, nw)
            gx[:, :, in_r, in_c] += np.tensordot(
                g_patch, wd[:, :, di, dj], axes=([1], [1])
            ).transpose(0, 3, 1, 2)
            gw[:, :, di, dj] += np.tensordot(
                xd[:, :, in_r, in_c], g_patch, axes=([0, 2, 3], [0, 2, 3])
            )
        if batch is None:
            gx = gx.reshape(c_in, h, w)
        gb = gd.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    result = out if batch is not None else out.reshape(c_out, h_out, w_out)
    parents = (x, weight)
    if bias is not None:
        bias = _tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(
                f"transposed_conv2d: bias {bias.shape}, expected ({c_out},)"
            )
        if batch is None:
            result = result + bias.data[:, None, None]
        else:
            result = result + bias.data[None, :, None, None]
        return _make(result, (x, weight, bias), backward, "transposed_conv2d")

    def backward_nobias(g):
        return backward(g)[:2]

    return _make(result, parents, backward_nobias, "transposed_conv2d")


def _interp_matrix(n_out, n_in, dtype):
    """Align-corners 1-D linear interpolation as a dense (n_out, n_in) matrix."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_out == 1:
        m[0, 0] = 1.0
        return m
    src = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
    lo = np.floor(src).astype(np.int64)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m[np.arange(n_out), lo] += (1.0 - frac).astype(dtype)
    m[np.arange(n_out), hi] += frac.astype(dtype)
    return m


def bilinear_interp(x, out_hw):
    """Resize the spatial axes of (c,h,w) or (b,c,h,w) with align-corners
    bilinear sampling. Same-size resize is the identity bit-for-bit."""
    x = _tensor(x)
    batch, (c, h, w) = _grid_shape(x, "bilinear_interp")
    h2, w2 = int(out_hw[0]), int(out_hw[1])
    if h2 < 1 or w2 < 1:
        raise ShapeError(f"bilinear_interp: bad output size {out_hw}")
    if (h2, w2) == (h, w):
        return _make(x.data.copy(), (x,), lambda g: (g,), "bilinear_interp")
    a_row = _interp_matrix(h2, h, x.dtype.type)
    a_col = _interp_matrix(w2, w, x.dtype.type)
    # separable: out = A_row @ x @ A_col^T per channel
    data = np.tensordot(x.data, a_col, axes=([x.ndim - 1], [1]))
    data = np.moveaxis(np.tensordot(data, a_row, axes=([x.ndim - 2], [1])), -1, -2)
    data = np.ascontiguousarray(data)

    def backward(g):
        gx = np.tensordot(g, a_col, axes=([g.ndim - 1], [0]))
        gx = np.moveaxis(np.tensordot(gx, a_row, axes=([g.ndim - 2], [0])), -1, -2)
        return (np.ascontiguousarray(gx),)

    return _make(data, (x,), backward, "bilinear_interp")


def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.1, eps=1e-5):
    """Normalize per channel over the remaining axes.

    Channel axis by rank: 2-D (P, C) -> last axis; 3-D (C, H, W) -> axis 0;
    4-D (B, C, H, W) -> axis 1. running_mean/running_var are plain ndarrays
    updated in place during training (biased variance).
    """
    x, gamma, beta = _tensor(x), _tensor(gamma), _tensor(beta)
    if x.ndim == 2:
        red = (0,)
        c_axis = 1
    elif x.ndim == 3:
        red = (1, 2)
        c_axis = 0
    elif x.ndim == 4:
        red = (0, 2, 3)
        c_axis = 1
    else:
        raise ShapeError(f"batchnorm: unsupported rank {x.ndim}")
    c = x.shape[c_axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta must be ({c},)")
    count = x.size // c

    def per_channel(v):
        shape = [1] * x.ndim
        shape[c_axis] = c
        return v.reshape(shape)

    xd = x.data
    if training:
        if count < 2:
            raise DegenerateInputError(
                f"batchnorm needs at least 2 samples per channel, got {count}"
            )
        mu = xd.mean(axis=red)
        var = xd.var(axis=red)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(xd.dtype, copy=False)
        var = running_var.astype(xd.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - per_channel(mu)) * per_channel(inv_std)
    out = xhat * per_channel(gamma.data) + per_channel(beta.data)
    gd = gamma.data

    def backward(g):
        g_gamma = (g * xhat).sum(axis=red)
        g_beta = g.sum(axis=red)
        g_xhat = g * per_channel(gd)
        if training:
            term = (
                g_xhat
                - per_channel(g_xhat.mean(axis=red))
                - xhat * per_channel((g_xhat * xhat).mean(axis=red))
            )
            gx = term * per_channel(inv_std)
        else:
            gx = g_xhat * per_channel(inv_std)
        return (gx, g_gamma, g_beta)

    return _make(out, (x, gamma, beta), backward, "batchnorm")


# ---------------------------------------------------------------------------
# gradient checking


def numerical_gradient(fn, x, step=None):
    """Central finite-difference gradient of scalar fn at ndarray x."""
    x = np.asarray(x, dtype=np.float64)
    if step is None:
        step = 1e-5
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = float(fn(x))
        flat[i] = keep - step
        lo = float(fn(x))
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def check_gradient(fn, x, step=None, rtol=1e-4, atol=1e-7):
    """Compare reverse-mode and finite-difference gradients of scalar fn.

    fn maps a Tensor (built fresh from x each call) to a scalar Tensor.
    Returns (max_rel_err, analytic, numeric, ok); raises nothing.
    """
    x = np.asarray(x, dtype=np.float64)
    t = Tensor(x.copy(), requires_grad=True)
    out = fn(t)
    out.backward()
    analytic = t.grad if t.grad is not None else np.zeros_like(x)

    def scalar(arr):
        with no_grad():
            return fn(Tensor(arr.copy())).item()

    numeric = numerical_gradient(scalar, x, step=step)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), atol)
    rel = np.abs(analytic - numeric) / denom
    ok = np.all(np.abs(analytic - numeric) <= atol + rtol * denom)
    return float(rel.max() if rel.size else 0.0), analytic, numeric, bool(ok)
