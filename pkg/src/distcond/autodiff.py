"""Dense tensors with reverse-mode automatic differentiation.

The engine is tape-based: while a `record()` context is active, every op
whose inputs participate in differentiation appends a backward closure to
the tape. `backward(loss)` replays the tape once in reverse execution
order and accumulates gradients into the `.grad` of tensors marked
`requires_grad`. Gradients of non-participating tensors are never
materialized, so frozen-encoder passes cost nothing extra.

Compute dtype is float32 by default; every op also works in float64,
which the test oracles use.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels as K
from .errors import NumericError, ShapeError, TapeError

DEFAULT_DTYPE = np.float32

_TAPES: list = []


class Tensor:
    """A dense float array, optionally tracked for differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = requires_grad
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad)
        return t

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self) -> "Tensor":
        return sum_(self)

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axes, keepdims)


class Tape:
    """Ordered record of differentiable ops; single use."""

    __slots__ = ("_records", "_consumed")

    def __init__(self):
        self._records = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._records)


@contextmanager
def record():
    """Activate a fresh tape for the duration of the block."""
    tape = Tape()
    _TAPES.append(tape)
    try:
        yield tape
    finally:
        _TAPES.pop()


@contextmanager
def pause_recording():
    """Temporarily disable all recording (for oracle/eval forward passes)."""
    saved = _TAPES[:]
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _participates(t: Tensor, tape) -> bool:
    return t.requires_grad or t._tape is tape


def wants_grad(t: Tensor) -> bool:
    """True if a gradient will flow into t under the currently active tape."""
    tape = _active_tape()
    return tape is not None and not tape._consumed and _participates(t, tape)


def _ensure_finite(arr: np.ndarray, opname: str) -> None:
    # cheap one-pass probe; any NaN/Inf poisons the sum
    if not np.isfinite(np.sum(arr)):
        raise NumericError(f"{opname} produced non-finite values")


def _apply(opname: str, out_data: np.ndarray, inputs, backward_fn) -> Tensor:
    _ensure_finite(out_data, opname)
    out = Tensor(out_data)
    tape = _active_tape()
    if (
        tape is not None
        and not tape._consumed
        and any(_participates(t, tape) for t in inputs)
    ):
        out._tape = tape
        tape._records.append((out, inputs, backward_fn))
    return out


def backward(loss: Tensor):
    """Replay the loss's tape in reverse; returns {tensor: grad} for leaves.

    The tape is cleared afterwards: call sites must run a new forward pass
    (under a new `record()`) before differentiating again.
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss was not produced on an active tape")
    if tape._consumed:
        raise TapeError("stale tape: backward was already called; rerun the forward pass")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    leaf_grads = {}
    for out, inputs, backward_fn in reversed(tape._records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        if out.requires_grad:  # requires_grad set on an intermediate
            leaves[id(out)] = out
            acc = leaf_grads.get(id(out))
            leaf_grads[id(out)] = g if acc is None else acc + g
        in_grads = backward_fn(g)
        for t, gt in zip(inputs, in_grads):
            if gt is None or not _participates(t, tape):
                continue
            if t.requires_grad:
                leaves[id(t)] = t
            acc = grads.get(id(t))
            grads[id(t)] = gt if acc is None else acc + gt
    result = {}
    for tid, t in leaves.items():
        g = grads.get(tid, leaf_grads.get(tid))
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        result[t] = g
    tape._consumed = True
    tape._records.clear()
    return result


def _as_tensor_pair(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        if a.dtype != b.dtype:
            raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
        return a, b, None
    return a, None, a.dtype.type(b)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, bt, scalar = _as_tensor_pair(a, b)
    if bt is None:
        out = a.data + scalar
        return _apply("add", out, (a,), lambda g: (_unbroadcast(g, a.shape),))
    out = a.data + bt.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, bt.shape)

    return _apply("add", out, (a, bt), bwd)


def mul(a, b) -> Tensor:
    a, bt, scalar = _as_tensor_pair(a, b)
    if bt is None:
        out = a.data * scalar
        return _apply("mul", out, (a,), lambda g: (_unbroadcast(g * scalar, a.shape),))
    out = a.data * bt.data
    ad, bd = a.data, bt.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, bt.shape)

    return _apply("mul", out, (a, bt), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    out = x.data.reshape(shape)
    return _apply("reshape", out, (x,), lambda g: (g.reshape(old),))


def sum_(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    shape = x.shape

    def bwd(g):
        return (np.broadcast_to(g, shape),)

    return _apply("sum", out, (x,), bwd)


def mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if axes is None:
        count = x.size
        out = np.asarray(x.data.mean(), dtype=x.dtype)
    else:
        axes = tuple(axes) if isinstance(axes, (tuple, list)) else (axes,)
        count = int(np.prod([x.shape[ax] for ax in axes]))
        out = x.data.mean(axis=axes, keepdims=keepdims)
    if count == 0:
        raise ShapeError("mean over zero elements")
    shape = x.shape
    inv = 1.0 / count

    def bwd(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * inv, shape).astype(x.dtype, copy=False),)

    return _apply("mean", out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    mask = x.data > 0  # subgradient at 0 is 0

    def bwd(g):
        return (g * mask,)

    return _apply("relu", out, (x,), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} incompatible with weight {w.shape}")
    out = x.data @ w.data.T + b.data
    need_x, need_w, need_b = wants_grad(x), wants_grad(w), wants_grad(b)
    xd, wd = x.data, w.data

    def bwd(g):
        gx = g @ wd if need_x else None
        gw = g.T @ xd if need_w else None
        gb = g.sum(axis=0) if need_b else None
        return gx, gw, gb

    return _apply("linear", out, (x, w, b), bwd)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW input with an OIHW kernel."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D input/weight, got {x.shape} / {w.shape}")
    n, c, h, wpx = x.shape
    co, ci, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd extent, got {k}x{k2}")
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {ci}")
    if b.shape != (co,):
        raise ShapeError(f"conv2d: bias {b.shape} incompatible with {co} output channels")
    if padding < 0 or stride < 1 or h < 1 or wpx < 1:
        raise ShapeError("conv2d: padding must be >= 0, stride >= 1, spatial extents >= 1")
    ho = K.out_extent(h, k, stride, padding)
    wo = K.out_extent(wpx, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: output extent {ho}x{wo} is empty")

    xp = K.pad_nchw(x.data, padding)
    out = K.conv2d_forward(xp, w.data, stride)
    out += b.data.reshape(1, co, 1, 1)
    need_x, need_w, need_b = wants_grad(x), wants_grad(w), wants_grad(b)
    hp, wp = xp.shape[2], xp.shape[3]
    xd, wd = x.data, w.data

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = gw = gb = None
        if need_x:
            gxp = K.conv2d_input_grad(g, wd, hp, wp, stride)
            gx = K.unpad_nchw(gxp, padding)
        if need_w:
            gw = K.conv2d_weight_grad(K.pad_nchw(xd, padding), g, k, stride)
        if need_b:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _apply("conv2d", out, (x, w, b), bwd)


def avg_pool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    """Window mean with fixed divisor k*k; padding zeros count toward the mean."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d: need 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    ho = K.out_extent(h, k, stride, padding)
    wo = K.out_extent(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"avg_pool2d: output extent {ho}x{wo} is empty")
    xp = K.pad_nchw(x.data, padding)
    out = K.avgpool_forward(xp, k, stride)
    hp, wp = xp.shape[2], xp.shape[3]

    def bwd(g):
        gxp = K.avgpool_input_grad(g, hp, wp, k, stride)
        return (K.unpad_nchw(gxp, padding),)

    return _apply("avg_pool2d", out, (x,), bwd)


def instance_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel standardization over spatial dims, then affine."""
    if x.ndim != 4:
        raise ShapeError(f"instance_norm: need 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if h * w < 2:
        raise ShapeError("instance_norm: needs at least 2 spatial positions")
    if gain.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"instance_norm: affine params must have shape ({c},)")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (x.data - mu) * inv_std
    out = gain.data.reshape(1, c, 1, 1) * xhat + shift.data.reshape(1, c, 1, 1)
    need_x, need_g, need_s = wants_grad(x), wants_grad(gain), wants_grad(shift)
    gd = gain.data

    def bwd(g):
        gx = gg = gs = None
        if need_g:
            gg = (g * xhat).sum(axis=(0, 2, 3))
        if need_s:
            gs = g.sum(axis=(0, 2, 3))
        if need_x:
            gh = g * gd.reshape(1, c, 1, 1)  # dL/dxhat
            m1 = gh.mean(axis=(2, 3), keepdims=True)
            m2 = (gh * xhat).mean(axis=(2, 3), keepdims=True)
            gx = inv_std * (gh - m1 - xhat * m2)
        return gx, gg, gs

    return _apply("instance_norm", out, (x, gain, shift), bwd)


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize with half-pixel-center bilinear interpolation (upscale only)."""
    if x.ndim != 4:
        raise ShapeError(f"bilinear_upsample: need 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if h < 1 or w < 1 or out_h < 1 or out_w < 1:
        raise ShapeError("bilinear_upsample: zero extents")
    if out_h < h or out_w < w:
        raise ShapeError(f"bilinear_upsample: target {out_h}x{out_w} smaller than input {h}x{w}")
    out = K.upsample_forward(x.data, out_h, out_w)

    def bwd(g):
        return (K.upsample_input_grad(g, h, w),)

    return _apply("bilinear_upsample", out, (x,), bwd)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of -log softmax(logits)[label]; stabilized by max subtraction."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: need 2-D logits, got {logits.shape}")
    y = np.asarray(labels, dtype=np.int64)
    n, kcls = logits.shape
    if y.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: {n} rows but {y.shape} labels")
    if n == 0:
        raise ShapeError("softmax_cross_entropy: empty batch")
    if y.min() < 0 or y.max() >= kcls:
        raise ShapeError(f"softmax_cross_entropy: label out of range [0, {kcls})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    lse = np.log(sez)
    rows = np.arange(n)
    out = np.asarray((lse[:, 0] - z[rows, y]).mean(), dtype=logits.dtype)
    probs = ez / sez

    def bwd(g):
        gl = probs.copy()
        gl[rows, y] -= 1.0
        gl *= g / n
        return (gl,)

    return _apply("softmax_cross_entropy", out, (logits,), bwd)


def mean_embedding_sq_dist(a: Tensor, b: Tensor) -> Tensor:
    """Squared L2 distance between the row means of a and b."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"mean_embedding_sq_dist: incompatible shapes {a.shape} / {b.shape}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ShapeError("mean_embedding_sq_dist: empty input")
    d = a.data.mean(axis=0) - b.data.mean(axis=0)
    out = np.asarray(d @ d, dtype=a.dtype)
    na, nb = a.shape[0], b.shape[0]

    def bwd(g):
        base = (2.0 * g) * d
        ga = np.broadcast_to(base / na, a.shape).astype(a.dtype, copy=False)
        gb = np.broadcast_to(-base / nb, b.shape).astype(b.dtype, copy=False)
        return ga, gb

    return _apply("mean_embedding_sq_dist", out, (a, b), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: no tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _apply("concat", out, tuple(tensors), bwd)


def narrow(x: Tensor, start: int, length: int, axis: int = 0) -> Tensor:
    """Contiguous slice along one axis."""
    if start < 0 or length < 0 or start + length > x.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {start + length}) outside extent {x.shape[axis]}")
    idx = tuple(slice(None) if ax != axis else slice(start, start + length) for ax in range(x.ndim))
    out = np.ascontiguousarray(x.data[idx])
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[idx] = g
        return (gx,)

    return _apply("narrow", out, (x,), bwd)


def spatial_slice(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"spatial_slice: need 4-D input, got {x.shape}")
    if top < 0 or left < 0 or top + height > x.shape[2] or left + width > x.shape[3]:
        raise ShapeError("spatial_slice: window outside input")
    out = np.ascontiguousarray(x.data[:, :, top : top + height, left : left + width])
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, :, top : top + height, left : left + width] = g
        return (gx,)

    return _apply("spatial_slice", out, (x,), bwd)


def pad2d(x: Tensor, padding: int) -> Tensor:
    if x.ndim != 4 or padding < 0:
        raise ShapeError("pad2d: need 4-D input and padding >= 0")
    out = K.pad_nchw(x.data, padding)

    def bwd(g):
        return (K.unpad_nchw(g, padding),)

    return _apply("pad2d", out, (x,), bwd)


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows along axis 0 (index may repeat)."""
    index = np.asarray(index, dtype=np.int64)
    out = np.ascontiguousarray(x.data[index])
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, index, g)
        return (gx,)

    return _apply("take_rows", out, (x,), bwd)


def finite_diff_gradient(f, x: Tensor, step: float = 1e-5) -> Tensor:
    """Central-difference gradient of a tensor-to-scalar function at x.

    Evaluates f with recording disabled; intended as the independent
    oracle against reverse-mode results (use float64 inputs).
    """
    base = x.data
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    with pause_recording():
        for i in range(base.size):
            for sign in (1.0, -1.0):
                probe = base.copy()
                probe.reshape(-1)[i] += sign * step
                val = f(Tensor(probe))
                v = float(val.data) if isinstance(val, Tensor) else float(val)
                if not np.isfinite(v):
                    raise NumericError("finite_diff_gradient: f returned a non-finite value")
                flat[i] += sign * v
    grad /= 2.0 * step
    return Tensor(grad)
