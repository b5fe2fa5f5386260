"""Dense tensors with reverse-mode automatic differentiation.

Every model equation in this package runs through the ops defined here.
An op allocates a fresh output buffer and, when any input requires a
gradient, records a closure that maps the output adjoint to input
adjoints. backward() walks the recorded graph once in reverse topological
order. Tensors are never mutated by ops, so a recorded graph stays valid
until it is dropped.

Precision is configurable per tensor (float32 or float64); the module
default is float32 and can be changed with set_default_dtype. Gradient
check suites run everything in float64.
"""
from __future__ import annotations

import contextlib

import numpy as np

from .errors import ContractError, DimensionError, LabelError, NumericError

_FLOAT_DTYPES = (np.float32, np.float64)

_default_dtype = np.float32
_grad_enabled = True
_finite_checks = False


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dt = np.dtype(dtype).type
    if dt not in _FLOAT_DTYPES:
        raise ContractError(f"default dtype must be float32 or float64, got {dtype}")
    _default_dtype = dt


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def no_grad():
    """Disable differentiation recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def set_finite_checks(enabled: bool) -> None:
    """Debug mode: raise NumericError whenever an op produces NaN/Inf."""
    global _finite_checks
    _finite_checks = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype, copy=True)
        if dtype is None and arr.dtype.type not in _FLOAT_DTYPES:
            arr = arr.astype(_default_dtype)
        if arr.dtype.type not in _FLOAT_DTYPES:
            raise ContractError(f"tensors hold float32/float64 values, got {arr.dtype}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._grad_fn = None

    # ---- structure ----
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def clear_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # ---- operator sugar ----
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return NotImplemented
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, ref: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = ref.data.dtype if ref is not None else _default_dtype
    return Tensor(np.asarray(x, dtype=dtype))


def _record(data: np.ndarray, parents: tuple, grad_fn) -> Tensor:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NumericError("op produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._grad_fn = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every reachable tensor.

    The loss must be a scalar. Gradients add into existing .grad buffers,
    so calling backward twice doubles them; clearing is the caller's job.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    adjoint = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._grad_fn is None:
            continue
        for p, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            cur = adjoint.get(id(p))
            adjoint[id(p)] = pg if cur is None else cur + pg


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"add operands do not broadcast: {a.shape} vs {b.shape}")

    def grad_fn(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    try:
        out = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub operands do not broadcast: {a.shape} vs {b.shape}")

    def grad_fn(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul operands do not broadcast: {a.shape} vs {b.shape}")

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), grad_fn)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def grad_fn(g):
        return (-g,)

    return _record(-a.data, (a,), grad_fn)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    out = np.maximum(d, 0)

    def grad_fn(g):
        return (g * (d > 0),)

    return _record(out, (x,), grad_fn)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _record(out, (x,), grad_fn)


def activation(x, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ContractError(f"unknown activation kind {kind!r}")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.data.shape),)

    return _record(out, (x,), grad_fn)


def getitem(x, key) -> Tensor:
    """Basic (slice/int) indexing with gradient scatter."""
    x = _as_tensor(x)
    out = x.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=x.data.dtype)
    else:
        out = out.copy()

    def grad_fn(g):
        buf = np.zeros_like(x.data)
        buf[key] += g
        return (buf,)

    return _record(out, (x,), grad_fn)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def grad_fn(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, x.data.shape).astype(x.data.dtype, copy=False),)

    return _record(out, (x,), grad_fn)


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def grad_fn(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        full = np.broadcast_to(gg, x.data.shape).astype(x.data.dtype, copy=False)
        return (full / count,)

    return _record(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _record(out, (a, b), grad_fn)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    b, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kh, kw, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return view.reshape(b, c * kh * kw, ho * wo)


def conv2d(x, w, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-d cross-correlation with zero padding.

    x is (C,H,W) or (B,C,H,W); w is (C_out,C_in/groups,kh,kw). A 3-d
    input gets a 3-d output. Output spatial size per axis is
    floor((extent+2p-k)/stride)+1. With groups > 1 the channels split
    into `groups` equal slices convolved independently.
    """
    x = _as_tensor(x)
    w = _as_tensor(w, x)
    if w.data.ndim != 4:
        raise DimensionError(f"conv2d kernel must be 4-d, got {w.shape}")
    if x.data.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be 3-d or 4-d, got {x.shape}")
    stride = int(stride)
    padding = int(padding)
    groups = int(groups)
    if stride < 1:
        raise DimensionError(f"conv2d stride must be positive, got {stride}")
    if padding < 0:
        raise DimensionError(f"conv2d padding must be non-negative, got {padding}")

    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    batch, cin, h, wid = xd.shape
    cout, kin, kh, kw = w.shape
    if groups < 1 or cin % groups or cout % groups:
        raise DimensionError(
            f"groups={groups} must divide input ({cin}) and output ({cout}) channels"
        )
    if kin * groups != cin:
        raise DimensionError(
            f"conv2d channel mismatch: input has {cin} channels, kernel expects "
            f"{kin * groups} ({kin} per group x {groups} groups)"
        )
    hp, wp = h + 2 * padding, wid + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    og = cout // groups

    if kh == 1 and kw == 1 and padding == 0:
        xs = xd[:, :, ::stride, ::stride]
        cols = np.ascontiguousarray(xs).reshape(batch, cin, ho * wo)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    # rows of cols are channel-major, so group slices stay contiguous
    colsg = cols.reshape(batch, groups, kin * kh * kw, ho * wo)
    wg = w.data.reshape(groups, og, kin * kh * kw)
    out = np.matmul(wg, colsg).reshape(batch, cout, ho, wo)
    if squeeze:
        out = out[0]

    def grad_fn(g):
        g4 = g[None] if squeeze else g
        gg = g4.reshape(batch, groups, og, ho * wo)
        gw = None
        if w.requires_grad:
            gw = np.matmul(gg, colsg.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wg.transpose(0, 2, 1), gg).reshape(batch, cin * kh * kw, ho * wo)
            if kh == 1 and kw == 1 and padding == 0:
                gxd = np.zeros_like(xd)
                gxd[:, :, ::stride, ::stride] = gcols.reshape(batch, cin, ho, wo)
            else:
                gxp = np.zeros((batch, cin, hp, wp), dtype=xd.dtype)
                gc = gcols.reshape(batch, cin, kh, kw, ho, wo)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gc[:, :, i, j]
                gxd = gxp[:, :, padding:padding + h, padding:padding + wid]
            gx = gxd[0] if squeeze else gxd
        return gx, gw

    return _record(out, (x, w), grad_fn)


def pool2d_global(x, kind: str) -> Tensor:
    """Per-channel spatial mean or max. (C,H,W)->(C,) or (B,C,H,W)->(B,C).

    The max gradient routes to the first maximal element in row-major
    order.
    """
    if kind not in ("average", "max"):
        raise ContractError(f"unknown pooling kind {kind!r}")
    x = _as_tensor(x)
    if x.data.ndim not in (3, 4):
        raise DimensionError(f"pool2d_global input must be 3-d or 4-d, got {x.shape}")
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    batch, c, h, w = xd.shape
    if h < 1 or w < 1:
        raise DimensionError(f"pool2d_global needs non-empty spatial extent, got {x.shape}")
    flat = xd.reshape(batch, c, h * w)

    if kind == "average":
        out = flat.mean(axis=2)

        def grad_fn(g):
            g3 = (g[None] if squeeze else g).reshape(batch, c, 1)
            gx = np.broadcast_to(g3 / (h * w), (batch, c, h * w)).reshape(xd.shape)
            gx = gx.astype(xd.dtype, copy=False)
            return ((gx[0] if squeeze else gx).copy(),)

    else:
        idx = flat.argmax(axis=2)
        out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

        def grad_fn(g):
            g2 = g[None] if squeeze else g
            gf = np.zeros((batch, c, h * w), dtype=xd.dtype)
            np.put_along_axis(gf, idx[:, :, None], g2[:, :, None], axis=2)
            gx = gf.reshape(xd.shape)
            return (gx[0] if squeeze else gx,)

    out = out[0] if squeeze else out
    return _record(out, (x,), grad_fn)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of zero parts")
    nd = parts[0].data.ndim
    ax = axis if axis >= 0 else axis + nd
    if not 0 <= ax < nd:
        raise DimensionError(f"concat axis {axis} out of range for {parts[0].shape}")
    for p in parts[1:]:
        if p.data.ndim != nd:
            raise DimensionError(
                f"concat rank mismatch: {parts[0].shape} vs {p.shape}"
            )
        for d in range(nd):
            if d != ax and p.shape[d] != parts[0].shape[d]:
                raise DimensionError(
                    f"concat extents differ off axis {ax}: {parts[0].shape} vs {p.shape}"
                )
    out = np.concatenate([p.data for p in parts], axis=ax)
    sizes = [p.shape[ax] for p in parts]

    def grad_fn(g):
        grads = []
        start = 0
        sl = [slice(None)] * nd
        for p, s in zip(parts, sizes):
            if p.requires_grad:
                sl[ax] = slice(start, start + s)
                grads.append(g[tuple(sl)])
            else:
                grads.append(None)
            start += s
        return tuple(grads)

    return _record(out, tuple(parts), grad_fn)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch.

    Stabilized by max subtraction, so saturated logits stay finite.
    """
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects (B,C) logits, got {logits.shape}")
    batch, classes = logits.shape
    if batch < 1:
        raise DimensionError("softmax_cross_entropy needs at least one row")
    lab = np.asarray(labels)
    if lab.ndim != 1 or lab.shape[0] != batch:
        raise DimensionError(
            f"labels must be a length-{batch} vector, got shape {lab.shape}"
        )
    lab = lab.astype(np.int64)
    for i, v in enumerate(lab):
        if not 0 <= v < classes:
            raise LabelError(f"label {int(v)} at batch index {i} outside [0, {classes})")

    d = logits.data
    m = d.max(axis=1, keepdims=True)
    z = d - m
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    rows = np.arange(batch)
    losses = np.log(sez)[:, 0] - z[rows, lab]
    out = np.asarray(losses.mean(), dtype=d.dtype)

    def grad_fn(g):
        p = ez / sez
        p[rows, lab] -= 1.0
        return (p * (g / batch),)

    return _record(out, (logits,), grad_fn)
