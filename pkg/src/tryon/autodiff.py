"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: every operation returns a new :class:`Tensor` holding the
result plus a closure that routes upstream gradients to its inputs.
``Tensor.backward()`` walks the recorded graph in reverse topological
order.  Values are float32 by default; gradient verification runs the
same code in float64.

The convolution and bilinear-sampling inner loops live in
:mod:`tryon.kernels` (compiled extension with a numpy fallback); all other
operations are plain numpy.
"""

import numpy as np

from . import kernels
from .errors import ShapeError

_FLOATS = (np.float32, np.float64)

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense n-dimensional array of reals with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_grad_borrowed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOATS:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._grad_borrowed = False

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

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None
        self._grad_borrowed = False

    def all_finite(self):
        """Explicit NaN/Inf check; never silent."""
        return bool(np.isfinite(self.data).all())

    def backward(self):
        """Accumulate d(self)/d(ancestor) into every reachable ``grad``."""
        if self.data.size != 1:
            raise ShapeError("backward requires a scalar, got shape %r" % (self.shape,))
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        self._grad_borrowed = False
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return "Tensor(shape=%r, dtype=%s, grad=%s)" % (
            self.shape, self.data.dtype, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named learnable tensor; gradient always has the value's shape."""

    __slots__ = ("name",)

    def __init__(self, data, name, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return "Parameter(%r, shape=%r)" % (self.name, self.shape)


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _make(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = True
    out._parents = tuple(p for p in parents if p.requires_grad)
    out._backward = backward
    out._grad_borrowed = False
    return out


def _plain(data):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out._grad_borrowed = False
    return out


def _accum(t, g):
    # First contribution is held by reference (it may be a view of another
    # node's buffer, which is stable once that node's backward has run); a
    # second contribution forces a fresh owned array before adding in place.
    if t.grad is None:
        t.grad = g
        t._grad_borrowed = True
    elif t._grad_borrowed:
        t.grad = t.grad + g
        t._grad_borrowed = False
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of size-1 stretching)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_data(a, b, op):
    try:
        return op(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(
            "shapes %r and %r are not broadcast-compatible" % (a.shape, b.shape)
        ) from exc


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a = _wrap(a, like=b if isinstance(b, Tensor) else None)
    b = _wrap(b, like=a)
    data = _binary_data(a, b, np.add)
    if not (_grad_enabled and (a.requires_grad or b.requires_grad)):
        return _plain(data)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def sub(a, b):
    a = _wrap(a, like=b if isinstance(b, Tensor) else None)
    b = _wrap(b, like=a)
    data = _binary_data(a, b, np.subtract)
    if not (_grad_enabled and (a.requires_grad or b.requires_grad)):
        return _plain(data)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b):
    a = _wrap(a, like=b if isinstance(b, Tensor) else None)
    b = _wrap(b, like=a)
    data = _binary_data(a, b, np.multiply)
    if not (_grad_enabled and (a.requires_grad or b.requires_grad)):
        return _plain(data)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def neg(a):
    if not (_grad_enabled and a.requires_grad):
        return _plain(-a.data)

    def backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), backward)


def relu(a):
    data = np.maximum(a.data, 0)
    if not (_grad_enabled and a.requires_grad):
        return _plain(data)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _make(data, (a,), backward)


def sigmoid(a):
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)
    if not (_grad_enabled and a.requires_grad):
        return _plain(data)

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), backward)


def tanh(a):
    data = np.tanh(a.data)
    if not (_grad_enabled and a.requires_grad):
        return _plain(data)

    def backward(g):
        _accum(a, g * (1.0 - data * data))

    return _make(data, (a,), backward)


def abs_(a):
    data = np.abs(a.data)
    if not (_grad_enabled and a.requires_grad):
        return _plain(data)

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a, shape):
    data = a.data.reshape(shape)
    if not (_grad_enabled and a.requires_grad):
        return _plain(data)

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _make(data, (a,), backward)


def transpose(a, axes):
    data = np.ascontiguousarray(a.data.transpose(axes))
    if not (_grad_enabled and a.requires_grad):
        return _plain(data)
    inv = np.argsort(axes)

    def backward(g):
        _accum(a, g.transpose(inv))

    return _make(data, (a,), backward)


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat shapes incompatible: %r"
                         % [t.shape for t in tensors]) from exc
    if not (_grad_enabled and any(t.requires_grad for t in tensors)):
        return _plain(data)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _make(data, tuple(tensors), backward)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = np.ascontiguousarray(a.data[idx])
    if not (_grad_enabled and a.requires_grad):
        return _plain(data)

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and linear algebra

def sum_(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if not (_grad_enabled and a.requires_grad):
        return _plain(data)

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.shape).copy())

    return _make(data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[i] for i in axis]))
    else:
        count = a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError("matmul inner dims disagree: %r @ %r" % (a.shape, b.shape))
    data = a.data @ b.data
    if not (_grad_enabled and (a.requires_grad or b.requires_grad)):
        return _plain(data)

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, _unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward)


def linear(x, w, b=None):
    """y[i,j] = sum_k x[i,k] w[k,j] + b[j]."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError("linear: input dim %d but weight expects %d"
                         % (x.shape[-1], w.shape[0]))
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def softmax(a, axis=-1):
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    if not (_grad_enabled and a.requires_grad):
        return _plain(data)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accum(a, (g - dot) * data)

    return _make(data, (a,), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * istd
    data = gamma.data * xhat + beta.data
    if not (_grad_enabled and (x.requires_grad or gamma.requires_grad
                               or beta.requires_grad)):
        return _plain(data)

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, istd * (dxhat - m1 - xhat * m2))

    return _make(data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# convolutions, sampling, embeddings

def temporal_conv1d(x, kernel):
    """Length-preserving 1D convolution over tokens.

    x: (L, d_in); kernel: (k, d_in, d_out) with odd k; zero padding (k-1)/2.
    """
    k, din, dout = kernel.shape
    if k % 2 != 1:
        raise ShapeError("temporal_conv1d needs an odd kernel width, got %d" % k)
    if x.shape[1] != din:
        raise ShapeError("temporal_conv1d: %d input channels, kernel expects %d"
                         % (x.shape[1], din))
    L = x.shape[0]
    half = (k - 1) // 2
    xp = np.pad(x.data, ((half, half), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # (L, din, k)
    cols = win.transpose(0, 2, 1).reshape(L, k * din)
    data = cols @ kernel.data.reshape(k * din, dout)
    if not (_grad_enabled and (x.requires_grad or kernel.requires_grad)):
        return _plain(data)

    def backward(g):
        if kernel.requires_grad:
            _accum(kernel, (cols.T @ g).reshape(kernel.shape))
        if x.requires_grad:
            gcols = (g @ kernel.data.reshape(k * din, dout).T).reshape(L, k, din)
            gxp = np.zeros_like(xp)
            for off in range(k):
                gxp[off : off + L] += gcols[:, off, :]
            _accum(x, gxp[half : half + L])

    return _make(data, (x, kernel), backward)


def conv2d(x, w, b=None, stride=1, pad=0):
    """x: (Cin,H,W); w: (Cout,Cin,kh,kw); optional bias (Cout,)."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ShapeError("conv2d: input %r does not match weight %r"
                         % (x.shape, w.shape))
    data = kernels.conv2d_forward(x.data, w.data, stride, pad)
    if b is not None:
        data = data + b.data[:, None, None]
    inputs = (x, w) if b is None else (x, w, b)
    if not (_grad_enabled and any(t.requires_grad for t in inputs)):
        return _plain(data)

    def backward(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad or w.requires_grad:
            gx, gw = kernels.conv2d_backward(x.data, w.data, g, stride, pad)
            if x.requires_grad:
                _accum(x, gx)
            if w.requires_grad:
                _accum(w, gw)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(1, 2)))

    return _make(data, inputs, backward)


def upsample2x(x):
    """Nearest-neighbour 2x upsampling of (C,H,W)."""
    data = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    if not (_grad_enabled and x.requires_grad):
        return _plain(data)
    c, h, w = x.shape

    def backward(g):
        _accum(x, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    return _make(data, (x,), backward)


def bilinear_sample(img, grid):
    """Sample (C,H,W) at normalized grid (h,w,2); border-clamped, differentiable.

    Coordinates are corner-aligned: -1 maps to index 0 and +1 to the last
    pixel on each axis.
    """
    if img.ndim != 3 or grid.ndim != 3 or grid.shape[-1] != 2:
        raise ShapeError("bilinear_sample: img %r, grid %r" % (img.shape, grid.shape))
    if not np.isfinite(grid.data).all():
        raise ValueError("bilinear_sample: grid contains non-finite values")
    data = kernels.bilinear_forward(img.data, grid.data)
    if not (_grad_enabled and (img.requires_grad or grid.requires_grad)):
        return _plain(data)

    def backward(g):
        gimg, ggrid = kernels.bilinear_backward(img.data, grid.data,
                                                np.ascontiguousarray(g))
        if img.requires_grad:
            _accum(img, gimg)
        if grid.requires_grad:
            _accum(grid, ggrid)

    return _make(data, (img, grid), backward)


_pe_cache = {}


def positional_embedding(L, d, dtype=np.float32):
    """Fixed sinusoidal table: PE[p,2i]=sin(p/10000^(2i/d)), PE[p,2i+1]=cos."""
    if d % 2 != 0:
        raise ShapeError("positional embedding dim must be even, got %d" % d)
    key = (L, d, np.dtype(dtype).name)
    cached = _pe_cache.get(key)
    if cached is None:
        pos = np.arange(L, dtype=np.float64)[:, None]
        i = np.arange(d // 2, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, 2.0 * i / d)
        pe = np.empty((L, d), dtype=np.float64)
        pe[:, 0::2] = np.sin(angle)
        pe[:, 1::2] = np.cos(angle)
        cached = pe.astype(dtype)
        _pe_cache[key] = cached
    return Tensor(cached)


def extract_patches(img, P):
    """(C,h,w) -> (T, C*P*P) rows of flattened non-overlapping P x P patches."""
    c, h, w = img.shape
    if h % P or w % P:
        raise ShapeError("patch size %d does not divide %dx%d" % (P, h, w))
    t = reshape(img, (c, h // P, P, w // P, P))
    t = transpose(t, (1, 3, 0, 2, 4))  # (h/P, w/P, C, P, P)
    return reshape(t, ((h // P) * (w // P), c * P * P))


def patch_embed(img, P, w, b=None):
    """Non-overlapping patch flattening followed by a linear projection."""
    return linear(extract_patches(img, P), w, b)


def l2norm_channels(x, eps=1e-12):
    """Normalize each channel column of (C,H,W) to unit L2 over axis 0.

    Columns with norm below eps pass through scaled by 1/eps, so exact
    zeros stay zero.
    """
    n = np.sqrt((x.data * x.data).sum(axis=0, keepdims=True))
    denom = np.maximum(n, eps)
    data = x.data / denom
    if not (_grad_enabled and x.requires_grad):
        return _plain(data)
    live = n > eps

    def backward(g):
        gx = g / denom
        corr = (g * x.data).sum(axis=0, keepdims=True) / (denom ** 3)
        gx = gx - np.where(live, corr, 0.0) * x.data
        _accum(x, gx)

    return _make(data, (x,), backward)


def finite_or_raise(t, what="tensor"):
    if not np.isfinite(t.data).all():
        raise ValueError("%s contains non-finite values" % what)
    return t
