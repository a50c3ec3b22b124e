"""Small reverse-mode automatic differentiation over real and complex arrays.

Each Tensor records its parents and a closure that pushes its gradient to
them. backward() walks every node reachable from the output in reverse
creation order, so each node is processed exactly once after all of its
consumers.

Complex gradients use the real-pair convention: the gradient of a real
loss L with respect to z is dL/dRe(z) + i dL/dIm(z).
"""

import itertools
import math

import numpy as np

from .errors import ConfigError, ShapeError

_ids = itertools.count()


def _as_array(x):
    a = np.asarray(x)
    if np.iscomplexobj(a):
        return a.astype(np.complex128, copy=False)
    return a.astype(np.float64, copy=False)


def _unbroadcast(g, shape, real):
    """Sum g down to `shape` (undoing numpy broadcasting) and drop Im for real targets."""
    if real and np.iscomplexobj(g):
        g = g.real
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __slots__ = ("value", "_grad", "parents", "_backward", "id", "name")

    def __init__(self, value, parents=(), backward=None, name=None):
        self.value = _as_array(value)
        self._grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.id = next(_ids)
        self.name = name

    # -- basic properties --
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_complex(self):
        return np.iscomplexobj(self.value)

    @property
    def grad(self):
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    def zero_grad(self):
        self._grad = None

    def _accum(self, g):
        g = _unbroadcast(g, self.value.shape, not self.is_complex)
        if self._grad is None:
            self._grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self._grad = self._grad + g

    def numpy(self):
        return self.value

    def item(self):
        return self.value.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.value.dtype})"

    # -- operator sugar --
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Tensor):
            return mul(self, reciprocal(o))
        return scale(self, 1.0 / o)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def tensor(x, name=None):
    """Leaf tensor."""
    return Tensor(x, name=name)


def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _node(value, parents, backward):
    return Tensor(value, parents, backward)


def backward(out, grad=None):
    """Populate .grad on every tensor that `out` depends on."""
    if grad is None:
        if out.value.size != 1:
            raise ShapeError("backward requires a scalar output", out.shape)
        grad = np.ones_like(out.value)
    order = []
    seen = set()
    stack = [out]
    while stack:
        n = stack.pop()
        if n.id in seen:
            continue
        seen.add(n.id)
        order.append(n)
        stack.extend(n.parents)
    order.sort(key=lambda n: n.id, reverse=True)
    for n in order:
        n._grad = None
    out._grad = np.array(grad, dtype=out.value.dtype)
    for n in order:
        if n._backward is not None and n._grad is not None:
            n._backward(n._grad)
    return out


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast("add", a, b)

    def bw(g):
        a._accum(g)
        b._accum(g)
    return _node(a.value + b.value, (a, b), bw)


def sub(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        a._accum(g)
        b._accum(-g)
    return _node(a.value - b.value, (a, b), bw)


def mul(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        a._accum(g * np.conj(b.value))
        b._accum(g * np.conj(a.value))
    return _node(a.value * b.value, (a, b), bw)


def scale(a, c):
    """Multiply by a constant (real or complex) scalar or array."""
    c = np.asarray(c)

    def bw(g):
        a._accum(g * np.conj(c))
    return _node(a.value * c, (a,), bw)


def reciprocal(a):
    v = 1.0 / a.value

    def bw(g):
        a._accum(-g * np.conj(v * v))
    return _node(v, (a,), bw)


def square(a):
    def bw(g):
        a._accum(2.0 * g * np.conj(a.value))
    return _node(a.value * a.value, (a,), bw)


def power(a, p):
    """a ** p for real a and constant p."""
    v = a.value ** p

    def bw(g):
        a._accum(g * p * a.value ** (p - 1))
    return _node(v, (a,), bw)


def sqrt(a):
    v = np.sqrt(a.value)

    def bw(g):
        a._accum(g * 0.5 / np.conj(v))
    return _node(v, (a,), bw)


def tanh(a):
    v = np.tanh(a.value)

    def bw(g):
        a._accum(g * (1.0 - v * v))
    return _node(v, (a,), bw)


def logistic(a):
    v = 0.5 * (1.0 + np.tanh(0.5 * a.value))

    def bw(g):
        a._accum(g * v * (1.0 - v))
    return _node(v, (a,), bw)


def exp(a):
    v = np.exp(a.value)

    def bw(g):
        a._accum(g * np.conj(v))
    return _node(v, (a,), bw)


def log(a):
    def bw(g):
        a._accum(g / np.conj(a.value))
    return _node(np.log(a.value), (a,), bw)


def sin(a):
    def bw(g):
        a._accum(g * np.cos(a.value))
    return _node(np.sin(a.value), (a,), bw)


def cos(a):
    def bw(g):
        a._accum(-g * np.sin(a.value))
    return _node(np.cos(a.value), (a,), bw)


def abs_(a):
    """|a| for real a; the derivative at 0 is taken as 0."""
    def bw(g):
        a._accum(g * np.sign(a.value))
    return _node(np.abs(a.value), (a,), bw)


# -- complex helpers --------------------------------------------------------

def real(a):
    def bw(g):
        a._accum(np.real(g).astype(complex) if a.is_complex else np.real(g))
    return _node(np.real(a.value).copy(), (a,), bw)


def imag(a):
    def bw(g):
        if a.is_complex:
            a._accum(1j * np.real(g))
    return _node(np.imag(a.value).copy(), (a,), bw)


def conj(a):
    def bw(g):
        a._accum(np.conj(g))
    return _node(np.conj(a.value), (a,), bw)


def complex_(re, im):
    re, im = _t(re), _t(im)

    def bw(g):
        re._accum(np.real(g))
        im._accum(np.imag(g))
    return _node(re.value + 1j * im.value, (re, im), bw)


def abs2(a):
    """|a|^2, real output."""
    def bw(g):
        a._accum(2.0 * np.real(g) * a.value)
    return _node(np.real(a.value * np.conj(a.value)), (a,), bw)


# -- reductions and shape ops ----------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))
    return _node(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False):
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    def bw(g):
        a._accum(np.reshape(g, a.shape))
    return _node(np.reshape(a.value, shape), (a,), bw)


def swapaxes(a, i, j):
    def bw(g):
        a._accum(np.swapaxes(g, i, j))
    return _node(np.swapaxes(a.value, i, j), (a,), bw)


def getitem(a, idx):
    def bw(g):
        full = np.zeros_like(a.value, dtype=np.result_type(a.value, g))
        np.add.at(full, idx, g)
        a._accum(full)
    return _node(a.value[idx], (a,), bw)


def concat(items, axis=0):
    items = [_t(x) for x in items]
    sizes = [x.shape[axis] for x in items]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for x, lo, hi in zip(items, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            x._accum(g[tuple(sl)])
    return _node(np.concatenate([x.value for x in items], axis=axis), items, bw)


def stack(items, axis=0):
    items = [_t(x) for x in items]

    def bw(g):
        for i, x in enumerate(items):
            x._accum(np.take(g, i, axis=axis))
    return _node(np.stack([x.value for x in items], axis=axis), items, bw)


def pad_axis(a, before, after, axis):
    """Zero padding along one axis."""
    if before == 0 and after == 0:
        return a
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(before, before + a.shape[axis])
    sl = tuple(sl)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)

    def bw(g):
        a._accum(g[sl])
    return _node(np.pad(a.value, widths), (a,), bw)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b):
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul (operands must be at least 2-D)", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        a._accum(g @ np.conj(np.swapaxes(b.value, -1, -2)))
        b._accum(np.conj(np.swapaxes(a.value, -1, -2)) @ g)
    return _node(a.value @ b.value, (a, b), bw)


# -- discrete Fourier transform ---------------------------------------------------

_DFT_CACHE = {}


def _bit_reverse(s):
    bits = s.bit_length() - 1
    idx = np.arange(s)
    rev = np.zeros(s, dtype=int)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_last(x, inverse):
    """Unnormalized transform along the last axis; sign -1 forward, +1 inverse."""
    x = np.asarray(x, dtype=complex)
    s = x.shape[-1]
    sign = 1.0 if inverse else -1.0
    if s & (s - 1) == 0:
        a = x[..., _bit_reverse(s)]
        lead = a.shape[:-1]
        m = 1
        while m < s:
            w = np.exp(sign * 1j * np.pi * np.arange(m) / m)
            a = a.reshape(lead + (s // (2 * m), 2, m))
            even = a[..., 0, :]
            odd = a[..., 1, :] * w
            a = np.concatenate([even + odd, even - odd], axis=-1)
            m *= 2
        return a.reshape(lead + (s,))
    key = (s, inverse)
    if key not in _DFT_CACHE:
        j = np.arange(s)
        _DFT_CACHE[key] = np.exp(sign * 2j * np.pi * np.outer(j, j) / s)
    return x @ _DFT_CACHE[key]


def fft_raw(x, axis=-1, inverse=False):
    """Plain array transform (no tape): radix-2 for powers of two, O(s^2) otherwise."""
    x = np.moveaxis(np.asarray(x), axis, -1)
    return np.moveaxis(_fft_last(x, inverse), -1, axis)


def dft(a, axis=-1):
    """Unnormalized forward DFT, exp(-2 pi i j m / s)."""
    def bw(g):
        a._accum(fft_raw(g, axis, inverse=True))
    return _node(fft_raw(a.value, axis), (a,), bw)


def idft(a, axis=-1, normalized=False):
    """Inverse DFT, exp(+2 pi i j m / s); divided by s when normalized."""
    s = a.shape[axis]
    c = 1.0 / s if normalized else 1.0

    def bw(g):
        a._accum(c * fft_raw(g, axis))
    return _node(c * fft_raw(a.value, axis, inverse=True), (a,), bw)


# -- gradient checking ------------------------------------------------------------

def gradcheck(f, inputs, h=1e-6, max_coords=1000, rng=None, kink_tol=None):
    """Largest relative error between reverse-mode and central-difference gradients.

    f maps a list of leaf Tensors to a scalar Tensor. For real inputs with more
    than `max_coords` entries, random probe directions replace per-coordinate
    differences. If kink_tol is given, coordinates whose value lies within it
    of 0 are skipped (non-differentiable point of |x|).
    Returns the error; a perfect match gives 0.
    """
    rng = rng or np.random.default_rng(0)
    leaves = [tensor(np.array(x.value if isinstance(x, Tensor) else x, copy=True)) for x in inputs]
    out = f(leaves)
    backward(out)
    analytic = [lf.grad.copy() for lf in leaves]
    base = [lf.value.copy() for lf in leaves]

    def evaluate(vals):
        return float(np.real(f([tensor(v) for v in vals]).value))

    num, ana = [], []
    total = sum(b.size for b in base)
    for i, b in enumerate(base):
        parts = [(1.0, analytic[i].real if np.iscomplexobj(b) else analytic[i])]
        if np.iscomplexobj(b):
            parts.append((1j, analytic[i].imag))
        for unit, agrad in parts:
            if total <= max_coords:
                for idx in np.ndindex(b.shape):
                    if kink_tol is not None and abs(b[idx]) < kink_tol:
                        continue
                    vp = [x.copy() for x in base]
                    vm = [x.copy() for x in base]
                    vp[i][idx] += unit * h
                    vm[i][idx] -= unit * h
                    num.append((evaluate(vp) - evaluate(vm)) / (2 * h))
                    ana.append(agrad[idx])
            else:
                for _ in range(8):
                    d = rng.standard_normal(b.shape)
                    vp = [x.copy() for x in base]
                    vm = [x.copy() for x in base]
                    vp[i] = vp[i] + unit * h * d
                    vm[i] = vm[i] - unit * h * d
                    num.append((evaluate(vp) - evaluate(vm)) / (2 * h))
                    ana.append(float(np.sum(agrad * d)))
    num, ana = np.array(num), np.array(ana)
    if num.size == 0:
        return 0.0
    scale_ = max(np.max(np.abs(num)), np.max(np.abs(ana)), 1e-300)
    return float(np.max(np.abs(num - ana)) / scale_)
