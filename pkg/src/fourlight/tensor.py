"""Dense float64 tensors with a reverse-mode differentiation tape.

Tensors are immutable values wrapping numpy arrays. When a Tape is active,
every primitive records enough to replay the chain rule backwards, one node
per primitive (conv, activation, matmul, FFT, reductions). The tape is
single-writer: one active tape per process, confined to the training thread.
"""

import dataclasses

import numpy as np


class ShapeError(ValueError):
    """Raised when operand dimensions do not match an operation's contract."""


class NumericError(ArithmeticError):
    """Raised when a non-finite value appears where finite data is required."""


# ---------------------------------------------------------------------------
# Tensor and tape
# ---------------------------------------------------------------------------

_active_tape = None


class Tensor:
    """Immutable dense array of float64 scalars.

    ``grad_id`` links the value into the active differentiation tape; it is
    None for values created outside any tape or under no tape at all.
    """

    __slots__ = ("_data", "_tape", "_node")

    def __init__(self, data, _owned=False):
        arr = np.asarray(data, dtype=np.float64)
        if not _owned and arr.flags.writeable:
            arr = arr.copy()
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor contains NaN or Inf")
        arr.flags.writeable = False
        self._data = arr
        self._tape = None
        self._node = None

    @property
    def data(self):
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def ndim(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    @property
    def grad_id(self):
        if self._tape is not None and self._tape is _active_tape:
            return self._node
        return None

    def item(self):
        return float(self._data)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def tensor(data):
    return Tensor(data)


def zeros(shape):
    return Tensor(np.zeros(shape), _owned=True)


def ones(shape):
    return Tensor(np.ones(shape), _owned=True)


class Tape:
    """Append-only record of primitive operations for reverse accumulation."""

    def __init__(self):
        # each node: (parent ids tuple, backward fn or None for leaves)
        self.nodes = []

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_tape
        _active_tape = None
        return False

    def _add(self, parents, backward_fn):
        self.nodes.append((parents, backward_fn))
        return len(self.nodes) - 1

    def watch(self, t):
        """Register ``t`` as a differentiable leaf of this tape."""
        if t._tape is self and t._node is not None:
            return t
        t._tape = self
        t._node = self._add((), None)
        return t

    def backward(self, loss):
        """Accumulate adjoints of ``loss`` w.r.t. every recorded value."""
        if loss.shape != ():
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        if loss._tape is not self or loss._node is None:
            raise ValueError("loss is not recorded on this tape")
        adjoints = [None] * len(self.nodes)
        owned = [False] * len(self.nodes)
        adjoints[loss._node] = np.ones(())
        for node_id in range(loss._node, -1, -1):
            adj = adjoints[node_id]
            if adj is None:
                continue
            parents, backward_fn = self.nodes[node_id]
            if backward_fn is None:
                continue
            for pid, contrib in zip(parents, backward_fn(adj)):
                if pid is None or contrib is None:
                    continue
                if adjoints[pid] is None:
                    adjoints[pid] = contrib
                elif owned[pid]:
                    adjoints[pid] += contrib
                else:
                    # first stored contribution may alias another adjoint
                    adjoints[pid] = adjoints[pid] + contrib
                    owned[pid] = True
        return Adjoints(self, adjoints)


class Adjoints:
    """Result of a backward pass: one adjoint per reached tape node."""

    def __init__(self, tape, values):
        self._tape = tape
        self._values = values

    def get(self, t):
        """Adjoint of the loss w.r.t. ``t`` (zeros if the loss never saw it)."""
        if t._tape is not self._tape or t._node is None:
            raise ValueError("value is not on the differentiated tape")
        adj = self._values[t._node]
        if adj is None:
            return np.zeros(t.shape)
        return np.broadcast_to(adj, t.shape) if adj.shape != t.shape else adj


def backward(tape, loss):
    """Reverse accumulation through ``tape``; see Tape.backward."""
    return tape.backward(loss)


def _record(out_arr, parents, backward_fn):
    t = Tensor(out_arr, _owned=True)
    tape = _active_tape
    if tape is None:
        return t
    pids = tuple(p._node if p._tape is tape else None for p in parents)
    if all(pid is None for pid in pids):
        return t
    t._tape = tape
    t._node = tape._add(pids, backward_fn)
    return t


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------

def add(a, b):
    _check_same_shape(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same_shape(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(a):
    return _record(-a.data, (a,), lambda g: (-g,))


def scale(a, s):
    s = float(s)
    return _record(a.data * s, (a,), lambda g: (g * s,))


def add_scalar(a, s):
    s = float(s)
    return _record(a.data + s, (a,), lambda g: (g,))


def square(a):
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def absolute(a):
    ad = a.data
    return _record(np.abs(ad), (a,), lambda g: (np.sign(ad) * g,))


def sin(a):
    ad = a.data
    return _record(np.sin(ad), (a,), lambda g: (np.cos(ad) * g,))


def cos(a):
    ad = a.data
    return _record(np.cos(ad), (a,), lambda g: (-np.sin(ad) * g,))


def hypot(a, b):
    """sqrt(a^2 + b^2) with a zero subgradient at the origin."""
    _check_same_shape(a, b, "hypot")
    ad, bd = a.data, b.data
    out = np.sqrt(ad * ad + bd * bd)

    def bw(g):
        safe = np.where(out > 0.0, out, 1.0)
        mask = out > 0.0
        return (np.where(mask, g * ad / safe, 0.0),
                np.where(mask, g * bd / safe, 0.0))

    return _record(out, (a, b), bw)


def atan2(im, re):
    """Full-quadrant angle of (re, im); (0, 0) maps to 0 with zero gradient."""
    _check_same_shape(im, re, "atan2")
    imd, red = im.data, re.data
    r2 = red * red + imd * imd

    def bw(g):
        safe = np.where(r2 > 0.0, r2, 1.0)
        mask = r2 > 0.0
        return (np.where(mask, g * red / safe, 0.0),
                np.where(mask, g * -imd / safe, 0.0))

    return _record(np.arctan2(imd, red), (im, re), bw)


def sigmoid(a):
    # tanh formulation is stable for arbitrarily large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a, slope=0.2):
    ad = a.data
    # max(x, slope*x) equals leaky relu for slopes in [0, 1]
    out = np.maximum(ad, ad * slope)
    return _record(out, (a,), lambda g: (np.where(ad < 0.0, g * slope, g),))


def softmax_rows(a):
    """Softmax along the last axis (rows of a matrix), stable via max shift."""
    if a.ndim < 2:
        raise ShapeError(f"softmax_rows expects at least 2 dims, got {a.shape}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _record(out, (a,), bw)


# ---------------------------------------------------------------------------
# Shape and structure primitives
# ---------------------------------------------------------------------------

def reshape(a, shape):
    shape = tuple(shape)
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose2(a):
    if a.ndim != 2:
        raise ShapeError(f"transpose2 expects a 2-D matrix, got {a.shape}")
    return _record(a.data.T, (a,), lambda g: (g.T,))


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def bmm(a, b):
    """Batched matmul of 3-D tensors: (B,M,K) @ (B,K,N) -> (B,M,N)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] \
            or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record(np.matmul(ad, bd), (a, b),
                   lambda g: (np.matmul(g, bd.transpose(0, 2, 1)),
                              np.matmul(ad.transpose(0, 2, 1), g)))


def transpose_last2(a):
    """Swap the two trailing axes of a 3-D tensor."""
    if a.ndim != 3:
        raise ShapeError(f"transpose_last2 expects 3-D, got {a.shape}")
    return _record(np.ascontiguousarray(a.data.transpose(0, 2, 1)), (a,),
                   lambda g: (np.ascontiguousarray(g.transpose(0, 2, 1)),))


def slice_axis(a, axis, lo, hi):
    idx = tuple(slice(None) if d != axis else slice(lo, hi)
                for d in range(a.ndim))
    full_shape = a.shape

    def bw(g):
        out = np.zeros(full_shape)
        out[idx] = g
        return (out,)

    return _record(a.data[idx], (a,), bw)


def concat(parts, axis=1):
    parts = list(parts)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            g[tuple(slice(None) if d != axis else slice(offsets[i], offsets[i + 1])
                    for d in range(g.ndim))]
            for i in range(len(parts)))

    return _record(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw)


def upsample2(a):
    """Nearest-neighbour 2x upsampling of the two trailing spatial axes."""
    if a.ndim != 4:
        raise ShapeError(f"upsample2 expects BCHW, got {a.shape}")
    out = a.data.repeat(2, axis=2).repeat(2, axis=3)
    B, C, H, W = a.shape

    def bw(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return _record(out, (a,), bw)


def sum_all(a):
    shape = a.shape
    return _record(np.asarray(a.data.sum()), (a,),
                   lambda g: (np.broadcast_to(g, shape),))


def mean_all(a):
    shape = a.shape
    n = float(a.size)
    return _record(np.asarray(a.data.mean()), (a,),
                   lambda g: (np.broadcast_to(g / n, shape),))


def clip01(a):
    """Clamp to [0, 1] for image emission. Not differentiable, never taped."""
    return Tensor(np.clip(a.data, 0.0, 1.0), _owned=True)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class ConvSpec:
    """One convolutional unit: kernel (out_ch, in_ch, k, k), bias (out_ch).

    Cross-correlation semantics with zero padding; kernels are square and odd.
    """

    kernel: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel.ndim != 4 or self.kernel.shape[2] != self.kernel.shape[3]:
            raise ShapeError(f"kernel must be (out,in,k,k), got {self.kernel.shape}")
        if self.kernel.shape[2] % 2 != 1:
            raise ShapeError(f"kernel size must be odd, got {self.kernel.shape[2]}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match "
                             f"{self.kernel.shape[0]} output channels")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError("stride must be >= 1 and padding >= 0")


_einsum_paths = {}


def _einsum(subscripts, *operands):
    """einsum with the contraction path memoized per (subscripts, shapes)."""
    key = (subscripts, tuple(op.shape for op in operands))
    path = _einsum_paths.get(key)
    if path is None:
        path = np.einsum_path(subscripts, *operands, optimize="optimal")[0]
        _einsum_paths[key] = path
    return np.einsum(subscripts, *operands, optimize=path)


def conv2d(x, spec):
    """2-D cross-correlation of a BCHW tensor with zero padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects BCHW input, got {x.shape}")
    kernel, bias = spec.kernel, spec.bias
    O, Ci, k, _ = kernel.shape
    B, C, H, W = x.shape
    if C != Ci:
        raise ShapeError(f"conv2d: input has {C} channels, kernel expects {Ci}")
    stride, pad = spec.stride, spec.padding
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: {H}x{W} input too small for k={k}, pad={pad}")

    if k == 1 and pad == 0:
        # pointwise conv is a batched channel matmul
        xd = x.data[:, :, ::stride, ::stride]
        kd = kernel.data.reshape(O, Ci)
        flat = np.ascontiguousarray(xd).reshape(B, C, Ho * Wo)
        out = np.matmul(kd, flat).reshape(B, O, Ho, Wo)
        out += bias.data[None, :, None, None]

        def bw1(g):
            gflat = g.reshape(B, O, Ho * Wo)
            gx_s = np.matmul(kd.T, gflat).reshape(B, C, Ho, Wo)
            if stride == 1:
                gx = gx_s
            else:
                gx = np.zeros((B, C, H, W))
                gx[:, :, ::stride, ::stride] = gx_s
            gk = np.matmul(gflat, flat.transpose(0, 2, 1)).sum(axis=0)
            gb = g.sum(axis=(0, 2, 3))
            return (gx, gk.reshape(O, Ci, 1, 1), gb)

        return _record(out, (x, kernel, bias), bw1)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # B,C,Ho,Wo,k,k
    out = _einsum("bcijmn,ocmn->boij", windows, kernel.data)
    out += bias.data[None, :, None, None]
    Hp, Wp = xp.shape[2], xp.shape[3]

    def bw(g):
        gk = _einsum("boij,bcijmn->ocmn", g, windows)
        gcols = _einsum("boij,ocmn->bcijmn", g, kernel.data)
        gxp = np.zeros((B, C, Hp, Wp))
        for m in range(k):
            for n in range(k):
                gxp[:, :, m:m + stride * Ho:stride,
                    n:n + stride * Wo:stride] += gcols[:, :, :, :, m, n]
        gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        gb = g.sum(axis=(0, 2, 3))
        return (gx, gk, gb)

    return _record(out, (x, kernel, bias), bw)


# ---------------------------------------------------------------------------
# Orthonormal 2-D DFT primitives (per batch item and channel)
# ---------------------------------------------------------------------------

def dft2(x):
    """Forward orthonormal DFT; returns (B, 2C, H, W) with re then im halves."""
    if x.ndim != 4:
        raise ShapeError(f"dft2 expects BCHW input, got {x.shape}")
    C = x.shape[1]
    spec = np.fft.fft2(x.data, norm="ortho")
    out = np.concatenate([spec.real, spec.imag], axis=1)

    def bw(g):
        gc = g[:, :C] + 1j * g[:, C:]
        return (np.ascontiguousarray(np.fft.ifft2(gc, norm="ortho").real),)

    return _record(out, (x,), bw)


def idft2_real(z):
    """Real part of the inverse orthonormal DFT of stacked (re, im) channels."""
    if z.ndim != 4 or z.shape[1] % 2 != 0:
        raise ShapeError(f"idft2_real expects (B,2C,H,W), got {z.shape}")
    C = z.shape[1] // 2
    zc = z.data[:, :C] + 1j * z.data[:, C:]
    out = np.ascontiguousarray(np.fft.ifft2(zc, norm="ortho").real)

    def bw(g):
        spec = np.fft.fft2(g, norm="ortho")
        return (np.concatenate([spec.real, spec.imag], axis=1),)

    return _record(out, (z,), bw)


# ---------------------------------------------------------------------------
# Parameter discovery over network containers
# ---------------------------------------------------------------------------

def named_parameters(obj, prefix=""):
    """List (name, Tensor) leaves of a network container in declaration order.

    Walks dataclasses, lists and tuples; non-tensor fields are skipped.
    """
    out = []
    if isinstance(obj, Tensor):
        out.append((prefix, obj))
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            out.extend(named_parameters(getattr(obj, f.name), name))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.extend(named_parameters(item, f"{prefix}.{i}" if prefix else str(i)))
    return out


def set_parameter(obj, name, value):
    """Rebind the named parameter leaf inside a network container."""
    parts = name.split(".")
    for part in parts[:-1]:
        obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
    last = parts[-1]
    if isinstance(obj, list):
        obj[int(last)] = value
    else:
        setattr(obj, last, value)
