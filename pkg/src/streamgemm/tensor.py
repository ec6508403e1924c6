"""FP32 tensor and matrix containers plus the layer-lowering kernels.

Everything here is a pure function over immutable values: tensors wrap
read-only float32 arrays in (n, c, h, w) order with w fastest, matrices
wrap read-only 2-D float32 arrays in row-major order.  The kernels
(im2col, col2im, activations, pooling, softmax) are the glue that turns
layer semantics into plain matrix multiplications.
"""

import struct

import numpy as np

from .errors import DimMismatch

_HEADER = struct.Struct("<4I")  # n, c, h, w

ACTIVATIONS = ("linear", "relu", "leaky", "logistic")

LEAKY_SLOPE = np.float32(0.1)


def _as_f32(data, shape=None):
    arr = np.asarray(data, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


class Tensor:
    """An (n, c, h, w) FP32 value. n is 1 everywhere in this package."""

    __slots__ = ("data",)

    def __init__(self, data, dims=None):
        arr = np.asarray(data, dtype=np.float32)
        if dims is not None:
            arr = arr.reshape(dims)
        if arr.ndim != 4:
            raise DimMismatch(f"tensor needs 4 dims, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimMismatch(f"tensor dims must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DimMismatch("tensor values must be finite")
        self.data = _as_f32(arr)

    @property
    def dims(self):
        return self.data.shape

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def c(self):
        return self.data.shape[1]

    @property
    def h(self):
        return self.data.shape[2]

    @property
    def w(self):
        return self.data.shape[3]

    def __repr__(self):
        return f"Tensor{self.dims}"


class Matrix:
    """A rows x cols FP32 value, row-major."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 2:
            raise DimMismatch(f"matrix needs 2 dims, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimMismatch(f"matrix dims must be positive, got {arr.shape}")
        self.data = _as_f32(arr)

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def __repr__(self):
        return f"Matrix({self.rows}x{self.cols})"


def conv_out_dim(in_dim, size, stride, pad):
    """Convolution output extent; raises unless it is integral and positive."""
    span = in_dim + 2 * pad - size
    if span < 0 or span % stride != 0:
        raise DimMismatch(
            f"conv geometry (in={in_dim}, size={size}, stride={stride}, pad={pad})"
            " gives a non-integral output dim"
        )
    return span // stride + 1


def _require_single(x):
    if x.n != 1:
        raise DimMismatch(f"op expects batch 1, got n={x.n}")


def im2col(x, size, stride, pad):
    """Unroll conv windows of a 1xCxHxW tensor into a (C*size*size, OH*OW) matrix.

    Row order is channel-major, then window row, then window column, so a
    filter tensor reshaped to (filters, C*size*size) lines up with it.
    Window positions that fall in the padding read as 0.0.
    """
    _require_single(x)
    c, h, w = x.c, x.h, x.w
    oh = conv_out_dim(h, size, stride, pad)
    ow = conv_out_dim(w, size, stride, pad)
    src = x.data[0]
    if pad:
        src = np.pad(src, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, size, size, oh, ow), dtype=np.float32)
    for ky in range(size):
        for kx in range(size):
            cols[:, ky, kx] = src[
                :,
                ky : ky + (oh - 1) * stride + 1 : stride,
                kx : kx + (ow - 1) * stride + 1 : stride,
            ]
    return Matrix(cols.reshape(c * size * size, oh * ow))


def col2im(m, c, h, w, size, stride, pad):
    """Scatter-add adjoint of im2col: rebuild a 1xCxHxW tensor from columns.

    Overlapping window contributions sum.  m must be the (C*size*size,
    OH*OW) matrix for the given geometry.
    """
    oh = conv_out_dim(h, size, stride, pad)
    ow = conv_out_dim(w, size, stride, pad)
    if m.rows != c * size * size or m.cols != oh * ow:
        raise DimMismatch(
            f"col2im expects {c * size * size}x{oh * ow} for this geometry,"
            f" got {m.rows}x{m.cols}"
        )
    cols = m.data.reshape(c, size, size, oh, ow)
    out = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    for ky in range(size):
        for kx in range(size):
            out[
                :,
                ky : ky + (oh - 1) * stride + 1 : stride,
                kx : kx + (ow - 1) * stride + 1 : stride,
            ] += cols[:, ky, kx]
    if pad:
        out = out[:, pad : pad + h, pad : pad + w]
    return Tensor(out[None])


def activate(x, kind):
    """Elementwise activation; kind is one of ACTIVATIONS."""
    v = x.data
    if kind == "linear":
        return x
    if kind == "relu":
        out = np.maximum(v, np.float32(0))
    elif kind == "leaky":
        out = np.where(v > 0, v, v * LEAKY_SLOPE)
    elif kind == "logistic":
        with np.errstate(over="ignore"):
            out = np.float32(1) / (np.float32(1) + np.exp(-v))
    else:
        raise ValueError(f"unknown activation kind '{kind}'")
    return Tensor(out)


def maxpool(x, size, stride, pad):
    """Window max with -inf padding.

    Output extent is floor((in + pad - size) / stride) + 1 and windows
    start at i*stride - pad//2, matching the asymmetric pad split used
    by Darknet-style pooling configs.
    """
    _require_single(x)
    if pad > size:
        raise DimMismatch(f"maxpool pad {pad} > size {size} leaves empty windows")
    c, h, w = x.c, x.h, x.w
    oh = (h + pad - size) // stride + 1
    ow = (w + pad - size) // stride + 1
    if oh < 1 or ow < 1:
        raise DimMismatch(f"maxpool window {size} does not fit input {h}x{w}")
    lo = pad // 2
    padded = np.full((c, h + pad, w + pad), -np.inf, dtype=np.float32)
    padded[:, lo : lo + h, lo : lo + w] = x.data[0]
    out = np.full((c, oh, ow), -np.inf, dtype=np.float32)
    for ky in range(size):
        for kx in range(size):
            np.maximum(
                out,
                padded[
                    :,
                    ky : ky + (oh - 1) * stride + 1 : stride,
                    kx : kx + (ow - 1) * stride + 1 : stride,
                ],
                out=out,
            )
    return Tensor(out[None])


def avgpool(x):
    """Global average pool: (1,c,h,w) -> (1,c,1,1)."""
    _require_single(x)
    return Tensor(x.data.mean(axis=(2, 3), keepdims=True))


def softmax(x):
    """Numerically-stable softmax over the channel axis of a 1xCx1x1 tensor."""
    _require_single(x)
    if x.h != 1 or x.w != 1:
        raise DimMismatch(f"softmax expects 1xCx1x1, got {x.dims}")
    v = x.data[0, :, 0, 0]
    e = np.exp(v - v.max())
    return Tensor((e / e.sum()).reshape(1, x.c, 1, 1))


def write_tensor(path, x):
    """Write a tensor as a 16-byte u32-LE dims header plus FP32-LE payload."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*x.dims))
        fh.write(np.ascontiguousarray(x.data, dtype="<f4").tobytes())


def read_tensor(path):
    """Read a tensor written by write_tensor."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DimMismatch(f"tensor file {path} shorter than its header")
    dims = _HEADER.unpack_from(raw)
    count = int(np.prod([max(d, 1) for d in dims]))
    expected = _HEADER.size + 4 * count
    if min(dims) < 1 or len(raw) != expected:
        raise DimMismatch(
            f"tensor file {path}: header {dims} does not match {len(raw)} bytes"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return Tensor(data.astype(np.float32), dims)
