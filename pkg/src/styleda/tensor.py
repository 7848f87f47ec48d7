"""Dense-array substrate shared by every other module.

Arrays are plain ``numpy.ndarray`` objects; this module adds the handful of
operations the models need with explicit shape checks, a finiteness guard,
and a splittable seeded generator.
"""

from __future__ import annotations

import zlib

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    """Raised when a computation produces NaN or Inf."""


def check_finite(x, what="value"):
    arr = np.asarray(x)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite {what}")
    return x


def matmul(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "matmul result")


def conv_output_size(size, k, stride, padding):
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"non-integral output extent: ({size}+2*{padding}-{k})/{stride}+1"
        )
    return span // stride + 1


def _im2col(x, k, stride, padding):
    """Columns of shape (C*k*k, N*Ho*Wo) for a batched N×C×H×W input."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    xp = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=DTYPE)
    xp[:, :, padding : padding + h, padding : padding + w] = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, ho, wo), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(c * k * k, n * ho * wo), (ho, wo)


def conv2d_cols(x, kernels, stride=1, padding=0):
    """Batched convolution that also returns the im2col matrix for reuse."""
    c_out, c_in, k, _ = kernels.shape
    n = x.shape[0]
    cols, (ho, wo) = _im2col(x, k, stride, padding)
    out = kernels.reshape(c_out, -1) @ cols
    return np.ascontiguousarray(out.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)), cols


def conv2d(x, kernels, stride=1, padding=0):
    """Cross-correlation of ``x`` with ``kernels``.

    ``x`` is ``C×H×W`` or a batch ``N×C×H×W``; ``kernels`` is
    ``C_out×C_in×k×k`` with odd ``k``.
    """
    x = np.asarray(x, dtype=DTYPE)
    kernels = np.asarray(kernels, dtype=DTYPE)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError("conv2d expects C×H×W (or N×C×H×W) input and 4-D kernels")
    c_out, c_in, k, k2 = kernels.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {k}×{k2}")
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, kernels expect {c_in}")
    out, _ = conv2d_cols(x, kernels, stride, padding)
    return out[0] if single else out


def conv2d_backward(x, kernels, grad_out, stride=1, padding=0, cols=None, input_grad=True):
    """Gradients of ``sum(grad_out * conv2d(x, kernels))`` w.r.t. x and kernels.

    Batched shapes only: ``x`` is N×C×H×W and ``grad_out`` is N×C_out×Ho×Wo.
    ``cols`` may pass the im2col matrix saved by :func:`conv2d_cols`.
    """
    c_out, c_in, k, _ = kernels.shape
    n, c, h, w = x.shape
    ho, wo = grad_out.shape[2:]
    if cols is None:
        cols, _ = _im2col(x, k, stride, padding)
    g = grad_out.transpose(1, 0, 2, 3).reshape(c_out, -1)
    grad_k = (g @ cols.T).reshape(kernels.shape)
    if not input_grad:
        return None, grad_k
    dcols = (kernels.reshape(c_out, -1).T @ g).reshape(c, k, k, n, ho, wo)
    dxp = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
    dx = dxp[:, :, padding : padding + h, padding : padding + w].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dx), grad_k


def logsumexp(v, axis=None, keepdims=False):
    """``log(sum(exp(v)))`` along ``axis`` with max-subtraction."""
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise ShapeError("logsumexp over an empty axis")
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):  # all -inf along the axis gives -inf
        out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=DTYPE)
    return np.exp(v - logsumexp(v, axis=axis, keepdims=True))


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(z):
    z = np.asarray(z, dtype=DTYPE)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class Rng:
    """Seeded counter-based generator that splits into named child streams.

    ``Rng(7).child("init")`` and ``Rng(7).child("shuffle")`` are independent
    and each is reproducible on its own, so adding draws to one stream never
    perturbs another.
    """

    def __init__(self, seed, _key=()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = tuple(_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *names):
        key = self._key
        for name in names:
            if isinstance(name, int):
                key += (name & 0xFFFFFFFF,)
            else:
                key += (zlib.crc32(str(name).encode()),)
        return Rng(self.seed, key)

    def normal(self, size=None, scale=1.0):
        return self.gen.normal(0.0, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def random(self, size=None):
        return self.gen.random(size)
