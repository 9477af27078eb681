"""Dense NCHW tensor primitives with analytic backward passes.

Tensors are plain ``numpy.ndarray`` objects of shape (n, c, h, w). Training
runs in float32; passing float64 arrays through the same functions gives the
64-bit mode used for gradient checking. Convolutions are same-size, stride 1,
zero padded, and are computed as an explicit patch-matrix product.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernels import im2col

DEBUG = os.environ.get("DEGREE_SR_DEBUG", "") not in ("", "0")


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(FloatingPointError):
    """A gradient or activation contained NaN or inf."""


def check_tensor(t: np.ndarray, op: str = "tensor") -> np.ndarray:
    if t.ndim != 4 or min(t.shape) < 1:
        raise ShapeError(op, t.shape, detail="expected 4-D (n, c, h, w) with all extents >= 1")
    if DEBUG and np.isnan(t).any():
        raise NonFiniteError(f"{op}: NaN in tensor")
    return t


@dataclass
class ConvParams:
    """Weights (c_out, c_in, k, k), bias (c_out,) and their momentum buffers."""

    weights: np.ndarray
    bias: np.ndarray
    w_velocity: np.ndarray = field(default=None, repr=False)
    b_velocity: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError("ConvParams", self.weights.shape, detail="weights must be (c_out, c_in, k, k)")
        if self.weights.shape[2] % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {self.weights.shape[2]}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("ConvParams", self.weights.shape, self.bias.shape, detail="bias length != c_out")
        if self.w_velocity is None:
            self.w_velocity = np.zeros_like(self.weights)
        if self.b_velocity is None:
            self.b_velocity = np.zeros_like(self.bias)
        if self.w_velocity.shape != self.weights.shape or self.b_velocity.shape != self.bias.shape:
            raise ShapeError("ConvParams", self.w_velocity.shape, self.weights.shape, detail="velocity mismatch")

    @classmethod
    def he_normal(cls, c_in: int, c_out: int, k: int, rng: np.random.Generator, dtype=np.float32):
        """Zero-mean Gaussian weights with std sqrt(2 / (k*k*c_in)), zero bias."""
        std = np.sqrt(2.0 / (k * k * c_in))
        w = rng.standard_normal((c_out, c_in, k, k)) * std
        return cls(w.astype(dtype), np.zeros(c_out, dtype=dtype))

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[2]

    def astype(self, dtype) -> "ConvParams":
        return ConvParams(
            self.weights.astype(dtype),
            self.bias.astype(dtype),
            self.w_velocity.astype(dtype),
            self.b_velocity.astype(dtype),
        )

    def copy(self) -> "ConvParams":
        return self.astype(self.weights.dtype)


def conv2d_forward(x: np.ndarray, params: ConvParams, padding: int | None = None, cols=None) -> np.ndarray:
    check_tensor(x, "conv2d_forward")
    k = params.k
    if padding is not None and padding != (k - 1) // 2:
        raise ValueError(f"padding must be (k-1)/2 = {(k - 1) // 2}, got {padding}")
    n, c, h, w = x.shape
    if c != params.c_in:
        raise ShapeError("conv2d_forward", x.shape, params.weights.shape, detail="input channels != c_in")
    if cols is None:
        cols = im2col(x, k)
    out = params.weights.reshape(params.c_out, -1) @ cols
    out += params.bias[:, None]
    out = out.reshape(params.c_out, n, h, w).transpose(1, 0, 2, 3)
    return check_tensor(np.ascontiguousarray(out), "conv2d_forward")


def conv2d_backward(x: np.ndarray, params: ConvParams, grad_out: np.ndarray, cols=None, need_input_grad: bool = True):
    """Gradients of sum(grad_out * conv2d_forward(x)) w.r.t. input, weights and bias.

    ``cols`` may carry the forward patch matrix to skip recomputing it.
    ``need_input_grad=False`` returns None for the input gradient.
    """
    n, c, h, w = x.shape
    expected = (n, params.c_out, h, w)
    if grad_out.shape != expected:
        raise ShapeError("conv2d_backward", grad_out.shape, expected, detail="grad_out vs forward output")
    if c != params.c_in:
        raise ShapeError("conv2d_backward", x.shape, params.weights.shape, detail="input channels != c_in")
    k = params.k
    g = grad_out.transpose(1, 0, 2, 3).reshape(params.c_out, -1)
    grad_b = g.sum(axis=1)
    if cols is None:
        cols = im2col(x, k)
    grad_w = (g @ cols.T).reshape(params.weights.shape)
    grad_x = None
    if need_input_grad:
        # Full correlation of grad_out with the spatially flipped, channel-transposed kernel.
        w_adj = np.ascontiguousarray(params.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gcols = im2col(grad_out, k)
        grad_x = (w_adj.reshape(c, -1) @ gcols).reshape(c, n, h, w).transpose(1, 0, 2, 3)
        grad_x = np.ascontiguousarray(grad_x)
    return grad_x, grad_w, grad_b


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Subgradient 0 at exactly 0."""
    if x.shape != grad_out.shape:
        raise ShapeError("relu_backward", x.shape, grad_out.shape)
    return np.where(x > 0, grad_out, np.zeros((), dtype=grad_out.dtype))


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    return a + b


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != 4 or (p.shape[0], p.shape[2], p.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError("concat_channels", ref, p.shape, detail="n, h, w must agree")
    return np.concatenate(parts, axis=1)


def slice_channels(t: np.ndarray, start: int, stop: int) -> np.ndarray:
    if not 0 <= start < stop <= t.shape[1]:
        raise ShapeError("slice_channels", t.shape, detail=f"channel range [{start}, {stop}) out of bounds")
    return t[:, start:stop].copy()


def split_channels(grad: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    """Adjoint of concat_channels: route a gradient back to each part."""
    if sum(sizes) != grad.shape[1]:
        raise ShapeError("split_channels", grad.shape, detail=f"sizes {list(sizes)} do not sum to c")
    return np.split(grad, np.cumsum(sizes)[:-1], axis=1)


def slice_channels_backward(grad: np.ndarray, c: int, start: int) -> np.ndarray:
    """Adjoint of slice_channels: scatter into zeros of the source extent."""
    out = np.zeros((grad.shape[0], c) + grad.shape[2:], dtype=grad.dtype)
    out[:, start : start + grad.shape[1]] = grad
    return out


def sgd_momentum_step(params: ConvParams, grads, lr: float, momentum: float) -> None:
    """Classical momentum update in place: v <- mu*v - lr*g; p <- p + v."""
    if not lr > 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    if not 0 <= momentum < 1:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    grad_w, grad_b = grads
    if grad_w.shape != params.weights.shape or grad_b.shape != params.bias.shape:
        raise ShapeError("sgd_momentum_step", grad_w.shape, params.weights.shape)
    if not (np.isfinite(grad_w).all() and np.isfinite(grad_b).all()):
        raise NonFiniteError("sgd_momentum_step: non-finite gradient, step aborted")
    dtype = params.weights.dtype
    lr_ = dtype.type(lr)
    mu = dtype.type(momentum)
    params.w_velocity *= mu
    params.w_velocity -= lr_ * grad_w.astype(dtype, copy=False)
    params.b_velocity *= mu
    params.b_velocity -= lr_ * grad_b.astype(dtype, copy=False)
    params.weights += params.w_velocity
    params.bias += params.b_velocity


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x``, perturbing ``x`` in place.

    ``index`` optionally restricts the entries (flat indices); others stay 0.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    entries = range(flat.size) if index is None else index
    for i in entries:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def finite_difference_check(
    f: Callable[[], float],
    wrt: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    eps: float = 1e-5,
    mask: Sequence[np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` evaluates the scalar objective reading the arrays in ``wrt``, which
    must be float64. ``mask`` (boolean, per array) excludes entries, e.g. the
    neighbourhood of a ReLU kink.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-6, 1e-4], got {eps}")
    worst = 0.0
    for j, (x, g) in enumerate(zip(wrt, analytic)):
        if x.dtype != np.float64:
            raise TypeError("finite differences need float64 arrays")
        if g.shape != x.shape:
            raise ShapeError("finite_difference_check", x.shape, g.shape)
        num = numerical_gradient(f, x, eps)
        err = relative_error(g, num)
        if mask is not None:
            err = err[mask[j]]
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
