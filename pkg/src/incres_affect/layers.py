"""Layer primitives over NHWC tensors, each with its own backward pass."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateBatch, KernelTooLarge, ShapeMismatch
from .tensor import Rng, Tensor, _push, concat, make_result, matmul, split


class Padding(str, enum.Enum):
    VALID = "valid"
    SAME = "same"


class Activation(str, enum.Enum):
    RELU = "relu"
    LINEAR = "linear"


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def output_extent(size: int, k: int, stride: int, padding: Padding) -> int:
    if Padding(padding) is Padding.SAME:
        return -(-size // stride)
    if k > size:
        raise KernelTooLarge(f"kernel extent {k} exceeds input extent {size} under valid padding")
    return (size - k) // stride + 1


def same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    """(before, after) padding; the odd pixel goes after (bottom/right)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _pad_input(x: np.ndarray, kernel, stride, padding, fill=0.0):
    kh, kw = kernel
    sh, sw = stride
    _, h, w, _ = x.shape
    oh = output_extent(h, kh, sh, padding)
    ow = output_extent(w, kw, sw, padding)
    if Padding(padding) is Padding.SAME:
        pt, pb = same_padding(h, kh, sh)
        pl, pr = same_padding(w, kw, sw)
    else:
        pt = pb = pl = pr = 0
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=fill)
    return np.ascontiguousarray(x), (pt, pb, pl, pr), oh, ow


@dataclass
class ConvParams:
    kernel: Tensor  # kh x kw x cin x cout
    bias: Tensor  # cout
    stride: tuple[int, int] = (1, 1)
    padding: Padding = Padding.SAME

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.padding = Padding(self.padding)
        if self.kernel.ndim != 4 or self.bias.shape != (self.kernel.shape[3],):
            raise ShapeMismatch(
                f"kernel {self.kernel.shape} and bias {self.bias.shape} are inconsistent")


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.99
    epsilon: float = 1e-3
    activation: Activation = Activation.RELU

    def __post_init__(self):
        self.activation = Activation(self.activation)
        if not self.epsilon > 0:
            raise ValueError("batchnorm epsilon must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("batchnorm momentum must lie in (0, 1)")

    @classmethod
    def fresh(cls, channels: int, activation=Activation.RELU, momentum=0.99, epsilon=1e-3):
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True),
            beta=Tensor(np.zeros(channels), requires_grad=True),
            running_mean=Tensor(np.zeros(channels)),
            running_var=Tensor(np.ones(channels)),
            momentum=momentum,
            epsilon=epsilon,
            activation=activation,
        )


@dataclass
class DropoutParams:
    keep_prob: float = 0.8
    mode: Mode = Mode.TRAIN

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if not 0 < self.keep_prob <= 1:
            raise ValueError(f"keep_prob must lie in (0, 1], got {self.keep_prob}")


@dataclass
class DenseParams:
    weight: Tensor  # in x out
    bias: Tensor  # out

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeMismatch(
                f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent")


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """2-D cross-correlation (no kernel flip) plus bias."""
    if x.ndim != 4:
        raise ShapeMismatch(f"conv2d expects n x h x w x c input, got {x.shape}")
    kh, kw, cin, cout = p.kernel.shape
    if x.shape[3] != cin:
        raise ShapeMismatch(f"input has {x.shape[3]} channels, kernel expects {cin}")
    sh, sw = p.stride
    n = x.shape[0]
    xp, (pt, pb, pl, pr), oh, ow = _pad_input(x.data, (kh, kw), p.stride, p.padding)
    hp, wp = xp.shape[1], xp.shape[2]
    pointwise = kh == 1 and kw == 1 and sh == 1 and sw == 1
    if pointwise:
        cols = xp.reshape(n * oh * ow, cin)
    else:
        cols = kernels.get("im2col")(xp, kh, kw, sh, sw, oh, ow)
    k2 = p.kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ k2 + p.bias.data).reshape(n, oh, ow, cout)

    def backward(g):
        g2 = g.reshape(n * oh * ow, cout)
        if p.kernel.requires_grad:
            _push(p.kernel, (cols.T @ g2).reshape(p.kernel.shape))
        if p.bias.requires_grad:
            _push(p.bias, g2.sum(axis=0))
        if x.requires_grad:
            dcols = np.ascontiguousarray(g2 @ k2.T)
            if pointwise:
                dxp = dcols.reshape(n, hp, wp, cin)
            else:
                dxp = kernels.get("col2im")(dcols, n, hp, wp, cin, kh, kw, sh, sw, oh, ow)
            _push(x, dxp[:, pt : hp - pb, pl : wp - pr, :])

    return make_result(out, (x, p.kernel, p.bias), backward)


def batchnorm(x: Tensor, p: BatchNormParams, mode: Mode = Mode.TRAIN) -> Tensor:
    """Normalize over every axis but the last, then scale/shift and maybe ReLU.

    Train mode uses batch statistics and folds them into the running
    estimates; Eval mode reads the running estimates only.
    """
    c = x.shape[-1]
    if p.gamma.shape != (c,):
        raise ShapeMismatch(f"batchnorm over {c} channels with {p.gamma.shape[0]} parameters")
    mode = Mode(mode)
    x2 = np.ascontiguousarray(x.data.reshape(-1, c))
    m = x2.shape[0]
    if mode is Mode.TRAIN:
        if m < 2:
            raise DegenerateBatch(f"batchnorm in train mode needs at least 2 values per channel, got {m}")
        mean, var = kernels.get("channel_stats")(x2)
        mom = p.momentum
        p.running_mean.data = mom * p.running_mean.data + (1 - mom) * mean
        p.running_var.data = mom * p.running_var.data + (1 - mom) * var
    else:
        mean = np.ascontiguousarray(p.running_mean.data)
        var = p.running_var.data
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    apply_relu = p.activation is Activation.RELU
    out, xhat = kernels.get("bn_forward")(x2, mean, inv_std, p.gamma.data, p.beta.data, apply_relu)

    def backward(g):
        dx, dgamma, dbeta = kernels.get("bn_backward")(
            np.ascontiguousarray(g.reshape(-1, c)), out, xhat, p.gamma.data, inv_std,
            apply_relu, mode is Mode.TRAIN)
        _push(p.gamma, dgamma)
        _push(p.beta, dbeta)
        _push(x, dx)

    return make_result(out.reshape(x.shape), (x, p.gamma, p.beta), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        _push(x, np.where(mask, g, 0.0))
    return make_result(np.where(mask, x.data, 0.0), (x,), backward)


def dropout(x: Tensor, p: DropoutParams, rng: Rng | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/keep_prob during training."""
    if p.mode is Mode.EVAL or p.keep_prob == 1.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an Rng")
    mask = (rng.random(x.shape) < p.keep_prob) / p.keep_prob

    def backward(g):
        _push(x, g * mask)
    return make_result(x.data * mask, (x,), backward)


def maxpool(x: Tensor, window=(3, 3), stride=(2, 2), padding: Padding = Padding.VALID) -> Tensor:
    kh, kw = _pair(window)
    sh, sw = _pair(stride)
    xp, (pt, pb, pl, pr), oh, ow = _pad_input(x.data, (kh, kw), (sh, sw), padding, fill=-np.inf)
    hp, wp = xp.shape[1], xp.shape[2]
    out, arg = kernels.get("maxpool_forward")(xp, kh, kw, sh, sw, oh, ow)

    def backward(g):
        dxp = kernels.get("maxpool_backward")(np.ascontiguousarray(g), arg, hp, wp, kh, kw, sh, sw)
        _push(x, dxp[:, pt : hp - pb, pl : wp - pr, :])

    return make_result(out, (x,), backward)


def dense(x: Tensor, p: DenseParams) -> Tensor:
    if x.ndim != 2 or x.shape[1] != p.weight.shape[0]:
        raise ShapeMismatch(f"dense: input {x.shape} against weight {p.weight.shape}")
    prod = matmul(x, p.weight)
    out = prod.data + p.bias.data

    def backward(g):
        _push(prod, g)
        _push(p.bias, g.sum(axis=0))
    return make_result(out, (prod, p.bias), backward)


def concat_channels(xs) -> Tensor:
    """Concatenate along the last axis."""
    return concat(xs, axis=-1)


def split_channels(x: Tensor, sizes) -> list[Tensor]:
    return split(x, sizes, axis=-1)


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1) if x.ndim > 2 else x


def global_avg_pool(x: Tensor) -> Tensor:
    """n x h x w x c -> n x c, the mean over both spatial axes."""
    if x.ndim != 4:
        raise ShapeMismatch(f"global_avg_pool expects n x h x w x c, got {x.shape}")
    n, h, w, c = x.shape

    def backward(g):
        _push(x, np.broadcast_to(g[:, None, None, :] / (h * w), x.shape))
    return make_result(x.data.mean(axis=(1, 2)), (x,), backward)


def init_conv(rng: Rng, kh: int, kw: int, cin: int, cout: int, stride=1,
              padding=Padding.SAME) -> ConvParams:
    """Truncated normal kernel with fan-in scaling, zero bias."""
    std = math.sqrt(2.0 / (kh * kw * cin))
    kernel = rng.truncated_normal((kh, kw, cin, cout), std)
    return ConvParams(Tensor(kernel, requires_grad=True),
                      Tensor(np.zeros(cout), requires_grad=True), stride, padding)


def init_dense(rng: Rng, fan_in: int, fan_out: int) -> DenseParams:
    std = math.sqrt(1.0 / fan_in)
    return DenseParams(Tensor(rng.truncated_normal((fan_in, fan_out), std), requires_grad=True),
                       Tensor(np.zeros(fan_out), requires_grad=True))
