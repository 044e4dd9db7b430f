"""Parameterized layers: shape-preserving 2D convolution, batch/layer norm,
and channel-wise linear projection, with seeded glorot initialization."""

import numpy as np

from .tensor import Tensor, ShapeError, constant, layer_norm, matmul


def glorot_uniform(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def param_init(layer, seed):
    """Re-initialize a layer's parameters deterministically from a seed."""
    layer.init(np.random.default_rng(seed))
    return layer


# -- convolution -------------------------------------------------------------


def _pad_nhwc(x_nchw, k):
    """(B,C,H,W) -> zero-padded channels-last (B,H+2p,W+2p,C); the pad copy
    absorbs the layout change."""
    p = k // 2
    return np.pad(x_nchw.transpose(0, 2, 3, 1), ((0, 0), (p, p), (p, p), (0, 0)))


def _im2col_nhwc(xp, k, h, w):
    """Padded channels-last input -> (B*H*W, k*k*C) patch matrix (column
    order: ki, kj, channel) via one single-pass window gather."""
    b = xp.shape[0]
    c = xp.shape[3]
    if k == 1:
        return xp.reshape(b * h * w, c)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, k * k * c)


def _col2im_nhwc(dcol, b, c, h, w, k):
    """Adjoint of _im2col_nhwc: scatter-add patches back; returns the padded
    channels-last gradient accumulator (B, H+2p, W+2p, C)."""
    if k == 1:
        return dcol.reshape(b, h, w, c)
    d = dcol.reshape(b, h, w, k, k, c)
    acc = np.zeros((b, h + k - 1, w + k - 1, c))
    for i in range(k):
        for j in range(k):
            acc[:, i : i + h, j : j + w, :] += d[:, :, :, i, j, :]
    return acc


def _weight_matrix(w_nchw):
    """(Cout, Cin, k, k) -> (k*k*Cin, Cout) matching the im2col column order."""
    c_out, c_in, k, _ = w_nchw.shape
    if k == 1:
        return w_nchw.reshape(c_out, c_in).T
    return np.ascontiguousarray(w_nchw.transpose(2, 3, 1, 0)).reshape(k * k * c_in, c_out)


def _weight_unmatrix(dw2, c_out, c_in, k):
    if k == 1:
        return np.ascontiguousarray(dw2.T).reshape(c_out, c_in, k, k)
    return np.ascontiguousarray(dw2.reshape(k, k, c_in, c_out).transpose(3, 2, 0, 1))


def conv2d(x, weight, bias=None):
    """Cross-correlation with zero padding; spatial dims are preserved.

    ``x`` is (C,H,W) or (B,C,H,W); ``weight`` is (C_out, C_in, k, k) with k
    odd, stride 1. Differentiable w.r.t. input, weight and bias.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D input/weight, got {x.shape}, {weight.shape}")
    b, c_in, h, w = x.shape
    c_out, c_in_w, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if c_in != c_in_w:
        raise ShapeError(f"conv2d: input has {c_in} channels, weight expects {c_in_w}")

    p = k // 2
    col = _im2col_nhwc(_pad_nhwc(x.data, k), k, h, w)   # (BHW, k*k*Cin)
    w2 = _weight_matrix(weight.data)
    out2 = col @ w2
    if bias is not None:
        out2 = out2 + bias.data
    out = np.ascontiguousarray(out2.reshape(b, h, w, c_out).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * h * w, c_out)
        if weight.requires_grad:
            weight._acc_own(_weight_unmatrix(col.T @ g2, c_out, c_in, k))
        if bias is not None and bias.requires_grad:
            bias._acc_own(g2.sum(axis=0))
        if x.requires_grad:
            acc = _col2im_nhwc(g2 @ w2.T, b, c_in, h, w, k)
            x._acc_own(np.ascontiguousarray(acc[:, p : p + h, p : p + w, :].transpose(0, 3, 1, 2)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    res = Tensor._from_op(out, parents, "conv2d", backward)
    return res.reshape(res.shape[1:]) if squeeze else res


class Conv2d:
    """Shape-preserving convolution layer; odd kernel, stride 1."""

    def __init__(self, in_channels, out_channels, kernel_size, rng, bias=True):
        if kernel_size % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.has_bias = bias
        self.weight = None
        self.bias = None
        self.init(rng)

    def init(self, rng):
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        fan_out = self.out_channels * k * k
        self.weight = Tensor(
            glorot_uniform(rng, (self.out_channels, self.in_channels, k, k), fan_in, fan_out),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(self.out_channels), requires_grad=True) if self.has_bias else None

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias)

    def parameters(self):
        ps = [("weight", self.weight)]
        if self.bias is not None:
            ps.append(("bias", self.bias))
        return ps

    def parameter_count(self):
        n = self.out_channels * self.in_channels * self.kernel_size**2
        return n + (self.out_channels if self.has_bias else 0)


# -- normalization -----------------------------------------------------------


class BatchNorm2d:
    """Per-channel normalization over batch and spatial axes.

    Training mode uses the current batch statistics and updates running
    stats (biased variance, momentum 0.1); eval mode normalizes with the
    stored running statistics only, so it is deterministic.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def init(self, rng):
        self.gamma = Tensor(np.ones(self.channels), requires_grad=True)
        self.beta = Tensor(np.zeros(self.channels), requires_grad=True)
        self.running_mean = np.zeros(self.channels)
        self.running_var = np.ones(self.channels)

    def __call__(self, x, training):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm2d: expected (B,{self.channels},H,W), got {x.shape}")
        if training:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            xc = x - mu.broadcast_to(x.shape)
            var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
            self.running_mean = (
                (1 - self.momentum) * self.running_mean + self.momentum * mu.data.reshape(-1)
            )
            self.running_var = (
                (1 - self.momentum) * self.running_var + self.momentum * var.data.reshape(-1)
            )
            std = (var + constant(var.shape, self.eps)).sqrt()
            y = xc / std.broadcast_to(x.shape)
        else:
            shape = (1, self.channels, 1, 1)
            mu = Tensor(self.running_mean.reshape(shape))
            inv = Tensor(1.0 / np.sqrt(self.running_var.reshape(shape) + self.eps))
            y = (x - mu.broadcast_to(x.shape)) * inv.broadcast_to(x.shape)
        g = self.gamma.reshape((1, self.channels, 1, 1)).broadcast_to(x.shape)
        b = self.beta.reshape((1, self.channels, 1, 1)).broadcast_to(x.shape)
        return y * g + b

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state(self):
        """Mutable non-parameter state (serialized in checkpoints)."""
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def set_state(self, name, arr):
        if name == "running_mean":
            self.running_mean = arr.copy()
        elif name == "running_var":
            self.running_var = arr.copy()
        else:
            raise KeyError(name)

    def parameter_count(self):
        return 2 * self.channels


class LayerNorm:
    """Normalize each instance over its trailing ``normalized_shape`` axes,
    then apply a learnable elementwise affine."""

    def __init__(self, normalized_shape, eps=1e-5):
        self.normalized_shape = tuple(normalized_shape)
        self.eps = eps
        self.gamma = Tensor(np.ones(self.normalized_shape), requires_grad=True)
        self.beta = Tensor(np.zeros(self.normalized_shape), requires_grad=True)

    def init(self, rng):
        self.gamma = Tensor(np.ones(self.normalized_shape), requires_grad=True)
        self.beta = Tensor(np.zeros(self.normalized_shape), requires_grad=True)

    def __call__(self, x, training=True):
        nd = len(self.normalized_shape)
        if x.shape[x.ndim - nd :] != self.normalized_shape:
            raise ShapeError(
                f"layernorm: trailing dims of {x.shape} do not match {self.normalized_shape}"
            )
        return layer_norm(x, self.gamma, self.beta, nd, self.eps)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def parameter_count(self):
        return 2 * int(np.prod(self.normalized_shape))


def normalize(x, layer, training):
    """Apply a norm layer (BatchNorm2d or LayerNorm) to x."""
    return layer(x, training)


# -- channel mixing -----------------------------------------------------------


class ChannelLinear:
    """Linear map over the channel axis, applied identically at every
    spatial location: (..., M_in, HW) -> (..., M_out, HW)."""

    def __init__(self, in_channels, out_channels, rng, bias=False):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.has_bias = bias
        self.weight = None
        self.bias = None
        self.init(rng)

    def init(self, rng):
        self.weight = Tensor(
            glorot_uniform(
                rng, (self.out_channels, self.in_channels), self.in_channels, self.out_channels
            ),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(self.out_channels), requires_grad=True) if self.has_bias else None

    def __call__(self, x):
        if x.shape[-2] != self.in_channels:
            raise ShapeError(
                f"channel_linear: input has {x.shape[-2]} channels, expected {self.in_channels}"
            )
        out = matmul(self.weight, x)
        if self.bias is not None:
            out = out + self.bias.reshape((self.out_channels, 1)).broadcast_to(out.shape)
        return out

    def parameters(self):
        ps = [("weight", self.weight)]
        if self.bias is not None:
            ps.append(("bias", self.bias))
        return ps

    def parameter_count(self):
        return self.out_channels * self.in_channels + (self.out_channels if self.has_bias else 0)


def channel_linear(x, layer):
    return layer(x)
