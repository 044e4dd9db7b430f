"""Convolutional GRU cell and the stacked encoder / forecaster recurrences.

A cell holds six shape-preserving convolutions (input-to-state and
state-to-state for the reset gate, the candidate, and the update gate) plus
one bias per gate. The encoder runs a stack of cells over the input frames
from zero initial states; the forecaster continues from the encoder's final
per-layer states, one vertical pass per predicted frame.
"""

import numpy as np

from .tensor import Tensor, ShapeError, stack
from .layers import (
    Conv2d,
    _col2im_nhwc,
    _im2col_nhwc,
    _pad_nhwc,
    _weight_matrix,
    _weight_unmatrix,
)


def _sigmoid(x):
    # overflow-safe in both tails; exact 0.0 / 0.5 / 1.0 at the extremes
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _gru_step_op(x, h_prev, cell):
    """Fused forward/backward of one ConvGRU step (NCHW in, NCHW out).

    All three convolutions of each side run as single GEMMs over stacked
    weight matrices, gate algebra stays on flat channels-last arrays, and the
    whole step is one autodiff node. The blend (1-z)*g + z*h is evaluated
    exactly, so z == 1 propagates the previous state bit-for-bit.
    """
    b, c_in, hh, ww = x.shape
    m = cell.hidden_channels
    k = cell.kernel_size
    p = k // 2
    n_px = b * hh * ww

    wx = [cell.w_xr.weight, cell.w_xz.weight, cell.w_xg.weight]
    wh = [cell.w_hr.weight, cell.w_hz.weight]
    whg = cell.w_hg.weight
    biases = [cell.b_r, cell.b_z, cell.b_g]

    wx2 = np.concatenate([_weight_matrix(w.data) for w in wx], axis=1)   # (k2C, 3M)
    wh2 = np.concatenate([_weight_matrix(w.data) for w in wh], axis=1)   # (k2M, 2M)
    whg2 = _weight_matrix(whg.data)                                      # (k2M, M)
    bx = np.concatenate([t.data for t in biases])
    pad = ((0, 0), (p, p), (p, p), (0, 0))

    colx = _im2col_nhwc(_pad_nhwc(x.data, k), k, hh, ww)
    h_flat = np.ascontiguousarray(h_prev.data.transpose(0, 2, 3, 1)).reshape(n_px, m)
    colh = _im2col_nhwc(np.pad(h_flat.reshape(b, hh, ww, m), pad), k, hh, ww)

    pre = colx @ wx2
    pre += bx
    pre[:, 0 : 2 * m] += colh @ wh2
    r = _sigmoid(pre[:, 0:m])
    z = _sigmoid(pre[:, m : 2 * m])
    colrh = _im2col_nhwc(np.pad((r * h_flat).reshape(b, hh, ww, m), pad), k, hh, ww)
    pre_g = pre[:, 2 * m : 3 * m]
    pre_g += colrh @ whg2
    g = np.tanh(pre_g)
    h_new = (1.0 - z) * g + z * h_flat
    out = np.ascontiguousarray(h_new.reshape(b, hh, ww, m).transpose(0, 3, 1, 2))
    del pre, pre_g

    def backward(grad):
        dh = np.ascontiguousarray(grad.transpose(0, 2, 3, 1)).reshape(n_px, m)
        # dpre_[r|z|g] built directly inside one buffer to spare temporaries
        dxa = np.empty((n_px, 3 * m))
        dpre_r, dpre_z, dpre_g = dxa[:, 0:m], dxa[:, m : 2 * m], dxa[:, 2 * m : 3 * m]
        np.subtract(h_flat, g, out=dpre_z)
        dpre_z *= dh
        dpre_z *= z
        dpre_z *= 1.0 - z
        np.subtract(1.0, z, out=dpre_g)
        dpre_g *= dh
        dpre_g *= 1.0 - g * g
        dh_prev = dh * z
        if whg.requires_grad:
            whg._acc_own(_weight_unmatrix(colrh.T @ np.ascontiguousarray(dpre_g), m, m, k))
        acc = _col2im_nhwc(dpre_g @ whg2.T, b, m, hh, ww, k)
        drh = acc[:, p : p + hh, p : p + ww, :].reshape(n_px, m)
        dh_prev += drh * r
        np.multiply(drh, h_flat, out=dpre_r)
        dpre_r *= r
        dpre_r *= 1.0 - r
        for i, bt in enumerate(biases):
            if bt.requires_grad:
                bt._acc_own(dxa[:, i * m : (i + 1) * m].sum(axis=0))
        dwx2 = colx.T @ dxa
        for i, w in enumerate(wx):
            if w.requires_grad:
                w._acc_own(_weight_unmatrix(dwx2[:, i * m : (i + 1) * m], m, c_in, k))
        if x.requires_grad:
            accx = _col2im_nhwc(dxa @ wx2.T, b, c_in, hh, ww, k)
            x._acc_own(
                np.ascontiguousarray(accx[:, p : p + hh, p : p + ww, :].transpose(0, 3, 1, 2))
            )
        dha = dxa[:, 0 : 2 * m]
        dwh2 = colh.T @ dha
        for i, w in enumerate(wh):
            if w.requires_grad:
                w._acc_own(_weight_unmatrix(dwh2[:, i * m : (i + 1) * m], m, m, k))
        acch = _col2im_nhwc(dha @ wh2.T, b, m, hh, ww, k)
        dh_prev += acch[:, p : p + hh, p : p + ww, :].reshape(n_px, m)
        if h_prev.requires_grad:
            h_prev._acc_own(
                np.ascontiguousarray(dh_prev.reshape(b, hh, ww, m).transpose(0, 3, 1, 2))
            )

    parents = (x, h_prev, *wx, *wh, whg, *biases)
    return Tensor._from_op(out, parents, "convgru_cell", backward)


class ConvGruCell:
    """Gated recurrent cell with convolutional transitions.

    Update rule (sigma = sigmoid, * = conv, o = Hadamard):

        r = sigma(W_xr * x + W_hr * h + b_r)
        g = tanh(W_xg * x + W_hg * (r o h) + b_g)
        z = sigma(W_xz * x + W_hz * h + b_z)
        h' = (1 - z) o g + z o h
    """

    def __init__(self, in_channels, hidden_channels, kernel_size, rng):
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.kernel_size = kernel_size
        mk = lambda cin: Conv2d(cin, hidden_channels, kernel_size, rng, bias=False)
        self.w_xr = mk(in_channels)
        self.w_xz = mk(in_channels)
        self.w_xg = mk(in_channels)
        self.w_hr = mk(hidden_channels)
        self.w_hz = mk(hidden_channels)
        self.w_hg = mk(hidden_channels)
        self.b_r = Tensor(np.zeros(hidden_channels), requires_grad=True)
        self.b_z = Tensor(np.zeros(hidden_channels), requires_grad=True)
        self.b_g = Tensor(np.zeros(hidden_channels), requires_grad=True)

    def step(self, x, h_prev):
        """One recurrence step; accepts (C,H,W) or batched (B,C,H,W) input."""
        squeeze = x.ndim == 3
        if squeeze:
            x = x.reshape((1,) + x.shape)
            h_prev = h_prev.reshape((1,) + h_prev.shape)
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"cell expects {self.in_channels} input channels, got {x.shape}")
        if h_prev.shape[1] != self.hidden_channels or h_prev.shape[2:] != x.shape[2:]:
            raise ShapeError(f"hidden state {h_prev.shape} incompatible with input {x.shape}")
        h = _gru_step_op(x, h_prev, self)
        return h.reshape(h.shape[1:]) if squeeze else h

    def parameters(self):
        ps = []
        for name in ("w_xr", "w_xz", "w_xg", "w_hr", "w_hz", "w_hg"):
            ps.append((f"{name}.weight", getattr(self, name).weight))
        ps += [("b_r", self.b_r), ("b_z", self.b_z), ("b_g", self.b_g)]
        return ps

    def parameter_count(self):
        k2 = self.kernel_size**2
        m = self.hidden_channels
        return 3 * m * self.in_channels * k2 + 3 * m * m * k2 + 3 * m


def convgru_step(x, h_prev, cell):
    return cell.step(x, h_prev)


class GruStack:
    """L stacked ConvGRU cells; layer 0 consumes frames, layers >=1 consume
    the hidden state of the layer below."""

    def __init__(self, num_layers, in_channels, hidden_channels, kernel_size, rng):
        if num_layers < 1:
            raise ShapeError(f"need at least one layer, got {num_layers}")
        self.num_layers = num_layers
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.cells = [
            ConvGruCell(
                in_channels if i == 0 else hidden_channels, hidden_channels, kernel_size, rng
            )
            for i in range(num_layers)
        ]

    def zero_state(self, batch, height, width):
        shape = (batch, self.hidden_channels, height, width)
        return [Tensor(np.zeros(shape)) for _ in self.cells]

    def encode(self, frames):
        """Run the stack over (N,C,H,W) or (B,N,C,H,W) frames from zero states.

        Returns (top-layer outputs per step stacked along time, final states
        of every layer stacked along a leading layer axis).
        """
        squeeze = frames.ndim == 4
        if squeeze:
            frames = frames.reshape((1,) + frames.shape)
        b, n, _, h, w = frames.shape
        if n < 1:
            raise ShapeError("encode: empty frame sequence")
        states = self.zero_state(b, h, w)
        tops = []
        for t in range(n):
            x = frames[:, t]
            for i, cell in enumerate(self.cells):
                states[i] = cell.step(x, states[i])
                x = states[i]
            tops.append(states[-1])
        h_seq = stack(tops, axis=1)       # (B, N, M, H, W)
        carry = stack(states, axis=1)     # (B, L, M, H, W)
        if squeeze:
            return h_seq.reshape(h_seq.shape[1:]), carry.reshape(carry.shape[1:])
        return h_seq, carry

    def step_all_layers(self, x, carry):
        """One vertical pass: (x, per-layer states) -> (all-layer outputs, new states).

        ``carry`` is stacked along the layer axis: (L,M,H,W) or (B,L,M,H,W).
        """
        squeeze = x.ndim == 3
        if squeeze:
            x = x.reshape((1,) + x.shape)
            carry = carry.reshape((1,) + carry.shape)
        if carry.shape[1] != self.num_layers:
            raise ShapeError(f"carry has {carry.shape[1]} layers, stack has {self.num_layers}")
        new_states = []
        inp = x
        for i, cell in enumerate(self.cells):
            s = cell.step(inp, carry[:, i])
            new_states.append(s)
            inp = s
        out = stack(new_states, axis=1)   # (B, L, M, H, W)
        if squeeze:
            out = out.reshape(out.shape[1:])
        # the stacked layer outputs for this step are also the next carry
        return out, out

    def parameters(self):
        ps = []
        for i, cell in enumerate(self.cells):
            ps += [(f"{i}.{n}", p) for n, p in cell.parameters()]
        return ps

    def parameter_count(self):
        return sum(c.parameter_count() for c in self.cells)


def encode(frames, gru_stack):
    return gru_stack.encode(frames)


def forecaster_step(x, carry, gru_stack):
    return gru_stack.step_all_layers(x, carry)
