"""Scaled dot-product attention over recurrent features.

Three pieces: temporal attention of the forecaster state over the encoder
history, spatial self-attention within the current state, and a symmetric
cross-attention that fuses the two context maps. Functions accept the
documented unbatched shapes or the same shapes with one leading batch axis.
"""

import numpy as np

from .tensor import Tensor, ShapeError, concat, l2_normalize, matmul, softmax
from .layers import ChannelLinear


def temporal_attention(
    target,
    reference,
    channels,
    logit_order="norm_then_scale",
    return_weights=False,
):
    """Attend over the reference history; returns context of shape (M, HW).

    ``target`` is (L, M*H*W) and ``reference`` is (N, M*H*W) (optionally with
    a leading batch axis). Similarity rows are L2-normalized before the
    scaling by 1/sqrt(M*H*W) -- ``logit_order`` flips that order. The
    weighted sum over the history is averaged over the L target rows and
    reshaped to (M, HW).
    """
    if target.shape[-1] != reference.shape[-1]:
        raise ShapeError(
            f"temporal_attention: feature dims differ, {target.shape} vs {reference.shape}"
        )
    if logit_order not in ("norm_then_scale", "scale_then_norm"):
        raise ValueError(f"unknown logit_order {logit_order!r}")
    feat = target.shape[-1]
    d = float(np.sqrt(feat))
    omega = matmul(target, reference.mT)              # (..., L, N)
    if logit_order == "norm_then_scale":
        logits = l2_normalize(omega, axis=-1) * (1.0 / d)
    else:
        logits = l2_normalize(omega * (1.0 / d), axis=-1)
    weights = softmax(logits, axis=-1)
    ctx = matmul(weights, reference)                  # (..., L, M*H*W)
    ctx = ctx.mean(axis=-2)                           # (..., M*H*W)
    out = ctx.reshape(ctx.shape[:-1] + (channels, feat // channels))
    if return_weights:
        return out, weights
    return out


def scaled_dot_attention(q, k, v, scale, return_weights=False):
    """softmax(q kT / scale) v with the softmax over the key axis.

    Runs as one fused graph node (forward and backward each touch the
    arrays once). The optional weights come back as a plain value tensor.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"scaled_dot_attention: {q.shape} x {k.shape} x {v.shape}")
    inv = 1.0 / scale
    s = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) * inv
    s -= s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    w = e / e.sum(axis=-1, keepdims=True)
    out = np.matmul(w, v.data)

    def backward(g):
        if v.requires_grad:
            v._acc_own(np.matmul(np.swapaxes(w, -1, -2), g))
        dw = np.matmul(g, np.swapaxes(v.data, -1, -2))
        ds = w * (dw - (dw * w).sum(axis=-1, keepdims=True))
        ds *= inv
        if q.requires_grad:
            q._acc_own(np.matmul(ds, k.data))
        if k.requires_grad:
            k._acc_own(np.matmul(np.swapaxes(ds, -1, -2), q.data))

    res = Tensor._from_op(out, (q, k, v), "scaled_dot_attention", backward)
    if return_weights:
        return res, Tensor(w)
    return res


def attend_reduced(h, w_q, w_k, w_v, return_weights=False):
    """Self-attention of an already layer-reduced map (..., M, HW)."""
    d_k = float(np.sqrt(h.shape[-1]))
    return scaled_dot_attention(w_q(h), w_k(h), w_v(h), d_k, return_weights)


def reduce_layers(h_layers):
    """L2-normalize across the layer axis at every coordinate, then average
    the layers away: (..., L, M, HW) -> (..., M, HW)."""
    return l2_normalize(h_layers, axis=-3).mean(axis=-3)


def spatial_self_attention(h_layers, w_q, w_k, w_v, return_weights=False):
    """Spatial self-attention of the forecaster state.

    ``h_layers`` is (L, M, HW) (optionally batched); the layer axis is
    normalized and averaged out before the Q/K/V projections.
    """
    if h_layers.ndim < 3:
        raise ShapeError(f"spatial_self_attention: expected (L, M, HW), got {h_layers.shape}")
    return attend_reduced(reduce_layers(h_layers), w_q, w_k, w_v, return_weights)


def cross_attention_fuse(a_t, a_s, proj_t, proj_s):
    """Fuse temporal and spatial context maps into (2M, HW).

    Each map is projected to its own query/key/value triple; each side
    attends over the other and the two results are concatenated along the
    channel axis.
    """
    if a_t.shape != a_s.shape:
        raise ShapeError(f"cross_attention_fuse: shapes differ, {a_t.shape} vs {a_s.shape}")
    q_t, k_t, v_t = (p(a_t) for p in proj_t)
    q_s, k_s, v_s = (p(a_s) for p in proj_s)
    d_k = float(np.sqrt(a_t.shape[-1]))
    fused_ts = scaled_dot_attention(q_t, k_s, v_s, d_k)
    fused_st = scaled_dot_attention(q_s, k_t, v_t, d_k)
    return concat([fused_ts, fused_st], axis=-2)


class StandardAttention:
    """Attention block over raw recurrent features, producing (2M, HW)."""

    def __init__(self, channels, rng, use_cross_attention=True,
                 logit_order="norm_then_scale"):
        self.channels = channels
        self.use_cross_attention = use_cross_attention
        self.logit_order = logit_order
        mk = lambda: ChannelLinear(channels, channels, rng)
        self.w_q, self.w_k, self.w_v = mk(), mk(), mk()
        if use_cross_attention:
            self.cross_t = (mk(), mk(), mk())
            self.cross_s = (mk(), mk(), mk())
        else:
            self.cross_t = self.cross_s = ()

    def __call__(self, h_layers_flat, h_layers_maps, reference_flat):
        """h_layers_flat: (..., L, M*HW); h_layers_maps: (..., L, M, HW);
        reference_flat: (..., N, M*HW). Returns (..., 2M, HW)."""
        a_t = temporal_attention(
            h_layers_flat, reference_flat, self.channels, self.logit_order
        )
        a_s = spatial_self_attention(h_layers_maps, self.w_q, self.w_k, self.w_v)
        if self.use_cross_attention:
            return cross_attention_fuse(a_t, a_s, self.cross_t, self.cross_s)
        return concat([a_t, a_s], axis=-2)

    def parameters(self):
        ps = [("w_q.weight", self.w_q.weight), ("w_k.weight", self.w_k.weight),
              ("w_v.weight", self.w_v.weight)]
        for side, trip in (("cross_t", self.cross_t), ("cross_s", self.cross_s)):
            for nm, p in zip(("q", "k", "v"), trip):
                ps.append((f"{side}.{nm}.weight", p.weight))
        return ps

    def parameter_count(self):
        n_proj = 3 + (6 if self.use_cross_attention else 0)
        return n_proj * self.channels * self.channels
