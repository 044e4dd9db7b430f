"""Contrast-enhanced ("reinforced") features via self-correlation maps.

The temporal path extracts per-frame convolutional features, builds an
N x N self-correlation map, and adds the resulting residual to the encoder
history; the spatial path does the same across the LM concatenated forecaster
channels. Both residual sums pass through layer normalization; the spatial
one is then squeezed to M' channels by a 1x1 convolution with tanh. The
reinforced maps feed the same temporal / spatial / cross attention pipeline
as the raw features.
"""

from .tensor import ShapeError, concat, l2_normalize, matmul, softmax
from .layers import BatchNorm2d, ChannelLinear, Conv2d, LayerNorm
from .attention import attend_reduced, cross_attention_fuse, temporal_attention


def temporal_self_correlation(x_feat, h_e, layer_norm, return_parts=False):
    """Reinforce the encoder history with a time-axis self-correlation map.

    ``x_feat`` (per-frame conv features) and ``h_e`` are (N, F) with
    F = M*H*W, optionally batched. Softmax and L2 normalization both act
    along the time axis.
    """
    if x_feat.shape != h_e.shape:
        raise ShapeError(
            f"temporal_self_correlation: shapes differ, {x_feat.shape} vs {h_e.shape}"
        )
    s = softmax(x_feat, axis=-2)
    g = matmul(x_feat, s.mT)                                   # (..., N, N)
    psi = matmul(l2_normalize(g, axis=-2).mT, l2_normalize(x_feat, axis=-2))
    out = layer_norm(h_e + psi)
    if return_parts:
        return out, {"s": s, "g": g, "psi": psi}
    return out


def spatial_self_correlation(h_d, layer_norm, head, height, width, return_parts=False):
    """Reinforce the concatenated forecaster state (LM, HW) and squeeze it
    to (M', HW) via layer norm, a 1x1 convolution, and tanh. Softmax and
    normalization act along the channel (LM) axis."""
    s = softmax(h_d, axis=-2)
    g = matmul(h_d, s.mT)                                      # (..., LM, LM)
    psi = matmul(l2_normalize(g, axis=-2).mT, l2_normalize(h_d, axis=-2))
    pre = layer_norm(h_d + psi)
    maps = pre.reshape(pre.shape[:-2] + (pre.shape[-2], height, width))
    squeezed = head(maps).tanh()
    out = squeezed.reshape(squeezed.shape[:-3] + (squeezed.shape[-3], height * width))
    if return_parts:
        return out, {"s": s, "g": g, "psi": psi}
    return out


class FeatureExtractor:
    """Two conv->batchnorm->ReLU blocks mapping frames (C) to features (M),
    applied to every frame independently (frames fold into the batch axis)."""

    def __init__(self, in_channels, channels, kernel_size, rng):
        self.conv1 = Conv2d(in_channels, channels, kernel_size, rng, bias=False)
        self.bn1 = BatchNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, kernel_size, rng, bias=False)
        self.bn2 = BatchNorm2d(channels)

    def __call__(self, frames, training):
        """(N,C,H,W) or (B,N,C,H,W) -> same leading shape with M channels."""
        squeeze = frames.ndim == 4
        if squeeze:
            frames = frames.reshape((1,) + frames.shape)
        b, n, c, h, w = frames.shape
        x = frames.reshape((b * n, c, h, w))
        x = self.bn1(self.conv1(x), training).relu()
        x = self.bn2(self.conv2(x), training).relu()
        x = x.reshape((b, n) + x.shape[1:])
        return x.reshape(x.shape[1:]) if squeeze else x

    def parameters(self):
        ps = []
        for nm, sub in (("conv1", self.conv1), ("bn1", self.bn1),
                        ("conv2", self.conv2), ("bn2", self.bn2)):
            ps += [(f"{nm}.{n}", p) for n, p in sub.parameters()]
        return ps

    def state(self):
        return ([(f"bn1.{n}", a) for n, a in self.bn1.state()]
                + [(f"bn2.{n}", a) for n, a in self.bn2.state()])

    def set_state(self, name, arr):
        sub, rest = name.split(".", 1)
        {"bn1": self.bn1, "bn2": self.bn2}[sub].set_state(rest, arr)

    def parameter_count(self):
        return (self.conv1.parameter_count() + self.bn1.parameter_count()
                + self.conv2.parameter_count() + self.bn2.parameter_count())


class ReinforcedAttention:
    """Feature reinforcement plus the attention pipeline, producing (2M', HW).

    Call counters (``temporal_correlation_calls`` etc.) are bumped on every
    invocation so tests can assert the reference features are built exactly
    once per rollout and never when the module is ablated away.
    """

    def __init__(self, in_channels, channels, reinforced_channels, num_layers,
                 height, width, kernel_size, rng, use_cross_attention=True,
                 logit_order="norm_then_scale"):
        if reinforced_channels != channels:
            raise ShapeError(
                f"reinforced channels ({reinforced_channels}) must equal hidden "
                f"channels ({channels}) for temporal attention to type-check"
            )
        self.channels = channels
        self.reinforced_channels = reinforced_channels
        self.height = height
        self.width = width
        self.use_cross_attention = use_cross_attention
        self.logit_order = logit_order
        self.extractor = FeatureExtractor(in_channels, channels, kernel_size, rng)
        self.ln_temporal = LayerNorm((channels * height * width,))
        self.ln_spatial = LayerNorm((num_layers * channels, height * width))
        self.spatial_head = Conv2d(num_layers * channels, reinforced_channels, 1, rng)
        mk = lambda: ChannelLinear(reinforced_channels, reinforced_channels, rng)
        self.w_q, self.w_k, self.w_v = mk(), mk(), mk()
        if use_cross_attention:
            self.cross_t = (mk(), mk(), mk())
            self.cross_s = (mk(), mk(), mk())
        else:
            self.cross_t = self.cross_s = ()
        self.frame_feature_calls = 0
        self.temporal_correlation_calls = 0
        self.spatial_correlation_calls = 0

    def frame_features(self, frames, training):
        self.frame_feature_calls += 1
        return self.extractor(frames, training)

    def reinforce_reference(self, frames, h_e_flat, training):
        """Build the reinforced encoder history (..., N, M*H*W); cached by
        the caller for the whole rollout."""
        self.temporal_correlation_calls += 1
        feats = self.frame_features(frames, training)
        flat = feats.reshape(feats.shape[:-3] + (feats.shape[-3] * self.height * self.width,))
        return temporal_self_correlation(flat, h_e_flat, self.ln_temporal)

    def reinforce_target(self, h_d_concat):
        """(..., LM, HW) -> (..., M', HW)."""
        self.spatial_correlation_calls += 1
        return spatial_self_correlation(
            h_d_concat, self.ln_spatial, self.spatial_head, self.height, self.width
        )

    def fuse(self, h_d_reinforced, h_e_reinforced):
        """Run the attention pipeline over reinforced features -> (2M', HW)."""
        hw = h_d_reinforced.shape[-1]
        target = h_d_reinforced.reshape(
            h_d_reinforced.shape[:-2] + (1, self.reinforced_channels * hw)
        )
        a_t = temporal_attention(
            target, h_e_reinforced, self.reinforced_channels, self.logit_order
        )
        a_s = attend_reduced(h_d_reinforced, self.w_q, self.w_k, self.w_v)
        if self.use_cross_attention:
            return cross_attention_fuse(a_t, a_s, self.cross_t, self.cross_s)
        return concat([a_t, a_s], axis=-2)

    def state(self):
        return [(f"extractor.{n}", a) for n, a in self.extractor.state()]

    def set_state(self, name, arr):
        sub, rest = name.split(".", 1)
        assert sub == "extractor"
        self.extractor.set_state(rest, arr)

    def parameters(self):
        ps = [(f"extractor.{n}", p) for n, p in self.extractor.parameters()]
        ps += [(f"ln_temporal.{n}", p) for n, p in self.ln_temporal.parameters()]
        ps += [(f"ln_spatial.{n}", p) for n, p in self.ln_spatial.parameters()]
        ps += [(f"spatial_head.{n}", p) for n, p in self.spatial_head.parameters()]
        ps += [("w_q.weight", self.w_q.weight), ("w_k.weight", self.w_k.weight),
               ("w_v.weight", self.w_v.weight)]
        for side, trip in (("cross_t", self.cross_t), ("cross_s", self.cross_s)):
            for nm, p in zip(("q", "k", "v"), trip):
                ps.append((f"{side}.{nm}.weight", p.weight))
        return ps

    def parameter_count(self):
        n = self.extractor.parameter_count()
        n += self.ln_temporal.parameter_count() + self.ln_spatial.parameter_count()
        n += self.spatial_head.parameter_count()
        n_proj = 3 + (6 if self.use_cross_attention else 0)
        n += n_proj * self.reinforced_channels**2
        return n
