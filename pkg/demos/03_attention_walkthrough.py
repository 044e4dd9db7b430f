# The attention machinery on toy shapes: temporal attention over a frame
# history, spatial self-attention, cross-attention fusion, and the
# self-correlation maps that build contrast-reinforced features.

import numpy as np

from srvp.tensor import Tensor
from srvp.layers import ChannelLinear, Conv2d, LayerNorm
from srvp.attention import (
    cross_attention_fuse,
    spatial_self_attention,
    temporal_attention,
)
from srvp.reinforced import spatial_self_correlation, temporal_self_correlation

rng = np.random.default_rng(3)
M, HW, L, N = 4, 9, 2, 5      # channels, pixels, layers, history length

# temporal attention: the current 2-layer state queries 5 past states
target = Tensor(rng.random((L, M * HW)))
history = Tensor(rng.random((N, M * HW)))
ctx, weights = temporal_attention(target, history, channels=M, return_weights=True)
print("attention weights over the history (rows sum to 1):")
print(np.round(weights.data, 4))
print("temporal context shape:", ctx.shape)

# shuffling the history leaves the context untouched
shuffled = Tensor(history.data[rng.permutation(N)])
ctx2 = temporal_attention(target, shuffled, channels=M)
print("permutation invariant:", np.abs(ctx.data - ctx2.data).max() < 1e-12)

# spatial self-attention over the layer-reduced state
wq, wk, wv = (ChannelLinear(M, M, rng) for _ in range(3))
spatial = spatial_self_attention(Tensor(rng.random((L, M, HW))), wq, wk, wv)
print("spatial context shape:", spatial.shape)

# cross-attention fuses the two context maps into 2M channels
proj_t = tuple(ChannelLinear(M, M, rng) for _ in range(3))
proj_s = tuple(ChannelLinear(M, M, rng) for _ in range(3))
fused = cross_attention_fuse(ctx, spatial, proj_t, proj_s)
print("fused features shape:", fused.shape)

# temporal self-correlation sharpens the history before attention
F = M * HW
ln = LayerNorm((F,))
frame_feats = Tensor(np.abs(rng.random((N, F))))
reinforced, parts = temporal_self_correlation(frame_feats, history, ln, return_parts=True)
print("\ntime-axis correlation map (N x N):")
print(np.round(parts["g"].data, 3))
print("reinforced history shape:", reinforced.shape)

# spatial self-correlation squeezes the stacked layers to M' channels
ln_s = LayerNorm((L * M, HW))
head = Conv2d(L * M, M, 1, rng)
squeezed = spatial_self_correlation(Tensor(rng.random((L * M, HW))), ln_s, head, 3, 3)
print("reinforced state shape:", squeezed.shape, "(tanh range:",
      f"{squeezed.data.min():.3f} .. {squeezed.data.max():.3f})")
