"""Full video-prediction model: ConvGRU encoder/forecaster, the two
attention branches, and the sigmoid output head, plus the plain recurrent
baseline and the ablation variants (each branch can be switched off)."""

from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import ShapeError, concat, stack
from .layers import Conv2d
from .recurrent import GruStack, forecaster_step
from .attention import StandardAttention
from .reinforced import ReinforcedAttention

ABLATION_VARIANTS = ("full", "without-sa", "without-rfa", "without-crossatt")


@dataclass
class ModelConfig:
    num_layers: int = 2
    hidden_channels: int = 16
    reinforced_channels: int = 0          # 0 means "same as hidden_channels"
    in_channels: int = 1
    height: int = 32
    width: int = 32
    input_frames: int = 10
    pred_frames: int = 10
    kernel_size: int = 3
    use_sa: bool = True
    use_rfa: bool = True
    use_cross_attention: bool = True
    temporal_logit_order: str = "norm_then_scale"

    def __post_init__(self):
        if self.reinforced_channels == 0:
            self.reinforced_channels = self.hidden_channels
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.hidden_channels < 1:
            raise ValueError(f"hidden_channels must be >= 1, got {self.hidden_channels}")
        if self.reinforced_channels != self.hidden_channels:
            raise ValueError("reinforced_channels must equal hidden_channels")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.temporal_logit_order not in ("norm_then_scale", "scale_then_norm"):
            raise ValueError(f"unknown temporal_logit_order {self.temporal_logit_order!r}")

    def head_input_channels(self):
        width = self.num_layers * self.hidden_channels
        if self.use_sa:
            width += 2 * self.hidden_channels
        if self.use_rfa:
            width += 2 * self.reinforced_channels
        return width

    def expected_parameter_count(self):
        """Closed-form parameter count; asserted against the built model."""
        l, m, mp = self.num_layers, self.hidden_channels, self.reinforced_channels
        c, k2 = self.in_channels, self.kernel_size**2
        hw = self.height * self.width
        cell = lambda cin: 3 * m * cin * k2 + 3 * m * m * k2 + 3 * m
        stack_n = cell(c) + (l - 1) * cell(m)
        n = 2 * stack_n                                   # encoder + forecaster
        n_proj = 3 + (6 if self.use_cross_attention else 0)
        if self.use_sa:
            n += n_proj * m * m
        if self.use_rfa:
            n += m * c * k2 + 2 * m + m * m * k2 + 2 * m  # extractor convs + bn affines
            n += 2 * m * hw                               # temporal layernorm affine
            n += 2 * l * m * hw                           # spatial layernorm affine
            n += mp * l * m + mp                          # 1x1 squeeze head
            n += n_proj * mp * mp
        n += self.in_channels * self.head_input_channels() + self.in_channels
        return n

    def baseline(self):
        """Plain encoder-forecaster config: both attention branches off."""
        return replace(self, use_sa=False, use_rfa=False)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def ablation_config(config, variant):
    """Table-of-variants helper: returns the config for a named ablation."""
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation {variant!r}, expected one of {ABLATION_VARIANTS}")
    if variant == "without-sa":
        return replace(config, use_sa=False)
    if variant == "without-rfa":
        return replace(config, use_rfa=False)
    if variant == "without-crossatt":
        return replace(config, use_cross_attention=False)
    return replace(config)


class RolloutState:
    """Per-rollout context: encoder outputs, forecaster carry, and the
    reinforced reference features (computed once, reused for every step)."""

    def __init__(self, carry, h_e_flat, h_e_reinforced, last_frame, training, squeeze):
        self.carry = carry
        self.h_e_flat = h_e_flat
        self.h_e_reinforced = h_e_reinforced
        self.last_frame = last_frame
        self.training = training
        self.squeeze = squeeze


class SrvpModel:
    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.encoder = GruStack(c.num_layers, c.in_channels, c.hidden_channels,
                                c.kernel_size, rng)
        self.forecaster = GruStack(c.num_layers, c.in_channels, c.hidden_channels,
                                   c.kernel_size, rng)
        self.sa = None
        if c.use_sa:
            self.sa = StandardAttention(c.hidden_channels, rng,
                                        c.use_cross_attention, c.temporal_logit_order)
        self.rfa = None
        if c.use_rfa:
            self.rfa = ReinforcedAttention(
                c.in_channels, c.hidden_channels, c.reinforced_channels,
                c.num_layers, c.height, c.width, c.kernel_size, rng,
                c.use_cross_attention, c.temporal_logit_order,
            )
        self.head = Conv2d(c.head_input_channels(), c.in_channels, 1, rng)

    # -- parameters ---------------------------------------------------------

    def named_parameters(self):
        ps = [(f"encoder.{n}", p) for n, p in self.encoder.parameters()]
        ps += [(f"forecaster.{n}", p) for n, p in self.forecaster.parameters()]
        if self.sa is not None:
            ps += [(f"sa.{n}", p) for n, p in self.sa.parameters()]
        if self.rfa is not None:
            ps += [(f"rfa.{n}", p) for n, p in self.rfa.parameters()]
        ps += [(f"head.{n}", p) for n, p in self.head.parameters()]
        return ps

    def parameter_count(self):
        return sum(p.size for _, p in self.named_parameters())

    def named_state(self):
        """Mutable non-parameter state (batchnorm running statistics)."""
        if self.rfa is None:
            return []
        return [(f"rfa.{n}", a) for n, a in self.rfa.state()]

    def set_state(self, name, arr):
        sub, rest = name.split(".", 1)
        assert sub == "rfa" and self.rfa is not None
        self.rfa.set_state(rest, arr)

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None

    # -- forward ------------------------------------------------------------

    def begin_rollout(self, frames, training=False):
        """Encode the input frames and prepare the per-rollout context.

        ``frames`` is (N,C,H,W) or (B,N,C,H,W) with values in [0,1].
        """
        c = self.config
        squeeze = frames.ndim == 4
        if squeeze:
            frames = frames.reshape((1,) + frames.shape)
        b, n, _, h, w = frames.shape
        if frames.shape[2:] != (c.in_channels, c.height, c.width):
            raise ShapeError(
                f"frames {frames.shape} do not match configured "
                f"({c.in_channels},{c.height},{c.width})"
            )
        h_e_seq, carry = self.encoder.encode(frames)          # (B,N,M,H,W), (B,L,M,H,W)
        h_e_flat = h_e_seq.reshape((b, n, c.hidden_channels * h * w))
        h_e_reinforced = None
        if self.rfa is not None:
            h_e_reinforced = self.rfa.reinforce_reference(frames, h_e_flat, training)
        return RolloutState(carry, h_e_flat, h_e_reinforced, frames[:, n - 1], training, squeeze)

    def predict_step(self, state, x_t):
        """One forecast step: consumes a frame, emits the next frame in (0,1)."""
        if not isinstance(state, RolloutState) or state.carry is None:
            raise ValueError("predict_step needs an initialized rollout context")
        c = self.config
        squeeze = x_t.ndim == 3
        if squeeze:
            x_t = x_t.reshape((1,) + x_t.shape)
        b = x_t.shape[0]
        h, w = c.height, c.width
        m, l = c.hidden_channels, c.num_layers

        h_d, state.carry = forecaster_step(x_t, state.carry, self.forecaster)
        h_d_cat = h_d.reshape((b, l * m, h, w))
        parts = [h_d_cat]
        if self.sa is not None:
            f1 = self.sa(
                h_d.reshape((b, l, m * h * w)),
                h_d.reshape((b, l, m, h * w)),
                state.h_e_flat,
            )
            parts.append(f1.reshape((b, 2 * m, h, w)))
        if self.rfa is not None:
            h_d_reinforced = self.rfa.reinforce_target(h_d_cat.reshape((b, l * m, h * w)))
            f2 = self.rfa.fuse(h_d_reinforced, state.h_e_reinforced)
            parts.append(f2.reshape((b, 2 * c.reinforced_channels, h, w)))
        head_in = parts[0] if len(parts) == 1 else concat(parts, axis=1)
        pred = self.head(head_in).sigmoid()
        return pred.reshape(pred.shape[1:]) if squeeze else pred

    def rollout(self, frames, horizon=None, training=False):
        """Closed-loop prediction: the first step consumes the last input
        frame, every later step consumes the previous prediction.

        Returns (P,C,H,W) for unbatched input, else (B,P,C,H,W).
        """
        c = self.config
        p = c.pred_frames if horizon is None else horizon
        if p < 1:
            raise ValueError(f"prediction horizon must be >= 1, got {p}")
        state = self.begin_rollout(frames, training)
        x = state.last_frame
        preds = []
        for _ in range(p):
            x = self.predict_step(state, x)
            preds.append(x)
        out = stack(preds, axis=1)
        return out.reshape(out.shape[1:]) if state.squeeze else out


def build_model(config, seed=0):
    return SrvpModel(config, seed)


def build_baseline(config, seed=0):
    """Plain ConvGRU encoder-forecaster (no attention branches)."""
    return SrvpModel(config.baseline(), seed)
