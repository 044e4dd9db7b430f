"""Plain key=value run configuration: one pair per line, ``#`` comments,
every key has a documented default, unknown keys are rejected."""


class ConfigError(ValueError):
    """Raised for unknown keys or unparseable values."""


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (default, parser, help)
DEFAULTS = {
    # model
    "layers": (2, int, "recurrent layers L in encoder and forecaster"),
    "hidden_channels": (16, int, "hidden state channels M per layer"),
    "kernel_size": (3, int, "convolution kernel size (odd)"),
    "use_sa": (True, _bool, "enable the standard attention branch"),
    "use_rfa": (True, _bool, "enable the reinforced feature attention branch"),
    "use_cross_attention": (True, _bool, "fuse context maps with cross-attention"),
    "temporal_logit_order": (
        "norm_then_scale",
        str,
        "temporal attention logits: norm_then_scale | scale_then_norm",
    ),
    # data
    "height": (32, int, "frame height"),
    "width": (32, int, "frame width"),
    "input_frames": (10, int, "observed frames N per sequence"),
    "pred_frames": (10, int, "predicted frames P per sequence"),
    "glyphs": (1, int, "moving glyphs per sequence"),
    "train_sequences": (400, int, "training sequences to generate"),
    "val_sequences": (32, int, "validation sequences to generate"),
    "test_sequences": (100, int, "test sequences to generate"),
    "seed": (0, int, "master seed for data, init and training"),
    # training
    "lr_max": (1e-4, float, "peak learning rate of the cosine schedule"),
    "lr_min": (1e-6, float, "floor learning rate of the cosine schedule"),
    "epochs": (30, int, "training epochs"),
    "batch_size": (8, int, "sequences per training batch"),
    "grad_clip": (1.0, float, "global gradient-norm clip"),
}


def default_config():
    return {k: v for k, (v, _, _) in DEFAULTS.items()}


def parse_config(path):
    """Read a key=value file on top of the defaults."""
    cfg = default_config()
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            _, parser, _ = DEFAULTS[key]
            try:
                cfg[key] = parser(value)
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {e}")
    return cfg


def echo_config(cfg, path):
    """Write the effective configuration (defaults applied) as key=value."""
    with open(path, "w") as f:
        for key in DEFAULTS:
            f.write(f"{key}={cfg[key]}\n")


def model_config_from(cfg):
    from .model import ModelConfig

    return ModelConfig(
        num_layers=cfg["layers"],
        hidden_channels=cfg["hidden_channels"],
        in_channels=1,
        height=cfg["height"],
        width=cfg["width"],
        input_frames=cfg["input_frames"],
        pred_frames=cfg["pred_frames"],
        kernel_size=cfg["kernel_size"],
        use_sa=cfg["use_sa"],
        use_rfa=cfg["use_rfa"],
        use_cross_attention=cfg["use_cross_attention"],
        temporal_logit_order=cfg["temporal_logit_order"],
    )
