"""Training loop: pixelwise binary cross-entropy over closed-loop rollouts,
RMSProp with cosine-annealed learning rate, global-norm gradient clipping,
and bit-exact checkpointing (parameters, optimizer state, RNG state)."""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, NumericalError, no_grad, ones_like
from .data import DataFormatError, batch_iterator
from .model import ModelConfig
from . import metrics

CHECKPOINT_MAGIC = b"SRVPCK1\n"


# -- loss ---------------------------------------------------------------------


def bce_loss(pred, target):
    """Mean binary cross-entropy over every pixel of every frame.

    ``pred`` must lie in (0,1) (the sigmoid head guarantees it); it is
    clamped to [1e-7, 1-1e-7] before the logs. ``target`` may be a Tensor or
    array in [0,1].
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ValueError(f"bce_loss: shapes differ, {pred.shape} vs {t.shape}")
    p = pred.clip(1e-7, 1.0 - 1e-7)
    pos = Tensor(t)
    neg = Tensor(1.0 - t)
    loss = pos * p.log() + neg * (ones_like(p) - p).log()
    return -loss.mean()


# -- optimizer ----------------------------------------------------------------


@dataclass
class RmsPropState:
    alpha: float = 0.99
    eps: float = 1e-8
    v: dict = field(default_factory=dict)

    def ensure(self, named_params):
        for name, p in named_params:
            if name not in self.v:
                self.v[name] = np.zeros_like(p.data)


def rmsprop_step(named_params, grads, state, lr):
    """v <- alpha v + (1-alpha) g^2 ; theta <- theta - lr g / (sqrt(v) + eps).

    Parameters update in place; every entry is independent elementwise.
    """
    state.ensure(named_params)
    for (name, p), g in zip(named_params, grads):
        if g.shape != p.data.shape:
            raise ValueError(f"rmsprop_step: grad shape {g.shape} != param {p.data.shape} ({name})")
        v = state.v[name]
        v *= state.alpha
        v += (1.0 - state.alpha) * g * g
        p.data -= lr * g / (np.sqrt(v) + state.eps)
    return named_params


def cosine_lr(epoch, total_epochs, lr_max, lr_min=1e-6):
    """Cosine annealing from lr_max (epoch 0) down to lr_min (epoch == total)."""
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * epoch / total_epochs))


def clip_global_norm(grads, max_norm):
    """Scale all gradients jointly so the global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        grads = [g * scale for g in grads]
    return grads, total


# -- checkpoints ----------------------------------------------------------------


def _write_named_arrays(f, items):
    f.write(struct.pack("<I", len(items)))
    for name, arr in items:
        nb = name.encode()
        f.write(struct.pack("<H", len(nb)))
        f.write(nb)
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_named_arrays(f):
    (count,) = struct.unpack("<I", f.read(4))
    out = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", f.read(2))
        name = f.read(nlen).decode()
        (ndim,) = struct.unpack("<B", f.read(1))
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape).copy()
        out.append((name, arr))
    return out


def save_checkpoint(path, model, opt_state, epoch, best_val_mse, rng_state):
    """Serialize config, named parameters, model state (batchnorm running
    statistics), optimizer state, epoch counter and RNG state; the byte
    layout is fully deterministic."""
    meta = {
        "config": model.config.to_dict(),
        "epoch": int(epoch),
        "best_val_mse": None if best_val_mse is None else float(best_val_mse),
        "rng_state": rng_state,
        "optimizer": {"alpha": opt_state.alpha, "eps": opt_state.eps},
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    named = model.named_parameters()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        _write_named_arrays(f, [(n, p.data) for n, p in named])
        opt_state.ensure(named)
        _write_named_arrays(f, [(n, opt_state.v[n]) for n, _ in named])
        _write_named_arrays(f, model.named_state())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"bad magic in checkpoint {path}")
        (mlen,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(mlen).decode())
        params = _read_named_arrays(f)
        opt_v = _read_named_arrays(f)
        model_state = _read_named_arrays(f)
    state = RmsPropState(alpha=meta["optimizer"]["alpha"], eps=meta["optimizer"]["eps"])
    state.v = dict(opt_v)
    return {
        "config": ModelConfig.from_dict(meta["config"]),
        "params": params,
        "model_state": model_state,
        "opt_state": state,
        "epoch": meta["epoch"],
        "best_val_mse": meta["best_val_mse"],
        "rng_state": meta["rng_state"],
    }


def load_params_into_model(model, params, model_state=()):
    """Copy named arrays into the model; any name or shape mismatch is a
    data-format error."""
    current = dict(model.named_parameters())
    loaded = dict(params)
    if set(current) != set(loaded):
        missing = sorted(set(current) ^ set(loaded))
        raise DataFormatError(f"checkpoint parameter names do not match model: {missing[:4]}")
    for name, arr in params:
        if current[name].data.shape != arr.shape:
            raise DataFormatError(
                f"checkpoint shape mismatch for {name}: {arr.shape} vs {current[name].data.shape}"
            )
        current[name].data[:] = arr
    expected_state = [n for n, _ in model.named_state()]
    if sorted(expected_state) != sorted(n for n, _ in model_state):
        raise DataFormatError("checkpoint model state does not match model")
    for name, arr in model_state:
        model.set_state(name, arr)


# -- evaluation helper ------------------------------------------------------------


def evaluate_mse(model, seqs, n_input, n_predict, batch_size=8):
    """Mean per-pixel MSE (0-255 scale) of closed-loop predictions."""
    total, count = 0.0, 0
    with no_grad():
        for inputs, targets in batch_iterator(seqs, n_input, n_predict, batch_size, shuffle_seed=None):
            preds = model.rollout(Tensor(inputs), horizon=n_predict)
            for i in range(preds.shape[0]):
                for t in range(n_predict):
                    total += metrics.mse(preds.data[i, t], targets[i, t])
                    count += 1
    return total / count


# -- fit -----------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    grad_clip: float = 1.0
    seed: int = 0


@dataclass
class FitResult:
    rows: list
    best_val_mse: float
    best_epoch: int


def fit(model, train_seqs, val_seqs, train_cfg, out_dir=None, resume=None):
    """Train with shuffled batches, closed-loop rollouts, BCE loss, gradient
    clipping and RMSProp under the cosine schedule.

    Logs one row per epoch (epoch, lr, train_loss, val_mse) and, when
    ``out_dir`` is given, writes ``log.csv`` plus ``last.ckpt`` every epoch
    and ``best.ckpt`` whenever the validation MSE improves. ``resume`` points
    at a ``last.ckpt`` and continues identically to an uninterrupted run.
    """
    cfg = model.config
    n, p = cfg.input_frames, cfg.pred_frames
    opt = RmsPropState()
    start_epoch = 0
    best_val = None
    best_epoch = -1
    master_rng = np.random.default_rng(train_cfg.seed)

    if resume is not None:
        ck = load_checkpoint(resume)
        if ck["config"] != cfg:
            raise DataFormatError("checkpoint config does not match model config")
        load_params_into_model(model, ck["params"], ck["model_state"])
        opt = ck["opt_state"]
        start_epoch = ck["epoch"]
        best_val = ck["best_val_mse"]
        master_rng.bit_generator.state = ck["rng_state"]

    named = model.named_parameters()
    rows = []
    log_path = None
    if out_dir is not None:
        log_path = f"{out_dir}/log.csv"
        mode = "a" if resume is not None else "w"
        with open(log_path, mode) as f:
            if resume is None:
                f.write("epoch,lr,train_loss,val_mse\n")

    for epoch in range(start_epoch, train_cfg.epochs):
        lr = float(cosine_lr(epoch, train_cfg.epochs, train_cfg.lr_max, train_cfg.lr_min))
        losses = []
        # per-epoch shuffle derived from (seed, epoch): resume-safe without
        # consuming the master RNG stream
        it = batch_iterator(
            train_seqs, n, p, train_cfg.batch_size, shuffle_seed=(train_cfg.seed, epoch)
        )
        for batch_idx, (inputs, targets) in enumerate(it):
            try:
                preds = model.rollout(Tensor(inputs), horizon=p, training=True)
                loss = bce_loss(preds, targets)
            except NumericalError as e:
                raise NumericalError(
                    f"non-finite values at epoch {epoch}, batch {batch_idx}: {e}"
                ) from e
            val = loss.item()
            if not np.isfinite(val):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {batch_idx}")
            model.zero_grad()
            loss.backward()
            grads = [np.zeros_like(t.data) if t.grad is None else t.grad for _, t in named]
            grads, _ = clip_global_norm(grads, train_cfg.grad_clip)
            rmsprop_step(named, grads, opt, lr)
            losses.append(val)
        train_loss = float(np.mean(losses))
        # eval batching does not affect values (all ops are per-sequence in
        # eval mode); a wider batch just amortizes dispatch overhead
        val_mse = evaluate_mse(model, val_seqs, n, p, max(train_cfg.batch_size, 16))
        rows.append({"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_mse": val_mse})
        if log_path is not None:
            with open(log_path, "a") as f:
                f.write(f"{epoch},{lr!r},{train_loss!r},{val_mse!r}\n")
        improved = best_val is None or val_mse < best_val
        if improved:
            best_val = val_mse
            best_epoch = epoch
        if out_dir is not None:
            rng_state = master_rng.bit_generator.state
            save_checkpoint(f"{out_dir}/last.ckpt", model, opt, epoch + 1, best_val, rng_state)
            if improved:
                save_checkpoint(f"{out_dir}/best.ckpt", model, opt, epoch + 1, best_val, rng_state)
    return FitResult(rows=rows, best_val_mse=best_val, best_epoch=best_epoch)
