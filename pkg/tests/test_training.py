import numpy as np
import pytest

from srvp.tensor import NumericalError, Tensor
from srvp.data import DataFormatError, generate
from srvp.model import ModelConfig, SrvpModel
from srvp.training import (
    RmsPropState,
    TrainConfig,
    bce_loss,
    clip_global_norm,
    cosine_lr,
    evaluate_mse,
    fit,
    load_checkpoint,
    load_params_into_model,
    rmsprop_step,
    save_checkpoint,
)


def tiny_config():
    return ModelConfig(num_layers=1, hidden_channels=4, in_channels=1, height=16, width=16,
                       input_frames=2, pred_frames=2)


def tiny_setup(seed=0, sequences=8):
    cfg = tiny_config()
    train = generate(sequences, 4, 16, 16, 1, seed=seed)
    val = generate(4, 4, 16, 16, 1, seed=seed + 100)
    return cfg, train, val


# -- bce ----------------------------------------------------------------------


def test_bce_uniform_prediction():
    pred = Tensor(np.full((2, 3, 3), 0.5))
    target = np.random.default_rng(0).integers(0, 2, (2, 3, 3)).astype(float)
    assert abs(bce_loss(pred, target).item() - np.log(2.0)) <= 1e-12


def test_bce_matching_soft_targets():
    # frozen from -(0.9 ln 0.9 + 0.1 ln 0.1)
    pred = Tensor(np.full((4, 4), 0.9))
    target = np.full((4, 4), 0.9)
    assert abs(bce_loss(pred, target).item() - 0.3250829733914482) <= 1e-9


def test_bce_gradient_at_half():
    pred = Tensor(np.full((2, 2), 0.5), requires_grad=True)
    loss = bce_loss(pred, np.ones((2, 2)))
    loss.backward()
    # pre-mean gradient of -t/p at (0.5, 1) is -2 per element
    assert np.allclose(pred.grad * pred.size, -2.0, atol=1e-9)


def test_bce_shape_mismatch():
    with pytest.raises(ValueError):
        bce_loss(Tensor(np.full((2, 2), 0.5)), np.ones((2, 3)))


# -- rmsprop -------------------------------------------------------------------


def named_param(value, name="p"):
    return [(name, Tensor(np.array(value), requires_grad=True))]


def test_rmsprop_first_step_closed_form():
    params = named_param([0.0])
    state = RmsPropState()
    rmsprop_step(params, [np.array([1.0])], state, lr=0.1)
    assert abs(state.v["p"][0] - 0.01) <= 1e-15
    assert abs(params[0][1].data[0] - (-0.1 / (0.1 + 1e-8))) <= 1e-9


def test_rmsprop_zero_gradient_decays_v():
    params = named_param([1.5])
    state = RmsPropState()
    state.v["p"] = np.array([0.04])
    rmsprop_step(params, [np.array([0.0])], state, lr=0.1)
    assert params[0][1].data[0] == 1.5
    assert abs(state.v["p"][0] - 0.99 * 0.04) <= 1e-15


def test_rmsprop_elementwise_independence():
    params = [("a", Tensor(np.zeros(2), requires_grad=True))]
    state = RmsPropState()
    rmsprop_step(params, [np.array([1.0, 0.0])], state, lr=0.1)
    assert params[0][1].data[1] == 0.0
    assert params[0][1].data[0] != 0.0


def test_rmsprop_shape_mismatch():
    with pytest.raises(ValueError):
        rmsprop_step(named_param([0.0, 1.0]), [np.zeros(3)], RmsPropState(), 0.1)


def test_rmsprop_determinism():
    def run():
        params = named_param([0.3, -0.2])
        state = RmsPropState()
        for i in range(5):
            rmsprop_step(params, [np.array([0.1 * i, -0.05])], state, lr=0.01)
        return params[0][1].data.copy()

    assert np.array_equal(run(), run())


# -- cosine schedule ----------------------------------------------------------------


def test_cosine_endpoints_and_midpoint():
    assert cosine_lr(0, 10, 1e-3) == pytest.approx(1e-3)
    assert cosine_lr(10, 10, 1e-3) == pytest.approx(1e-6)
    assert cosine_lr(5, 10, 1e-3, 1e-6) == pytest.approx((1e-3 + 1e-6) / 2)


def test_cosine_epoch_out_of_range():
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 1e-3)
    with pytest.raises(ValueError):
        cosine_lr(-1, 10, 1e-3)


# -- clipping ----------------------------------------------------------------------------


def test_clip_large_gradients():
    grads = [np.full((4,), 10.0), np.full((3,), -5.0)]
    clipped, norm = clip_global_norm(grads, 1.0)
    post = np.sqrt(sum((g**2).sum() for g in clipped))
    assert norm > 1.0
    assert post <= 1.0 + 1e-9


def test_clip_small_gradients_untouched():
    grads = [np.array([0.1, 0.2])]
    clipped, norm = clip_global_norm(grads, 1.0)
    assert clipped[0] is grads[0]
    assert norm < 1.0


# -- fit ----------------------------------------------------------------------------------


def test_fit_smoke_and_determinism(tmp_path):
    cfg, train, val = tiny_setup(seed=1)

    def run(out):
        model = SrvpModel(cfg, seed=5)
        tc = TrainConfig(epochs=2, batch_size=4, lr_max=1e-4, seed=5)
        res = fit(model, train, val, tc, out_dir=str(out))
        return res, model

    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    out_a.mkdir(), out_b.mkdir()
    res_a, model_a = run(out_a)
    res_b, model_b = run(out_b)
    assert len(res_a.rows) == 2
    assert all(np.isfinite(r["train_loss"]) for r in res_a.rows)
    assert (out_a / "log.csv").read_bytes() == (out_b / "log.csv").read_bytes()
    for (na, pa), (nb, pb) in zip(model_a.named_parameters(), model_b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    header = (out_a / "log.csv").read_text().split("\n")[0]
    assert header == "epoch,lr,train_loss,val_mse"


def test_fit_aborts_on_poisoned_parameters():
    cfg, train, val = tiny_setup(seed=2)
    model = SrvpModel(cfg, seed=0)
    model.head.weight.data[:] = np.nan
    with pytest.raises(NumericalError, match="batch 0"):
        fit(model, train, val, TrainConfig(epochs=1, batch_size=4, seed=0))


# -- checkpoints ----------------------------------------------------------------------------


def test_checkpoint_roundtrip_bytes(tmp_path):
    cfg, train, val = tiny_setup(seed=3)
    model = SrvpModel(cfg, seed=7)
    state = RmsPropState()
    state.ensure(model.named_parameters())
    rng_state = np.random.default_rng(7).bit_generator.state
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, model, state, epoch=3, best_val_mse=12.5, rng_state=rng_state)
    ck = load_checkpoint(p1)
    assert ck["epoch"] == 3
    assert ck["best_val_mse"] == 12.5
    assert ck["config"] == cfg
    model2 = SrvpModel(cfg, seed=99)
    load_params_into_model(model2, ck["params"], ck["model_state"])
    for (_, a), (_, b) in zip(model.named_parameters(), model2.named_parameters()):
        assert np.array_equal(a.data, b.data)
    for (_, a), (_, b) in zip(model.named_state(), model2.named_state()):
        assert np.array_equal(a, b)
    save_checkpoint(p2, model2, ck["opt_state"], 3, 12.5, ck["rng_state"])
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"WRONGMAG" + b"\x00" * 16)
    with pytest.raises(DataFormatError, match="bad magic"):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch(tmp_path):
    cfg, _, _ = tiny_setup()
    model = SrvpModel(cfg, seed=1)
    state = RmsPropState()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, model, state, 0, None, np.random.default_rng(0).bit_generator.state)
    other = SrvpModel(ModelConfig(num_layers=1, hidden_channels=8, in_channels=1, height=16,
                                  width=16, input_frames=2, pred_frames=2), seed=1)
    ck = load_checkpoint(path)
    with pytest.raises(DataFormatError):
        load_params_into_model(other, ck["params"], ck["model_state"])


def test_resume_equivalence_bit_exact(tmp_path):
    cfg, train, val = tiny_setup(seed=4)

    # uninterrupted: two epochs
    model_full = SrvpModel(cfg, seed=9)
    out_full = tmp_path / "full"
    out_full.mkdir()
    fit(model_full, train, val, TrainConfig(epochs=2, batch_size=4, seed=9), out_dir=str(out_full))

    # interrupted: one epoch, then resume for the second
    model_res = SrvpModel(cfg, seed=9)
    out_res = tmp_path / "resumed"
    out_res.mkdir()
    fit(model_res, train, val, TrainConfig(epochs=1, batch_size=4, seed=9), out_dir=str(out_res))
    model_res2 = SrvpModel(cfg, seed=9)
    fit(model_res2, train, val, TrainConfig(epochs=2, batch_size=4, seed=9),
        out_dir=str(out_res), resume=str(out_res / "last.ckpt"))

    for (na, pa), (nb, pb) in zip(model_full.named_parameters(), model_res2.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data), na
    assert (out_full / "last.ckpt").read_bytes() == (out_res / "last.ckpt").read_bytes()


def test_resume_config_mismatch(tmp_path):
    cfg, train, val = tiny_setup(seed=5)
    model = SrvpModel(cfg, seed=0)
    out = tmp_path / "run"
    out.mkdir()
    fit(model, train, val, TrainConfig(epochs=1, batch_size=4, seed=0), out_dir=str(out))
    other_cfg = ModelConfig(num_layers=2, hidden_channels=4, in_channels=1, height=16, width=16,
                            input_frames=2, pred_frames=2)
    with pytest.raises(DataFormatError, match="config"):
        fit(SrvpModel(other_cfg, seed=0), train, val,
            TrainConfig(epochs=2, batch_size=4, seed=0), resume=str(out / "last.ckpt"))


def test_evaluate_mse_batch_size_invariant():
    cfg, train, _ = tiny_setup(seed=6)
    model = SrvpModel(cfg, seed=3)
    a = evaluate_mse(model, train, 2, 2, batch_size=2)
    b = evaluate_mse(model, train, 2, 2, batch_size=8)
    assert abs(a - b) <= 1e-9
