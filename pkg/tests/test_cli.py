import numpy as np
import pytest

from srvp.cli import main
from srvp.data import read_dataset
from srvp.training import load_checkpoint


SMOKE_CFG = """
# smoke-scale settings
height = 16
width = 16
input_frames = 3
pred_frames = 2
hidden_channels = 4
layers = 1
glyphs = 1
train_sequences = 8
val_sequences = 4
epochs = 2
batch_size = 4
seed = 11
"""


@pytest.fixture
def smoke(tmp_path):
    cfg = tmp_path / "smoke.cfg"
    cfg.write_text(SMOKE_CFG)
    data = tmp_path / "train.ds"
    assert main(["gen-data", "--out", str(data), "--config", str(cfg)]) == 0
    return tmp_path, cfg, data


def test_gen_data_writes_magic(smoke):
    _, _, data = smoke
    assert data.read_bytes()[:8] == b"SRVPDS1\n"
    batch = read_dataset(data)
    assert batch.frames.shape == (8, 5, 1, 16, 16)


def test_gen_data_seed_repeatable(smoke, tmp_path):
    _, cfg, data = smoke
    other = tmp_path / "other.ds"
    assert main(["gen-data", "--out", str(other), "--config", str(cfg), "--seed", "11"]) == 0
    assert other.read_bytes() == data.read_bytes()
    third = tmp_path / "third.ds"
    assert main(["gen-data", "--out", str(third), "--config", str(cfg), "--seed", "12"]) == 0
    assert third.read_bytes() != data.read_bytes()


def test_unknown_config_key_exit_usage(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("heighth = 16\n")
    code = main(["gen-data", "--out", str(tmp_path / "x.ds"), "--config", str(cfg)])
    assert code == 1
    assert "heighth" in capsys.readouterr().err


def test_malformed_config_line(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("height 16\n")
    assert main(["gen-data", "--out", str(tmp_path / "x.ds"), "--config", str(cfg)]) == 1


def test_usage_error_exit_code():
    assert main(["gen-data"]) == 1          # missing --out
    assert main(["no-such-command"]) == 1


def test_train_smoke_and_artifacts(smoke):
    tmp, cfg, data = smoke
    out = tmp / "run"
    assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(out)]) == 0
    log = (out / "log.csv").read_text().strip().split("\n")
    assert log[0] == "epoch,lr,train_loss,val_mse"
    assert len(log) == 1 + 2                # one row per epoch
    assert (out / "config.txt").exists()
    assert (out / "best.ckpt").exists() and (out / "last.ckpt").exists()
    echoed = dict(line.split("=", 1) for line in (out / "config.txt").read_text().split())
    assert echoed["height"] == "16" and echoed["epochs"] == "2"


def test_train_missing_data_exit_data(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope.ds"), "--out", str(tmp_path / "o")]) == 2


def test_train_records_ablation_flag(smoke):
    tmp, cfg, data = smoke
    out = tmp / "ablate"
    assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(out),
                 "--ablation", "without-rfa"]) == 0
    ck = load_checkpoint(out / "best.ckpt")
    assert ck["config"].use_rfa is False
    assert ck["config"].use_sa is True


def test_train_determinism_same_seed(smoke):
    tmp, cfg, data = smoke
    out1, out2 = tmp / "d1", tmp / "d2"
    assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(out2)]) == 0
    assert (out1 / "log.csv").read_bytes() == (out2 / "log.csv").read_bytes()
    assert (out1 / "best.ckpt").read_bytes() == (out2 / "best.ckpt").read_bytes()


def test_eval_outputs(smoke):
    tmp, cfg, data = smoke
    run = tmp / "run"
    assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(run)]) == 0
    out = tmp / "eval"
    assert main(["eval", "--data", str(data), "--ckpt", str(run / "best.ckpt"),
                 "--out", str(out), "--dump-frames", "2"]) == 0
    lines = (out / "metrics.csv").read_text().strip().split("\n")
    assert lines[0] == "frame_index,mse,psnr,ssim"
    assert len(lines) == 1 + 2 + 1          # P rows plus the mean row
    for line in lines[1:]:
        for cell in line.split(",")[1:]:
            assert np.isfinite(float(cell))
    # N + P pgm files for each of the two requested sequences
    for s in range(2):
        ins = sorted(out.glob(f"seq{s:03d}_in*.pgm"))
        preds = sorted(out.glob(f"seq{s:03d}_pred*.pgm"))
        assert len(ins) == 3 and len(preds) == 2
    assert not list(out.glob("seq002_*"))


def test_eval_checkpoint_mismatch_exit_data(smoke, tmp_path):
    tmp, cfg, data = smoke
    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    assert main(["eval", "--data", str(data), "--ckpt", str(bogus),
                 "--out", str(tmp_path / "e")]) == 2


def test_gradcheck_corrupt_negative_control(capsys):
    code = main(["gradcheck", "--corrupt", "relu"])
    out = capsys.readouterr().out
    assert code == 3
    assert "FAIL relu" in out


def test_gradcheck_report_lists_each_op_once():
    from srvp.gradcheck import registered_ops, run_suite

    results = run_suite(include_end_to_end=False)
    names = [n for n, _, _ in results]
    assert names == registered_ops()
    assert len(names) == len(set(names))
