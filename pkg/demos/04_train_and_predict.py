# End-to-end at micro scale: train the full model and the plain recurrent
# baseline for a few epochs, then compare closed-loop predictions.
# Takes a couple of minutes on a laptop core.

import os
import numpy as np

from srvp import data, metrics
from srvp.tensor import Tensor, no_grad
from srvp.model import ModelConfig, SrvpModel, build_baseline
from srvp.training import TrainConfig, fit

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

cfg = ModelConfig(num_layers=2, hidden_channels=8, in_channels=1, height=16, width=16,
                  input_frames=5, pred_frames=5)
train = data.generate(48, 10, 16, 16, 1, seed=0)
val = data.generate(8, 10, 16, 16, 1, seed=1)
test = data.generate(16, 10, 16, 16, 1, seed=2)
tc = TrainConfig(epochs=6, batch_size=8, lr_max=1e-4, seed=0)


def test_report(model):
    reports = []
    with no_grad():
        for inputs, targets in data.batch_iterator(test, 5, 5, 16):
            preds = model.rollout(Tensor(inputs), horizon=5)
            for i in range(preds.shape[0]):
                reports.append(metrics.sequence_report(preds.data[i], targets[i]))
    return metrics.aggregate(reports), preds


for name, model in (("full model", SrvpModel(cfg, seed=0)),
                    ("plain baseline", build_baseline(cfg, seed=0))):
    print(f"\n=== {name} ({model.parameter_count()} parameters) ===")
    result = fit(model, train, val, tc)
    for row in result.rows:
        print(f"  epoch {row['epoch']}  lr {row['lr']:.2e}  "
              f"train BCE {row['train_loss']:.4f}  val MSE {row['val_mse']:.1f}")
    report, preds = test_report(model)
    print(f"  test: MSE {report.mean_mse:.1f}  PSNR {report.mean_psnr:.2f} dB  "
          f"SSIM {report.mean_ssim:.4f}")
    print("  per-horizon MSE:", np.round(report.frame_mse, 1))

# dump the last batch's first sequence for visual inspection
for t in range(5):
    data.write_pgm(os.path.join(out_dir, f"pred_t{t}.pgm"), preds.data[0, t, 0])
print("\nwrote", out_dir + "/pred_t*.pgm")
