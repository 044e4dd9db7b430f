"""Command-line front end: dataset generation, training, evaluation, and
gradient checking.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure.
"""

import argparse
import os
import sys

import numpy as np

from .tensor import Tensor, NumericalError, ShapeError, no_grad
from . import data, metrics
from .config import ConfigError, default_config, echo_config, model_config_from, parse_config
from .model import ABLATION_VARIANTS, SrvpModel, ablation_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse defaults to exit code 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config(path):
    return parse_config(path) if path else default_config()


def cmd_gen_data(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    count = args.sequences if args.sequences else cfg["train_sequences"]
    t = cfg["input_frames"] + cfg["pred_frames"]
    batch = data.generate(count, t, cfg["height"], cfg["width"], cfg["glyphs"], cfg["seed"])
    data.write_dataset(batch, args.out)
    print(f"wrote {batch.num_sequences} sequences of shape "
          f"({t},{1},{cfg['height']},{cfg['width']}) to {args.out}")
    return EXIT_OK


def cmd_train(args):
    from .training import TrainConfig, fit

    cfg = _load_config(args.config)
    train_seqs = data.read_dataset(args.data)
    if args.val_data:
        val_seqs = data.read_dataset(args.val_data)
    else:
        # deterministic validation split: the trailing 10% (at least 1)
        n_val = max(1, train_seqs.num_sequences // 10)
        val_seqs = data.SequenceBatch(train_seqs.frames[-n_val:])
        train_seqs = data.SequenceBatch(train_seqs.frames[:-n_val])
    mc = model_config_from(cfg)
    if args.ablation:
        mc = ablation_config(mc, args.ablation)
    model = SrvpModel(mc, seed=cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    echo_config(cfg, os.path.join(args.out, "config.txt"))
    tc = TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr_max=cfg["lr_max"],
        lr_min=cfg["lr_min"], grad_clip=cfg["grad_clip"], seed=cfg["seed"],
    )
    result = fit(model, train_seqs, val_seqs, tc, out_dir=args.out, resume=args.resume)
    print(f"trained {tc.epochs} epochs; best val MSE {result.best_val_mse:.4f} "
          f"(epoch {result.best_epoch}); outputs in {args.out}")
    return EXIT_OK


def cmd_eval(args):
    from .training import load_checkpoint, load_params_into_model

    ck = load_checkpoint(args.ckpt)
    mc = ck["config"]
    model = SrvpModel(mc, seed=0)
    load_params_into_model(model, ck["params"], ck["model_state"])
    seqs = data.read_dataset(args.data)
    n, p = mc.input_frames, mc.pred_frames
    os.makedirs(args.out, exist_ok=True)
    reports = []
    dumped = 0
    seq_index = 0
    with no_grad():
        for inputs, targets in data.batch_iterator(seqs, n, p, batch_size=8):
            preds = model.rollout(Tensor(inputs), horizon=p)
            for i in range(preds.shape[0]):
                reports.append(metrics.sequence_report(preds.data[i], targets[i]))
                if dumped < args.dump_frames:
                    for t in range(n):
                        data.write_pgm(
                            os.path.join(args.out, f"seq{seq_index:03d}_in{t:02d}.pgm"),
                            inputs[i, t, 0],
                        )
                    for t in range(p):
                        data.write_pgm(
                            os.path.join(args.out, f"seq{seq_index:03d}_pred{t:02d}.pgm"),
                            preds.data[i, t, 0],
                        )
                    dumped += 1
                seq_index += 1
    report = metrics.aggregate(reports)
    metrics.write_report_csv(report, os.path.join(args.out, "metrics.csv"))
    print(f"evaluated {len(reports)} sequences: MSE {report.mean_mse:.4f} "
          f"PSNR {report.mean_psnr:.4f} SSIM {report.mean_ssim:.4f}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    tol = 1e-4
    results = run_suite(tol=tol, corrupt=args.corrupt)
    worst_name, worst = None, -1.0
    for name, err, passed in results:
        print(f"{'PASS' if passed else 'FAIL'} {name:<16} max relative error {err:.3e}")
        if err > worst:
            worst_name, worst = name, err
    if all(p for _, _, p in results):
        print(f"all {len(results)} checks passed (worst: {worst_name} at {worst:.3e})")
        return EXIT_OK
    print(f"gradient check FAILED (worst: {worst_name} at {worst:.3e})")
    return EXIT_NUMERIC


def build_parser():
    parser = _Parser(prog="srvp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a bouncing-glyph dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--sequences", type=int, default=None,
                   help="override the sequence count (default: train_sequences)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--val-data", default=None)
    p.add_argument("--resume", default=None, help="continue from a last.ckpt")
    p.add_argument("--ablation", choices=ABLATION_VARIANTS, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-frames", type=int, default=0,
                   help="write input+prediction PGMs for this many sequences")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--config", default=None, help="accepted for symmetry; the check "
                   "always runs the pinned desk-scale dimensions")
    p.add_argument("--corrupt", default=None, metavar="OP",
                   help="negative control: perturb one op's analytic gradient")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataFormatError, ShapeError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
