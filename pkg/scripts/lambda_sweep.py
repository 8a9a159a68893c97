"""Sweep the physics-loss weight: fixed values against adaptive balancing.

Trains one denoiser per weighting setting on a shared inertial dataset and
evaluates each on the held-out split. Writes sweep.csv with one row per
setting so the recon/physics trade-off can be plotted directly.

Usage: python3 scripts/lambda_sweep.py [--lambdas 0,0.1,1,10] [--out DIR]
"""
import argparse
import csv
import dataclasses
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from physden.data import NoiseSpec, SimulateConfig, generate_dataset
from physden.metrics import evaluate
from physden.model import denoise
from physden.physics import CHANNEL_NAMES
from physden.training import TrainConfig, train


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--lambdas", default="0,0.1,1,10",
                        help="comma-separated fixed weights to sweep")
    parser.add_argument("--count", type=int, default=64)
    parser.add_argument("--duration", type=float, default=1.27)
    parser.add_argument("--dt", type=float, default=0.01)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--batch-size", type=int, default=2)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--widths", default="16,32,16")
    parser.add_argument("--noise-scale", type=float, default=0.2)
    parser.add_argument("--bias-frac", type=float, default=0.3)
    parser.add_argument("--out", default="out/lambda_sweep")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    sim = SimulateConfig(
        family="ins",
        count=args.count,
        duration=args.duration,
        dt=args.dt,
        seed=args.seed,
        noise_kind="gaussian",
        noise_scale=args.noise_scale,
        bias_frac={c: args.bias_frac for c in CHANNEL_NAMES["ins"]},
    )
    dataset = generate_dataset(sim)
    test_noisy = dataset.test_windows
    test_clean = [dataset.clean[i] for i in dataset.split[1]]

    base = TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        epochs_total=args.epochs,
        pretrain_fraction=0.2,
        lambda_mode="adaptive",
        noise=NoiseSpec(kind="gaussian", scale=0.1),
        seed=args.seed,
        widths=tuple(int(w) for w in args.widths.split(",")),
        predict_residual=True,
    )
    settings = [("adaptive", base)]
    for lam in (float(v) for v in args.lambdas.split(",")):
        cfg = dataclasses.replace(base, lambda_mode="fixed", lambda_value=lam)
        settings.append((f"fixed {lam:g}", cfg))

    rows = []
    for label, cfg in settings:
        start = time.perf_counter()
        result = train(dataset.train_windows, dataset.spec, cfg,
                       denoise_channels=dataset.denoise_channels,
                       norm_stats=dataset.norm_stats)
        elapsed = time.perf_counter() - start
        restored = [denoise(result.denoiser, w) for w in test_noisy]
        report = evaluate(label, restored, dataset.spec, test_clean,
                          channels=dataset.denoise_channels)
        rows.append((label, report.recon_mse, report.phys_mse, elapsed))
        print(f"{label:<12} recon_mse {report.recon_mse:.6g}  "
              f"phys_mse {report.phys_mse:.6g}  ({elapsed:.1f}s)")

    sweep_path = out_dir / "sweep.csv"
    with sweep_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "recon_mse", "phys_mse", "train_seconds"])
        for label, recon, phys, elapsed in rows:
            writer.writerow([label, f"{recon:.17g}", f"{phys:.17g}", f"{elapsed:.3f}"])
    print(f"\nsweep: {sweep_path}")

    best = min(rows, key=lambda r: r[1])
    print(f"lowest recon_mse: {best[0]} ({best[1]:.6g})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
