"""Command-line surface: simulate | train | denoise | eval | gradcheck | bias-demo.

Configuration is an INI file plus repeated ``--set section.key=value``
overrides; the command line wins. Artifacts land in a single run directory
(default ``out/<UTC timestamp>-s<seed>``) for reproducibility audits.

Exit status: 0 success, 1 validation error (bad arguments, config, or
files), 2 numerical failure (aborted training, failed gradient check).

Heavy imports happen inside the command handlers so that ``--threads``
(default 1, for determinism) can pin the BLAS thread-count environment
variables before numpy first loads.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
import time
from pathlib import Path

__all__ = ["main", "build_parser"]

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


class _Parser(argparse.ArgumentParser):
    # exit code 1 on usage errors; argparse's default of 2 would collide
    # with the numerical-failure code.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="INI config file")
    common.add_argument(
        "--set",
        metavar="SECTION.KEY=VALUE",
        action="append",
        default=[],
        dest="overrides",
        help="override a config value (repeatable; wins over --config)",
    )
    common.add_argument("--run-dir", metavar="DIR", help="artifact directory (default out/<timestamp>-s<seed>)")
    common.add_argument(
        "--threads",
        type=int,
        default=1,
        metavar="N",
        help="BLAS/OpenMP thread cap, default 1 (deterministic)",
    )

    parser = _Parser(prog="physden", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset + manifest")
    sub.add_parser("train", parents=[common], help="two-phase training on a dataset manifest")
    sub.add_parser("denoise", parents=[common], help="run a checkpoint on one window CSV")
    sub.add_parser("eval", parents=[common], help="metrics for original vs denoised windows")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    sub.add_parser("bias-demo", parents=[common], help="rec-only vs physics bias comparison")
    return parser


# ---------------------------------------------------------------------------
# Config plumbing


def _load_config(args) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ValueError(f"config file not found: {path}")
        cp.read(path)
    for item in args.overrides:
        if "=" not in item:
            raise ValueError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        if "." not in key:
            raise ValueError(f"--set key must be SECTION.KEY, got {key!r}")
        section, _, option = key.partition(".")
        if section not in cp:
            cp[section] = {}
        cp[section][option] = value
    return cp


def _get(cp, section: str, key: str, default: str | None = None) -> str | None:
    if section in cp and key in cp[section]:
        return cp[section][key]
    return default


def _require(cp, section: str, key: str) -> str:
    value = _get(cp, section, key)
    if value is None or value == "":
        raise ValueError(f"missing required config value [{section}] {key}")
    return value


def _get_float(cp, section: str, key: str, default: float | None) -> float | None:
    raw = _get(cp, section, key)
    if raw is None or raw == "":
        if raw == "":
            raise ValueError(f"[{section}] {key}: expected a number, got an empty value")
        return default
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"[{section}] {key}: expected a number, got {raw!r}") from None


def _get_int(cp, section: str, key: str, default: int) -> int:
    raw = _get(cp, section, key)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"[{section}] {key}: expected an integer, got {raw!r}") from None


def _get_bool(cp, section: str, key: str, default: bool) -> bool:
    raw = _get(cp, section, key)
    if raw is None or raw == "":
        return default
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"[{section}] {key}: expected a boolean, got {raw!r}")


def _run_dir(args, seed: int) -> Path:
    if args.run_dir:
        path = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
        path = Path("out") / f"{stamp}-s{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _train_config(cp):
    from .data import NoiseSpec
    from .training import TrainConfig

    widths_raw = _get(cp, "train", "widths", "128,256,128")
    try:
        widths = tuple(int(v) for v in widths_raw.split(","))
    except ValueError:
        raise ValueError(f"[train] widths: expected W1,W2,W3 integers, got {widths_raw!r}") from None
    noise = NoiseSpec(
        kind=_get(cp, "train", "noise_kind", "gaussian"),
        scale=_get_float(cp, "train", "noise_scale", 0.1),
        mask_fraction=_get_float(cp, "train", "mask_fraction", 0.0),
    )
    return TrainConfig(
        lr=_get_float(cp, "train", "lr", 1e-4),
        batch_size=_get_int(cp, "train", "batch_size", 16),
        epochs_total=_get_int(cp, "train", "epochs_total", 50),
        pretrain_fraction=_get_float(cp, "train", "pretrain_fraction", 0.2),
        lambda_mode=_get(cp, "train", "lambda_mode", "adaptive"),
        lambda_value=_get_float(cp, "train", "lambda_value", 1.0),
        noise=noise,
        seed=_get_int(cp, "train", "seed", 0),
        deterministic=_get_bool(cp, "train", "deterministic", True),
        widths=widths,
        predict_residual=_get_bool(cp, "train", "predict_residual", False),
    )


# ---------------------------------------------------------------------------
# Commands


def _cmd_simulate(args, cp) -> int:
    from .data import SimulateConfig, generate_dataset, save_dataset
    from .metrics import physics_metrics

    bias_frac: dict[str, float] = {}
    raw_bias = _get(cp, "data", "bias_frac", "")
    if raw_bias:
        for part in raw_bias.split(","):
            name, sep, frac = part.partition(":")
            if not sep:
                raise ValueError(f"[data] bias_frac: expected name:frac pairs, got {part!r}")
            try:
                bias_frac[name.strip()] = float(frac)
            except ValueError:
                raise ValueError(f"[data] bias_frac: bad fraction in {part!r}") from None

    cfg = SimulateConfig(
        family=_get(cp, "data", "family", "ins"),
        count=_get_int(cp, "data", "count", 8),
        duration=_get_float(cp, "data", "duration", None),
        dt=_get_float(cp, "data", "dt", None),
        seed=_get_int(cp, "data", "seed", 0),
        noise_kind=_get(cp, "data", "noise_kind", "gaussian"),
        noise_scale=_get_float(cp, "data", "noise_scale", 0.1),
        mask_fraction=_get_float(cp, "data", "mask_fraction", 0.0),
        bias_frac=bias_frac,
        motion_scale=_get_float(cp, "data", "motion_scale", 1.0),
        rotation_scale=_get_float(cp, "data", "rotation_scale", 0.5),
        n_modes=_get_int(cp, "data", "n_modes", 4),
        room_volume=_get_float(cp, "data", "room_volume", 64.0),
        emission_rate=_get_float(cp, "data", "emission_rate", 10.0),
        initial_ppm=_get_float(cp, "data", "initial_ppm", 420.0),
        flow=_get_float(cp, "data", "flow", 0.03),
        inflow_ppm=_get_float(cp, "data", "inflow_ppm", 420.0),
        outdoor_offset=_get_float(cp, "data", "outdoor_offset", 0.0),
        mass_flow=_get_float(cp, "data", "mass_flow", 1.0),
        specific_heat=_get_float(cp, "data", "specific_heat", 1006.0),
    )
    run_dir = _run_dir(args, cfg.seed)
    dataset = generate_dataset(cfg)
    manifest = save_dataset(dataset, run_dir / "data")

    worst = max(physics_metrics(w, dataset.spec)[0] for w in dataset.clean)
    print(f"wrote {len(dataset.windows)} {cfg.family} windows to {manifest.parent}")
    print(f"manifest: {manifest}")
    print(f"clean self-check phys_mse (worst window): {worst:.6g}")
    return 0


def _cmd_train(args, cp) -> int:
    from .data import load_manifest
    from .model import save_checkpoint
    from .training import TrainingAborted, train, write_log_csv

    manifest = _require(cp, "data", "manifest")
    dataset = load_manifest(manifest)
    cfg = _train_config(cp)
    run_dir = _run_dir(args, cfg.seed)

    denoise_raw = _get(cp, "model", "denoise", "")
    channels = [c for c in denoise_raw.split(",") if c] or dataset.denoise_channels

    checkpoint = run_dir / "model.npz"
    log_path = run_dir / "train_log.csv"
    try:
        result = train(
            dataset.train_windows,
            dataset.spec,
            cfg,
            denoise_channels=channels,
            norm_stats=dataset.norm_stats,
        )
    except TrainingAborted as err:
        save_checkpoint(err.denoiser, checkpoint)
        write_log_csv(err.log, log_path)
        print(f"last good checkpoint: {checkpoint}", file=sys.stderr)
        raise
    save_checkpoint(result.denoiser, checkpoint)
    write_log_csv(result.log, log_path)

    first, last = result.log[0], result.log[-1]
    print(f"trained {cfg.epochs_total} epochs on {len(dataset.train_windows)} windows")
    print(f"l_rec: {first.l_rec:.6g} -> {last.l_rec:.6g}")
    if last.l_phy is not None:
        print(f"l_phy: {last.l_phy:.6g} (lambda {last.lam:.6g})")
    print(f"checkpoint: {checkpoint}")
    print(f"log: {log_path}")
    return 0


def _cmd_denoise(args, cp) -> int:
    from .data import load_csv, save_csv
    from .model import denoise, load_checkpoint

    checkpoint = Path(_require(cp, "model", "checkpoint"))
    input_csv = Path(_require(cp, "data", "input"))
    if not checkpoint.exists():
        raise ValueError(f"checkpoint not found: {checkpoint}")
    if not input_csv.exists():
        raise ValueError(f"input CSV not found: {input_csv}")
    denoiser = load_checkpoint(checkpoint)
    window = load_csv(input_csv)
    missing = [c for c in denoiser.channels if c not in window.channels]
    if missing:
        raise ValueError(
            f"input lacks channels: {', '.join(missing)} "
            f"(checkpoint reconstructs {', '.join(denoiser.channels)})"
        )

    restored = denoise(denoiser, window)
    run_dir = _run_dir(args, 0)
    out_path = Path(_get(cp, "output", "file", "") or run_dir / "denoised.csv")
    save_csv(restored, out_path)
    print(f"wrote {out_path}")

    repeats = _get_int(cp, "output", "timing_repeats", 0)
    if repeats > 0:
        start = time.perf_counter()
        for _ in range(repeats):
            denoise(denoiser, window)
        mean_ms = (time.perf_counter() - start) / repeats * 1e3
        print(f"timing: {mean_ms:.3f} ms mean over {repeats} repeats "
              f"({window.values.shape[0]} channels x {window.n_timesteps} timesteps)")
    return 0


def _cmd_eval(args, cp) -> int:
    from .data import load_manifest
    from .metrics import evaluate, format_report_table, write_report_csv
    from .model import denoise, load_checkpoint

    manifest = _require(cp, "data", "manifest")
    checkpoint = Path(_require(cp, "model", "checkpoint"))
    if not checkpoint.exists():
        raise ValueError(f"checkpoint not found: {checkpoint}")
    dataset = load_manifest(manifest)
    denoiser = load_checkpoint(checkpoint)

    subset = _get(cp, "data", "subset", "all")
    if subset == "train":
        idx = dataset.split[0]
    elif subset == "test":
        idx = dataset.split[1]
    elif subset == "all":
        idx = list(range(len(dataset.windows)))
    else:
        raise ValueError(f"[data] subset must be train|test|all, got {subset!r}")

    noisy = [dataset.windows[i] for i in idx]
    clean = [dataset.clean[i] for i in idx] if dataset.clean else None
    if clean is None:
        print("warning: manifest has no clean references; reconstruction metrics omitted", file=sys.stderr)
    restored = [denoise(denoiser, w) for w in noisy]

    reports = [
        evaluate("original", noisy, dataset.spec, clean, channels=denoiser.channels),
        evaluate("denoised", restored, dataset.spec, clean, channels=denoiser.channels),
    ]
    run_dir = _run_dir(args, 0)
    report_path = run_dir / "report.csv"
    write_report_csv(reports, report_path)
    print(format_report_table(reports))
    print(f"\nreport: {report_path}")
    return 0


def _cmd_gradcheck(args, cp) -> int:
    from .gradcheck import run_suite

    seed = _get_int(cp, "gradcheck", "seed", 0)
    instances = _get_int(cp, "gradcheck", "instances", 20)
    tol = _get_float(cp, "gradcheck", "tolerance", 1e-5)
    results = run_suite(seed=seed, instances=instances, rel_tol=tol)
    failed = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<22} instances {r.instances:>3}  max rel err {r.max_rel_err:.3e}  tol {r.tol:.0e}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return 2
    print(f"all {len(results)} operation families passed")
    return 0


def _cmd_bias_demo(args, cp) -> int:
    import csv as _csv

    from .training import bias_demo

    eta = _get_float(cp, "demo", "eta_frac", 0.5)
    n_windows = _get_int(cp, "demo", "n_windows", 48)
    seed = _get_int(cp, "demo", "seed", 11)
    report = bias_demo(eta, n_windows=n_windows, seed=seed)

    run_dir = _run_dir(args, seed)
    print(
        f"inherent bias on {report.channel}: {report.eta_frac:g} of channel std "
        f"({report.eta_abs:.6g} abs, std {report.channel_std:.6g}), {report.n_windows} windows"
    )
    print(
        f"rec-only mean error: {report.rec_mean_error:+.6g} "
        f"({report.rec_error_frac:+.3f} std, stderr {report.rec_stderr:.3g})"
    )
    print(
        f"physics  mean error: {report.phys_mean_error:+.6g} "
        f"({report.phys_error_frac:+.3f} std, stderr {report.phys_stderr:.3g})"
    )
    out = run_dir / "bias_demo.csv"
    with out.open("w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["model", "mean_error", "stderr", "error_frac_of_std"])
        writer.writerow(["rec-only", f"{report.rec_mean_error:.17g}", f"{report.rec_stderr:.17g}", f"{report.rec_error_frac:.17g}"])
        writer.writerow(["physics", f"{report.phys_mean_error:.17g}", f"{report.phys_stderr:.17g}", f"{report.phys_error_frac:.17g}"])
    print(f"report: {out}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "denoise": _cmd_denoise,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "bias-demo": _cmd_bias_demo,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = max(1, args.threads)
    for var in _THREAD_VARS:
        os.environ[var] = str(threads)

    from .autodiff import NumericalError
    from .training import TrainingAborted

    try:
        cp = _load_config(args)
        return _COMMANDS[args.command](args, cp)
    except TrainingAborted as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
