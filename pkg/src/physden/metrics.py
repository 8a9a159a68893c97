"""Reconstruction and physics-alignment metrics with CSV/table reporting.

Means are the primary reduction (comparable across window counts); summed
forms are reported alongside. The physics mean-square here is computed from
the same residual arithmetic as the training loss, so the two numbers agree
bitwise on identical inputs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .data import SampleWindow
from .physics import PhysicsSpec, stacked_residual

__all__ = [
    "EvalReport",
    "recon_metrics",
    "physics_metrics",
    "evaluate",
    "REPORT_COLUMNS",
    "write_report_csv",
    "format_report_table",
]


def _values_of(x) -> np.ndarray:
    if isinstance(x, SampleWindow):
        return x.values
    return np.asarray(x, dtype=np.float64)


def recon_metrics(denoised, reference) -> tuple[float, float]:
    """(mean squared error, mean absolute error) between two equal-shape blocks."""
    a = _values_of(denoised)
    b = _values_of(reference)
    if a.shape != b.shape:
        raise ValueError(f"recon_metrics: shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff * diff)), float(np.mean(np.abs(diff)))


def physics_metrics(window: SampleWindow, spec: PhysicsSpec) -> tuple[float, float]:
    """(mean squared, mean absolute) residual entries of the given physics family."""
    r = stacked_residual(Tensor(window.values), spec).data
    return float(np.mean(r * r)), float(np.mean(np.abs(r)))


@dataclass
class EvalReport:
    """Aggregate metrics over a set of windows, under one label.

    Reconstruction fields are None when no clean reference was available.
    per_channel maps channel name to (mse, mae) of that row alone.
    """

    label: str
    n_windows: int
    recon_mse: float | None
    recon_mae: float | None
    recon_mse_sum: float | None
    recon_mae_sum: float | None
    phys_mse: float
    phys_mae: float
    phys_mse_sum: float
    phys_mae_sum: float
    per_channel: dict[str, tuple[float, float]] | None = None


def evaluate(
    label: str,
    windows: Sequence[SampleWindow],
    spec: PhysicsSpec,
    clean: Sequence[SampleWindow] | None = None,
    channels: Sequence[str] | None = None,
) -> EvalReport:
    """Pool metrics over windows.

    Reconstruction compares against the paired clean windows on the given
    channel subset (default: all channels); physics metrics always cover the
    full window. Entries are pooled across windows before reducing, so
    windows of different lengths weigh by their size.
    """
    windows = list(windows)
    if not windows:
        raise ValueError("evaluate: need at least one window")
    if clean is not None and len(clean) != len(windows):
        raise ValueError(f"evaluate: {len(clean)} clean references for {len(windows)} windows")

    sq_sum = 0.0
    abs_sum = 0.0
    n_entries = 0
    per_channel: dict[str, tuple[float, float]] | None = None
    if clean is not None:
        names = list(channels) if channels is not None else list(windows[0].channels)
        ch_sq = {c: 0.0 for c in names}
        ch_abs = {c: 0.0 for c in names}
        ch_n = {c: 0 for c in names}
        for w, ref in zip(windows, clean):
            for c in names:
                diff = w.row(c) - ref.row(c)
                ch_sq[c] += float(np.sum(diff * diff))
                ch_abs[c] += float(np.sum(np.abs(diff)))
                ch_n[c] += diff.size
                sq_sum += float(np.sum(diff * diff))
                abs_sum += float(np.sum(np.abs(diff)))
                n_entries += diff.size
        per_channel = {c: (ch_sq[c] / ch_n[c], ch_abs[c] / ch_n[c]) for c in names}

    phys_sq = 0.0
    phys_abs = 0.0
    phys_n = 0
    for w in windows:
        r = stacked_residual(Tensor(w.values), spec).data
        phys_sq += float(np.sum(r * r))
        phys_abs += float(np.sum(np.abs(r)))
        phys_n += r.size

    return EvalReport(
        label=label,
        n_windows=len(windows),
        recon_mse=None if clean is None else sq_sum / n_entries,
        recon_mae=None if clean is None else abs_sum / n_entries,
        recon_mse_sum=None if clean is None else sq_sum,
        recon_mae_sum=None if clean is None else abs_sum,
        phys_mse=phys_sq / phys_n,
        phys_mae=phys_abs / phys_n,
        phys_mse_sum=phys_sq,
        phys_mae_sum=phys_abs,
        per_channel=per_channel,
    )


REPORT_COLUMNS = [
    "label",
    "n_windows",
    "recon_mse",
    "recon_mae",
    "recon_mse_sum",
    "recon_mae_sum",
    "phys_mse",
    "phys_mae",
    "phys_mse_sum",
    "phys_mae_sum",
]


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.17g}"


def write_report_csv(reports: Sequence[EvalReport], path) -> None:
    """One row per report, columns exactly REPORT_COLUMNS."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow(
                [
                    r.label,
                    r.n_windows,
                    _fmt(r.recon_mse),
                    _fmt(r.recon_mae),
                    _fmt(r.recon_mse_sum),
                    _fmt(r.recon_mae_sum),
                    _fmt(r.phys_mse),
                    _fmt(r.phys_mae),
                    _fmt(r.phys_mse_sum),
                    _fmt(r.phys_mae_sum),
                ]
            )


def format_report_table(reports: Sequence[EvalReport]) -> str:
    """Human-readable side-by-side table, with per-channel breakdown."""

    def cell(v: float | None) -> str:
        return "-" if v is None else f"{v:.6g}"

    lines = []
    header = f"{'label':<12} {'windows':>7} {'recon_mse':>12} {'recon_mae':>12} {'phys_mse':>12} {'phys_mae':>12}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in reports:
        lines.append(
            f"{r.label:<12} {r.n_windows:>7} {cell(r.recon_mse):>12} {cell(r.recon_mae):>12} "
            f"{cell(r.phys_mse):>12} {cell(r.phys_mae):>12}"
        )
    for r in reports:
        if r.per_channel:
            lines.append("")
            lines.append(f"per-channel reconstruction ({r.label}):")
            for name, (mse, mae) in r.per_channel.items():
                lines.append(f"  {name:<10} mse {mse:>12.6g}   mae {mae:>12.6g}")
    return "\n".join(lines)
