"""Render paper-style figures from experiment CSV files.

Pure post-processing: every function reads the documented CSV contracts
(band fields with ``x[,y],mean,lo95,hi95`` columns, chain files with
``iter,<params...>,log_post,accepted``, convergence tables with
``h,error``), validates them, and writes an image.  Inputs are never
modified, and a fixed style plus pinned metadata make repeated renders
byte-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

HISTOGRAM_BINS = 50
_STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
}
_PNG_METADATA = {"Software": "statfem-plot"}


class ParseError(ValueError):
    """Malformed input file; the message carries the offending line number."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: what to draw, from which files, to where."""

    kind: str  # band | histogram | loglog | ranking
    inputs: tuple[Path, ...]
    output: Path
    title: str | None = None
    ref_lines: tuple[float, ...] = ()
    grid: tuple[int, int] | None = None
    burn_in: float = 0.3
    param: str | None = None

    def __post_init__(self):
        if self.kind not in ("band", "histogram", "loglog", "ranking"):
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise ValueError("at least one input file required")
        missing = [str(p) for p in self.inputs if not Path(p).is_file()]
        if missing:
            raise ValueError(f"missing input files: {missing}")


@dataclass(frozen=True)
class BandSeries:
    label: str
    coords: np.ndarray  # abscissa used for plotting (x, or distance along a path)
    mean: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray


def _float_row(row: list[str], path, line_no: int) -> list[float]:
    try:
        return [float(v) for v in row]
    except ValueError as err:
        raise ParseError(f"{path}:{line_no}: {err}") from None


def read_field_csv(path) -> BandSeries:
    """Parse and validate a band file; the band must contain its mean."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise ParseError(f"{path}:1: empty file")
    header = [h.strip() for h in rows[0]]
    if header not in (["x", "mean", "lo95", "hi95"], ["x", "y", "mean", "lo95", "hi95"]):
        raise ParseError(f"{path}:1: unexpected header {header}")
    two_d = header[1] == "y"
    data = np.array(
        [_float_row(row, path, i) for i, row in enumerate(rows[1:], start=2) if row]
    )
    if data.size == 0:
        raise ParseError(f"{path}:2: no data rows")
    coords = data[:, 0] if not two_d else np.linalg.norm(data[:, :2] - data[0, :2], axis=1)
    mean, lo, hi = data[:, -3], data[:, -2], data[:, -1]
    bad = np.flatnonzero((lo > mean + 1e-12) | (mean > hi + 1e-12))
    if bad.size:
        raise ValueError(
            f"{path}: row {bad[0] + 2}: band [{lo[bad[0]]}, {hi[bad[0]]}] "
            f"does not contain the mean {mean[bad[0]]}"
        )
    return BandSeries(label=path.stem, coords=coords, mean=mean, lo95=lo, hi95=hi)


@dataclass(frozen=True)
class ChainTable:
    names: tuple[str, ...]
    samples: np.ndarray  # post burn-in, one column per parameter
    label: str


def read_chain_csv(path, burn_in: float = 0.3) -> ChainTable:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows or rows[0][:1] != ["iter"] or rows[0][-2:] != ["log_post", "accepted"]:
        raise ParseError(f"{path}:1: not a chain file")
    names = tuple(rows[0][1:-2])
    data = np.array(
        [_float_row(row[1:-2], path, i) for i, row in enumerate(rows[1:], start=2) if row]
    )
    start = int(burn_in * len(data))
    kept = data[start:]
    if kept.shape[0] == 0:
        raise ValueError(f"{path}: burn-in fraction {burn_in} removes every sample")
    return ChainTable(names=names, samples=kept, label=path.stem)


def read_convergence_csv(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows or [h.strip() for h in rows[0]] != ["h", "error"]:
        raise ParseError(f"{path}:1: expected header 'h,error'")
    data = np.array(
        [_float_row(row, path, i) for i, row in enumerate(rows[1:], start=2) if row]
    )
    if data.size == 0:
        raise ParseError(f"{path}:2: no data rows")
    if np.any(data <= 0):
        raise ValueError(f"{path}: log-log plotting needs strictly positive values")
    return data[:, 0], data[:, 1]


def _save(fig, output) -> Path:
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(output, metadata=_PNG_METADATA if output.suffix == ".png" else None)
    plt.close(fig)
    return output


def plot_band(inputs, output, *, grid=None, title=None, ref_lines=()) -> dict:
    """Mean curves with shaded 95% regions.

    One overlaid axis by default; with ``grid=(rows, cols)`` each file gets
    its own panel in row-major order, the layout used for sensor-by-reading
    sweeps.
    """
    series = [read_field_csv(p) for p in inputs]
    with plt.rc_context(_STYLE):
        if grid is None:
            fig, ax = plt.subplots(figsize=(5.0, 3.4))
            axes = [ax] * len(series)
            panels = 1
        else:
            rows, cols = grid
            if rows * cols < len(series):
                raise ValueError(f"grid {rows}x{cols} too small for {len(series)} files")
            fig, grid_axes = plt.subplots(
                rows, cols, figsize=(2.6 * cols, 2.0 * rows), squeeze=False,
                sharex=True, sharey=True,
            )
            flat = grid_axes.ravel()
            axes = list(flat[: len(series)])
            for extra in flat[len(series):]:
                extra.set_visible(False)
            panels = len(series)
        for k, (s, ax) in enumerate(zip(series, axes)):
            color = f"C{k % 10}" if grid is None else "C0"
            ax.fill_between(s.coords, s.lo95, s.hi95, alpha=0.3, color=color, linewidth=0)
            ax.plot(s.coords, s.mean, color=color, label=s.label)
            if grid is not None:
                ax.set_title(s.label, fontsize=7)
        for value in ref_lines:
            for ax in set(axes):
                ax.axhline(value, color="k", linestyle=":", linewidth=0.8)
        if grid is None and len(series) > 1:
            axes[0].legend()
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        path = _save(fig, output)
    return {"output": path, "panels": panels, "series": len(series)}


def plot_histogram(inputs, output, *, burn_in=0.3, param=None, title=None, ref_lines=()) -> dict:
    """Normalised post-burn-in histograms, one overlay per chain file."""
    tables = [read_chain_csv(p, burn_in) for p in inputs]
    name = param or tables[0].names[0]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        integrals = []
        for k, table in enumerate(tables):
            if name not in table.names:
                raise ValueError(f"{table.label}: no parameter named {name!r}")
            values = table.samples[:, table.names.index(name)]
            counts, edges = np.histogram(values, bins=HISTOGRAM_BINS, density=True)
            integral = float(np.sum(counts * np.diff(edges)))
            if abs(integral - 1.0) > 1e-9:
                raise ValueError(f"{table.label}: histogram integrates to {integral}")
            integrals.append(integral)
            ax.stairs(counts, edges, fill=True, alpha=0.45, color=f"C{k % 10}", label=table.label)
        for value in ref_lines:
            ax.axvline(value, color="r", linewidth=0.9)
        ax.set_xlabel(name)
        ax.set_ylabel("density")
        if len(tables) > 1:
            ax.legend()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        path = _save(fig, output)
    return {"output": path, "parameter": name, "integrals": integrals}


def fit_slope(h: np.ndarray, error: np.ndarray) -> float:
    return float(np.polyfit(np.log(h), np.log(error), 1)[0])


def plot_convergence(inputs, output, *, title=None) -> dict:
    """Log-log error curves with the least-squares slope annotated."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        slopes = {}
        for k, p in enumerate(inputs):
            h, error = read_convergence_csv(p)
            slope = fit_slope(h, error)
            slopes[Path(p).stem] = slope
            ax.loglog(h, error, "o-", color=f"C{k % 10}",
                      label=f"{Path(p).stem} (slope {slope:.2f})")
        ax.set_xlabel("element size")
        ax.set_ylabel("relative error")
        ax.legend()
        if title:
            ax.set_title(title)
        fig.tight_layout()
        path = _save(fig, output)
    return {"output": path, "slopes": slopes}


def plot_ranking(inputs, output, *, title=None) -> dict:
    """Bar chart of candidate log posteriors with spread bars."""
    labels, means, stds = [], [], []
    for p in inputs:
        path = Path(p)
        with path.open(newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        if not rows or rows[0] != ["candidate", "log_post_mean", "log_post_std", "rank"]:
            raise ParseError(f"{path}:1: not a ranking file")
        for i, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            labels.append(row[0] if len(inputs) == 1 else f"{path.stem}:{row[0]}")
            mean, std, _ = _float_row(row[1:], path, i)
            means.append(mean)
            stds.append(std)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(labels)), 3.2))
        ax.bar(range(len(labels)), means, yerr=stds, capsize=3, color="C0")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
        ax.set_ylabel("log posterior")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        path = _save(fig, output)
    return {"output": path, "candidates": labels}


def render(spec: FigureSpec) -> dict:
    """Dispatch one figure request."""
    if spec.kind == "band":
        return plot_band(
            spec.inputs, spec.output, grid=spec.grid, title=spec.title, ref_lines=spec.ref_lines
        )
    if spec.kind == "histogram":
        return plot_histogram(
            spec.inputs,
            spec.output,
            burn_in=spec.burn_in,
            param=spec.param,
            title=spec.title,
            ref_lines=spec.ref_lines,
        )
    if spec.kind == "loglog":
        return plot_convergence(spec.inputs, spec.output, title=spec.title)
    return plot_ranking(spec.inputs, spec.output, title=spec.title)
