"""Figure rendering for experiment reports.

Figures are written next to the delimited output by the CLI's report
path; nothing here is needed for the numerical results themselves.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .experiments import NAIVE, ExperimentReport

_KIND_STYLE = {
    "naive": dict(color="0.3", linestyle="--"),
    "target": dict(color="tab:blue"),
    "transfer": dict(color="tab:orange"),
    "zero_shot": dict(color="tab:green"),
}


def _cells_by_kind(report: ExperimentReport, axis: str):
    out = {}
    for cell in report.cells:
        if cell.status != "ok":
            continue
        out.setdefault(cell.kind, []).append((cell.axes[axis], cell.rmse))
    for kind in out:
        out[kind].sort()
    return out


def plot_rmse_curve(report: ExperimentReport, axis: str, path,
                    xlabel: str | None = None) -> None:
    """RMSE of each model kind against one grid axis."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for kind, points in _cells_by_kind(report, axis).items():
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.plot(xs, ys, marker="o", label=kind,
                **_KIND_STYLE.get(kind, {}))
    ax.set_xlabel(xlabel or axis)
    ax.set_ylabel("scaled RMSE")
    ax.set_title(report.name.replace("_", " "))
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_seasonality_heatmap(report: ExperimentReport, path,
                             kind: str = "target") -> None:
    """Skill-score matrix (rows: months of data, columns: terminal month)."""
    rows = sorted({c.axes["months"] for c in report.cells})
    cols = sorted({c.axes["terminal_month"] for c in report.cells},
                  reverse=True)
    grid = [[math.nan for _ in cols] for _ in rows]
    for ri, r in enumerate(rows):
        for ci, col in enumerate(cols):
            try:
                cell = report.cell(kind, months=r, terminal_month=col)
                naive = report.cell(NAIVE, months=r, terminal_month=col)
            except KeyError:
                continue
            if cell.status == "ok" and naive.status == "ok":
                grid[ri][ci] = 100.0 * (cell.rmse / naive.rmse - 1.0)

    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(cols),
                                    1.0 + 0.5 * len(rows)))
    im = ax.imshow(grid, cmap="RdYlGn_r", aspect="auto")
    ax.set_xticks(range(len(cols)), cols, rotation=45, ha="right")
    ax.set_yticks(range(len(rows)), [f"{r}m" for r in rows])
    ax.set_xlabel("terminal month")
    ax.set_ylabel("months of target data")
    for ri in range(len(rows)):
        for ci in range(len(cols)):
            v = grid[ri][ci]
            ax.text(ci, ri, "n.a." if math.isnan(v) else f"{v:.0f}%",
                    ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, label="skill vs naive (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_forecast_day(timestamps, values_kw, path) -> None:
    """A single 24-hour forecast as a step plot."""
    fig, ax = plt.subplots(figsize=(6.4, 3.2))
    ax.step(range(len(values_kw)), values_kw, where="mid")
    ax.set_xlabel("hour of forecast day")
    ax.set_ylabel("PV power [kW]")
    ax.set_xticks(range(0, len(values_kw), 3))
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_training_history(history, path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(history.train_loss, label="train")
    ax.plot(history.val_loss, label="validation")
    if history.best_epoch >= 0:
        ax.axvline(history.best_epoch, color="0.5", linestyle=":",
                   label=f"best epoch {history.best_epoch}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
