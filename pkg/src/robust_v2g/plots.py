"""PNG figures written next to the CSV reports."""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, dpi=110, format="png", metadata=_META)
    plt.close(fig)
    os.replace(tmp, path)
    return path


def plot_cumulative_value(long: pd.DataFrame, path):
    """Cumulative value of V2G per variant from the long-format frame."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for variant, grp in long.groupby("variant", sort=True):
        ax.plot(pd.to_datetime(grp["date"]), grp["value"], label=variant)
    ax.set_ylabel("cumulative value (EUR)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.autofmt_xdate()
    fig.tight_layout()
    return _save(fig, path)


def plot_decision(decision: pd.DataFrame, envelope: pd.DataFrame, path, y_min: float, y_max: float):
    """Bids per interval and the worst-case SoC envelope."""
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    k = decision["interval"].to_numpy()
    a1.step(k, decision["x_b_kw"], where="post", label="x_b")
    a1.step(k, decision["x_r_kw"], where="post", label="x_r")
    a1.set_ylabel("kW")
    a1.legend()
    a1.grid(alpha=0.3)
    a2.fill_between(envelope["interval"], envelope["soc_lo_kwh"], envelope["soc_hi_kwh"], alpha=0.4, label="worst-case SoC")
    a2.axhline(y_min, color="k", lw=0.8)
    a2.axhline(y_max, color="k", lw=0.8)
    a2.set_xlabel("interval")
    a2.set_ylabel("kWh")
    a2.legend()
    a2.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(table: pd.DataFrame, axes: list, path, metric: str = "value_eur"):
    """Metric against the first axis, one line per combination of the others."""
    fig, ax = plt.subplots(figsize=(7, 4))
    x = axes[0]
    rest = axes[1:]
    groups = table.groupby(rest, sort=True) if rest else [((), table)]
    for key, grp in groups:
        grp = grp.sort_values(x)
        label = ", ".join(f"{a}={v}" for a, v in zip(rest, np.atleast_1d(key))) or metric
        ax.plot(grp[x], grp[metric], marker="o", label=label)
    ax.set_xlabel(x)
    ax.set_ylabel(metric)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_calibration(table: pd.DataFrame, path):
    """Heat map of backtest value over the (p_star, y_star) grid."""
    pivot = table.pivot(index="p_star", columns="y_star", values="value")
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(pivot.to_numpy(), origin="lower", aspect="auto")
    ax.set_xticks(range(pivot.shape[1]), [f"{v:.1f}" for v in pivot.columns])
    ax.set_yticks(range(pivot.shape[0]), [f"{v:.2f}" for v in pivot.index])
    ax.set_xlabel("y_star (kWh)")
    ax.set_ylabel("p_star (EUR/kWh)")
    fig.colorbar(im, ax=ax, label="value (EUR)")
    fig.tight_layout()
    return _save(fig, path)
