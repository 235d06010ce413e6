"""Delimited run outputs and companion figures.

CSV files use a header row and '.' decimals regardless of locale.  Figures
are rendered with the Agg backend straight to PNG next to the CSV they
visualize, so a headless run leaves a self-contained report directory.
"""

import csv
from dataclasses import dataclass

import numpy as np

SWEEP_COLUMNS = (
    "constellation",
    "power_dbm",
    "snr_eff_db",
    "mi_bit_4d",
    "mu4",
    "mu6",
    "source",
    "error",
)

TRACE_COLUMNS = ("iteration", "loss", "mu4", "mu6", "power_dbm")


@dataclass
class SweepRow:
    constellation: str
    power_dbm: float
    snr_eff_db: float = None
    mi_bit_4d: float = None
    mu4: float = None
    mu6: float = None
    source: str = "model"
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_sweep_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, col)) for col in SWEEP_COLUMNS])


def read_sweep_csv(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                SweepRow(
                    constellation=rec["constellation"],
                    power_dbm=float(rec["power_dbm"]),
                    snr_eff_db=float(rec["snr_eff_db"]) if rec["snr_eff_db"] else None,
                    mi_bit_4d=float(rec["mi_bit_4d"]) if rec["mi_bit_4d"] else None,
                    mu4=float(rec["mu4"]) if rec["mu4"] else None,
                    mu6=float(rec["mu6"]) if rec["mu6"] else None,
                    source=rec["source"],
                    error=rec.get("error", ""),
                )
            )
    return rows


def write_trace_csv(trace, path):
    """Training trace, one row per iteration."""
    arr = np.asarray(trace)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in arr:
            writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_constellation_figure(c, path, title=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(c.points.real, c.points.imag, s=18)
    lim = 1.1 * float(np.abs(c.points).max())
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_aspect("equal")
    ax.grid(True, alpha=0.3)
    ax.set_xlabel("in-phase")
    ax.set_ylabel("quadrature")
    if title:
        ax.set_title(title)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_trace_figure(trace, path):
    plt = _pyplot()
    arr = np.asarray(trace)
    fig, axes = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    axes[0].plot(arr[:, 0], arr[:, 1], lw=0.8)
    axes[0].set_ylabel("cross-entropy (nats)")
    axes[0].grid(True, alpha=0.3)
    axes[1].plot(arr[:, 0], arr[:, 2], lw=0.8, label="mu4")
    axes[1].plot(arr[:, 0], arr[:, 3], lw=0.8, label="mu6")
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("moment")
    axes[1].grid(True, alpha=0.3)
    axes[1].legend()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_sweep_figures(rows, out_dir):
    """SNR and MI vs power, one line per (constellation, source)."""
    plt = _pyplot()
    out_dir = str(out_dir)
    groups = {}
    for row in rows:
        if row.failed:
            continue
        groups.setdefault((row.constellation, row.source), []).append(row)
    written = []
    for metric, ylabel, fname in (
        ("snr_eff_db", "effective SNR (dB)", "snr_vs_power.png"),
        ("mi_bit_4d", "MI (bit/4D)", "mi_vs_power.png"),
    ):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (name, source), grp in sorted(groups.items()):
            grp = sorted(grp, key=lambda r: r.power_dbm)
            xs = [r.power_dbm for r in grp]
            ys = [getattr(r, metric) for r in grp]
            ax.plot(xs, ys, marker="o", ms=3, label=f"{name} ({source})")
        ax.set_xlabel("launch power (dBm)")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        if groups:
            ax.legend(fontsize=8)
        path = f"{out_dir}/{fname}"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written
