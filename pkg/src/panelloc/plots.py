"""SVG figure rendering from harness CSV output.

Dispatches on the CSV header: a per-timestep RMSE table yields the banded
time plot, a sweep table yields panel-count, benchmark-comparison and latency
figures.  Output is plain standalone SVG.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import RMSE_TIME_COLUMNS, SWEEP_COLUMNS


def _read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        if reader.fieldnames is None or not rows:
            raise ValueError(f"{path}: empty CSV")
        return list(reader.fieldnames), rows


def render_rmse_time(rows: list[dict], out: Path) -> Path:
    t = [int(r["time"]) for r in rows]
    rmse = [float(r["rmse"]) for r in rows]
    q10 = [float(r["q10"]) for r in rows]
    q90 = [float(r["q90"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.fill_between(t, q10, q90, alpha=0.3, label="80% sample-quantile band")
    ax.plot(t, rmse, lw=1.5, label="RMSE")
    ax.set_xlabel("time step")
    ax.set_ylabel("position error (m)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def _ok(rows):
    return [r for r in rows if r.get("status", "ok") == "ok" and r.get("rmse")]


def render_rmse_vs_panels(rows: list[dict], out: Path) -> Path:
    rows = _ok(rows)
    fig, ax = plt.subplots(figsize=(7, 4))
    n_ps = sorted({int(r["N_p"]) for r in rows})
    for n_p in n_ps:
        pts = sorted(
            ((int(r["J"]), float(r["rmse"])) for r in rows if int(r["N_p"]) == n_p and r["mode"] == "los"),
        )
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"N_p={n_p}")
    ax.set_xlabel("number of panels")
    ax.set_ylabel("RMSE (m)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def render_mode_comparison(rows: list[dict], out: Path) -> Path:
    rows = _ok(rows)
    js = sorted({int(r["J"]) for r in rows})
    modes = sorted({r["mode"] for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(modes), 1)
    for i, mode in enumerate(modes):
        vals = []
        for j in js:
            sel = [float(r["rmse"]) for r in rows if int(r["J"]) == j and r["mode"] == mode]
            vals.append(vals_mean(sel) if sel else float("nan"))
        ax.bar([k + i * width for k in range(len(js))], vals, width=width, label=mode)
    ax.set_xticks([k + width * (len(modes) - 1) / 2 for k in range(len(js))])
    ax.set_xticklabels([str(j) for j in js])
    ax.set_xlabel("number of panels")
    ax.set_ylabel("RMSE (m)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def vals_mean(xs):
    return sum(xs) / len(xs)


def render_latency_vs_particles(rows: list[dict], out: Path) -> Path:
    rows = [r for r in _ok(rows) if r.get("mean_chain_latency_s")]
    js = sorted({int(r["J"]) for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4))
    for j in js:
        pts = sorted(
            ((int(r["N_p"]), float(r["mean_chain_latency_s"])) for r in rows if int(r["J"]) == j),
        )
        if pts:
            ax.plot([p[0] for p in pts], [1e3 * p[1] for p in pts], marker="s", label=f"J={j}")
    ax.set_xlabel("particle count")
    ax.set_ylabel("chain latency (ms)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def render_plots(csv_path, out_dir) -> list[Path]:
    """Render every figure applicable to the given CSV; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header, rows = _read_csv(csv_path)
    written = []
    if header == RMSE_TIME_COLUMNS:
        written.append(render_rmse_time(rows, out_dir / "rmse_vs_time.svg"))
    elif header == SWEEP_COLUMNS:
        written.append(render_rmse_vs_panels(rows, out_dir / "rmse_vs_panels.svg"))
        if len({r["mode"] for r in rows}) > 1:
            written.append(render_mode_comparison(rows, out_dir / "mode_comparison.svg"))
        written.append(render_latency_vs_particles(rows, out_dir / "latency_vs_particles.svg"))
    else:
        raise ValueError(f"{csv_path}: unrecognized CSV header {header}")
    return written
