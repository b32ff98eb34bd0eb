"""Matplotlib rendering of run and sweep outputs.

Figures are a convenience view over the delimited outputs; the CSV files
remain the canonical interface.  Everything renders through the Agg
backend so runs work headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def render_run_figures(metrics_rows: list[tuple], out_dir: str | Path) -> list[Path]:
    """Render the standard per-run figures; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = [r[0] for r in metrics_rows]
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t, [100.0 * r[3] for r in metrics_rows], lw=1.2, color="tab:blue")
    ax.set_xlabel("virtual time (s)")
    ax.set_ylabel("connections in MCT (%)")
    ax.set_title("Migrated-connection share over time")
    ax.grid(alpha=0.3)
    path = out_dir / "mct_fraction.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t, [r[1] for r in metrics_rows], label="active connections", lw=1.2)
    ax.plot(t, [r[4] for r in metrics_rows], label="SCT entries", lw=1.2)
    ax.plot(t, [r[2] for r in metrics_rows], label="MCT entries", lw=1.2)
    ax.set_xlabel("virtual time (s)")
    ax.set_ylabel("entries")
    ax.set_yscale("symlog")
    ax.legend()
    ax.grid(alpha=0.3)
    path = out_dir / "table_occupancy.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t, [r[13] for r in metrics_rows], label="pcc violations", lw=1.2)
    ax.plot(t, [r[11] for r in metrics_rows], label="trapped SYNs", lw=1.2)
    ax.plot(t, [r[12] for r in metrics_rows], label="migrated signatures", lw=1.2)
    ax.set_xlabel("virtual time (s)")
    ax.set_ylabel("cumulative count")
    ax.set_yscale("symlog")
    ax.legend()
    ax.grid(alpha=0.3)
    path = out_dir / "cumulative_counters.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written


def render_sweep_figure(rows, out_dir: str | Path) -> Path:
    """One figure per sweep: the headline metric against the swept value."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = [r.value for r in rows]
    x = range(len(rows))

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(x, [r.max_rounds for r in rows], "o-", color="tab:red")
    ax1.set_xticks(list(x), labels)
    ax1.set_xlabel(rows[0].param if rows else "value")
    ax1.set_ylabel("max migration rounds")
    ax1.grid(alpha=0.3)
    ax2.plot(x, [r.mean_c2 for r in rows], "s-", color="tab:blue")
    ax2.set_xticks(list(x), labels)
    ax2.set_xlabel(rows[0].param if rows else "value")
    ax2.set_ylabel("mean second-round copies")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / "sweep.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
